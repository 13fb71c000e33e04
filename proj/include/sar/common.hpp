#ifndef SAR_COMMON_HPP
#define SAR_COMMON_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace sar {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IntMatrix = Eigen::MatrixXi;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Error taxonomy, mapped to CLI exit codes: invalid input / usage -> 1,
// data or schema problems -> 2, numerical failures -> 3.
class InvalidInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateStateError : public NumericalError {
 public:
  explicit DegenerateStateError(int state)
      : NumericalError("state " + std::to_string(state) +
                       " received zero total responsibility during fitting"),
        state_(state) {}
  int state() const { return state_; }

 private:
  int state_;
};

double log_sum_exp(const double* xs, Eigen::Index n);
double log_sum_exp(const Vector& xs);

// Deterministic seeded generator. All draws are produced by fixed
// algorithms (no libc++-dependent distributions) so that identical seeds
// give identical streams on any build of this code base.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // [0, 1)
  double uniform();
  // standard normal, Box-Muller
  double normal();
  // index drawn from a probability vector (assumed to sum to ~1)
  int categorical(const Vector& probs);
  // integer in [lo, hi] inclusive
  int uniform_int(int lo, int hi);
  std::uint64_t next_u64();

 private:
  std::uint64_t state_;
};

// splitmix64-style mixing, used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

// Runs fn(0..n-1) on up to `jobs` threads. Callers keep per-index outputs
// and reduce in index order, which keeps results independent of the
// thread count. Exceptions are captured and rethrown on the caller.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

// Shortest round-trip decimal form of a double (used by all CSV writers
// so that identical runs emit identical bytes).
std::string format_double(double v);

}  // namespace sar

#endif
