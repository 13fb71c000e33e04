#ifndef SAR_HHMM_HPP
#define SAR_HHMM_HPP

#include "sar/common.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace sar {

// One subject-day (or any fixed-grid window) of aligned continuous and
// discrete channels with per-cell observation masks. `continuous` and
// `discrete` always have n_slots rows, even when a side has no channels.
struct ObservationSequence {
  Matrix continuous;    // T x Mc
  IntMatrix discrete;   // T x Md, symbols in [0, J_m)
  BoolMatrix cont_mask; // true = observed
  BoolMatrix disc_mask;
  double slot_minutes = 10.0;
  int window_start_minutes = 14 * 60;

  Eigen::Index n_slots() const { return continuous.rows(); }
  Eigen::Index n_continuous() const { return continuous.cols(); }
  Eigen::Index n_discrete() const { return discrete.cols(); }
};

// Allocates an all-missing sequence of the given shape.
ObservationSequence make_sequence(Eigen::Index n_slots, Eigen::Index n_continuous,
                                  Eigen::Index n_discrete);

// Throws InvalidInputError on shape mismatches, non-finite observed
// continuous values, or out-of-range observed symbols.
void validate_sequence(const ObservationSequence& seq);

// Full model parameterization: initial distribution, transitions, one
// Gaussian per state over the continuous channels, and one categorical
// row per state per discrete channel. `frozen` marks discrete entries
// pinned during training (the semi-supervised mechanism).
struct HhmmParams {
  Vector pi;                       // I
  Matrix trans;                    // I x I, row-stochastic
  Matrix means;                    // I x Mc
  std::vector<Matrix> covariances; // I matrices, Mc x Mc
  std::vector<Matrix> disc_probs;  // per channel: I x J_m, row-stochastic
  std::vector<BoolMatrix> frozen;  // per channel: I x J_m

  int n_states() const { return static_cast<int>(pi.size()); }
  Eigen::Index n_continuous() const { return means.cols(); }
  Eigen::Index n_discrete() const {
    return static_cast<Eigen::Index>(disc_probs.size());
  }
  Eigen::Index n_symbols(Eigen::Index channel) const {
    return disc_probs[channel].cols();
  }
};

// Throws InvalidInputError if shapes are inconsistent or the stochastic
// rows do not sum to 1 within 1e-9.
void validate_params(const HhmmParams& params);

// Throws InvalidInputError if the sequence shape does not match the
// parameter dimensions.
void check_compatible(const HhmmParams& params, const ObservationSequence& seq);

struct PosteriorTables {
  Matrix log_alpha;        // T x I
  Matrix log_beta;         // T x I
  Matrix gamma;            // T x I
  std::vector<Matrix> xi;  // T-1 slices, I x I
  double loglik = 0.0;
};

// Likelihood semantics for missing cells. kMeanSubstitute follows the
// per-state substitution rules (state mean for a fully missing Gaussian
// row, most likely symbol for a missing discrete cell); kMarginalize
// integrates missing cells out instead.
enum class MissingMode { kMeanSubstitute, kMarginalize };

struct FitConfig {
  int max_iters = 500;
  double rel_tol = 1e-6;
  double cov_floor = 1e-6;
  std::uint64_t seed = 0;
  MissingMode missing_mode = MissingMode::kMeanSubstitute;
};

void validate_fit_config(const FitConfig& config);

// log p(y_t, l_t | s_t = state) for one slot. Observed continuous dims
// contribute the Gaussian marginal over the observed subset; fully
// missing continuous rows contribute the density at the state mean (or 0
// under kMarginalize). Missing discrete cells contribute the state's most
// likely symbol (or 0 under kMarginalize).
double emission_loglik(const HhmmParams& params, int state,
                       const ObservationSequence& seq, Eigen::Index t,
                       MissingMode mode = MissingMode::kMeanSubstitute);

// T x I table of emission_loglik values.
Matrix emission_loglik_matrix(const HhmmParams& params,
                              const ObservationSequence& seq,
                              MissingMode mode = MissingMode::kMeanSubstitute);

// Log-space forward recursion; returns (log_alpha, log p(Y, L)).
std::pair<Matrix, double> log_forward(
    const HhmmParams& params, const ObservationSequence& seq,
    MissingMode mode = MissingMode::kMeanSubstitute);

Matrix log_backward(const HhmmParams& params, const ObservationSequence& seq,
                    MissingMode mode = MissingMode::kMeanSubstitute);

PosteriorTables posteriors(const HhmmParams& params,
                           const ObservationSequence& seq,
                           MissingMode mode = MissingMode::kMeanSubstitute);

// Most probable state path; ties resolved toward the lowest state index
// at every backtracking step, so decoding is deterministic.
std::vector<int> viterbi(const HhmmParams& params, const ObservationSequence& seq,
                         MissingMode mode = MissingMode::kMeanSubstitute);

// Multi-sequence Baum-Welch. Frozen discrete entries are left bit-exact;
// the free entries of a partially frozen row are renormalized over the
// remaining probability mass. Missing continuous cells enter the M-step
// statistics through their per-state completed values (conditional mean
// given the observed dims, or the state mean when nothing is observed).
// Returns the fitted parameters and the per-iteration log-likelihood
// trace. Throws DegenerateStateError if a state loses all responsibility.
std::pair<HhmmParams, std::vector<double>> fit_baum_welch(
    const HhmmParams& init, const std::vector<ObservationSequence>& seqs,
    const FitConfig& config, int jobs = 1);

// Fills missing cells of `seq`: continuous cells with the gamma-weighted
// conditional means, discrete cells with the most likely symbol of the
// gamma-argmax state. Observed cells are returned unchanged.
ObservationSequence impute(const HhmmParams& params, const ObservationSequence& seq,
                           const Matrix& gamma);

// Draws a sequence from the generative model. Deterministic given seed.
std::pair<ObservationSequence, std::vector<int>> sample(const HhmmParams& params,
                                                        Eigen::Index n_slots,
                                                        std::uint64_t seed);

// (I-1) + I(I-1) + I*Mc + I*Mc(Mc+1)/2 + per-channel categorical degrees
// of freedom, where a row with f frozen entries keeps max(0, J-f-1).
int n_free_params(const HhmmParams& params);

// Seeded deterministic initialization: Gaussian means from k-means++ (plus
// Lloyd refinement) on pooled fully observed continuous rows, pooled
// covariance, uniform-plus-jitter pi/A/disc rows. The first
// `n_frozen_states` states get p(symbol 1) = 0 pinned on every discrete
// channel; centroids are ordered so those states take the lowest-activity
// means.
HhmmParams initialize_params(int n_states, int n_frozen_states,
                             const std::vector<ObservationSequence>& seqs,
                             const FitConfig& config);

}  // namespace sar

#endif
