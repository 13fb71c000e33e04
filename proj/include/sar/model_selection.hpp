#ifndef SAR_MODEL_SELECTION_HPP
#define SAR_MODEL_SELECTION_HPP

#include "sar/hhmm.hpp"

#include <string>
#include <vector>

namespace sar {

// k ln(n) - 2 loglik. n is the total number of time slots across the
// fitted sequences (each slot is one likelihood term).
double bic(double loglik, int k, long n);

// 2k - 2 loglik.
double aic(double loglik, int k);

// One supervision configuration of the sweep: how many states get their
// discrete symbol-1 probabilities pinned to zero.
struct SweepConfig {
  std::string label;
  int n_frozen_states = 0;
};

inline std::vector<SweepConfig> default_sweep_configs() {
  return {{"unsupervised", 0}, {"semi-1", 1}, {"semi-2", 2}};
}

struct SweepRow {
  int n_states = 0;
  std::string config_label;
  double loglik = 0.0;
  int n_free_params = 0;
  double bic = 0.0;
  double aic = 0.0;
  std::uint64_t seed = 0;
  std::string error;  // empty on success; failed fits keep NaN metrics
};

struct SweepReport {
  std::vector<SweepRow> rows;  // ordered by (config, n_states)
  long total_slots = 0;

  // Index of the best finished row per criterion, -1 if none finished.
  int argmin_bic() const;
  int argmin_aic() const;
};

// Fits every (config, state count) cell from a seeded initialization and
// reports loglik/BIC/AIC. Fit errors are recorded on the row instead of
// aborting the sweep. With restarts > 1 each cell keeps the best-loglik
// restart. Cells run in parallel across `jobs` threads; rows are
// assembled in a fixed order regardless.
SweepReport sweep(const std::vector<ObservationSequence>& seqs, int min_states,
                  int max_states, const std::vector<SweepConfig>& configs,
                  const FitConfig& fit_config, int restarts = 1, int jobs = 1);

}  // namespace sar

#endif
