#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gsnf {

/// Outcome of one invariant suite: worst observed statistic against its
/// allowed limit, plus wall time for the runtime budgets.
struct SuiteResult {
  std::string name;
  bool passed = false;
  std::size_t cases = 0;
  double worst = 0.0;
  double limit = 0.0;
  double seconds = 0.0;
  std::string detail;
};

/// stack_forward(z, t0, t0, A) = z to <= 1e-12 over random configurations.
SuiteResult verify_identity(std::uint64_t seed, std::size_t n_configs = 10000);

/// Fixed-point inversion round trip <= 1e-6 on configurations with gated
/// Lipschitz probe < 0.95; contraction ratio <= probe * phi + 0.05.
SuiteResult verify_inversion(std::uint64_t seed, std::size_t n_configs = 1000);

/// (1 - phi L) |dz| <= |dF| <= (1 + phi L) |dz| with slack 1e-9.
SuiteResult verify_bilipschitz(std::uint64_t seed,
                               std::size_t n_configs = 100,
                               std::size_t n_pairs = 1000);

/// Summed divergence norms >= B - 1e-9 on bound-compatible random draws.
SuiteResult verify_bound_validity(std::uint64_t seed,
                                  std::size_t n_draws = 100);

/// Per-operation and full composite-loss finite-difference checks <= 1e-4.
SuiteResult verify_gradients(std::uint64_t seed, std::size_t n_seeds = 20);

/// AUROC vs the O(n^2) pairwise oracle, AUPRC vs the exhaustive-threshold
/// oracle, exact match on random instances.
SuiteResult verify_metric_oracles(std::uint64_t seed,
                                  std::size_t n_instances = 200);

/// All six suites; `scale` multiplies every case count (minimum 1).
std::vector<SuiteResult> verify_all(std::uint64_t seed, double scale = 1.0);

}  // namespace gsnf
