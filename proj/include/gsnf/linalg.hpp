#pragma once

#include <random>

#include "gsnf/tensor.hpp"

namespace gsnf {

/// Power-iteration state for one spectrally constrained weight matrix.
/// u/v are kept unit-norm between calls; target is the operator-norm
/// ceiling eta in (0,1).
struct SpectralState {
  std::vector<double> u;
  std::vector<double> v;
  double sigma_est = 0.0;
  double target = 0.45;

  static SpectralState init(std::size_t rows, std::size_t cols, double target,
                            std::mt19937_64& rng);
};

struct SigmaMaxResult {
  double value = 0.0;
  bool zero_matrix = false;
};

/// Largest singular value by power iteration on M^T M. Monotone
/// non-decreasing in `iters` for a fixed start vector.
SigmaMaxResult sigma_max(const Tensor& m, int iters);
SigmaMaxResult sigma_max(const Tensor& m, int iters, std::mt19937_64& rng);

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, driven to
/// off-diagonal Frobenius norm <= tol. Throws NumericError after max_sweeps.
std::vector<double> jacobi_eigenvalues(const Tensor& sym, double tol = 1e-12,
                                       int max_sweeps = 100);

/// Smallest singular value of an m x n matrix with m >= n, n <= 256:
/// sqrt of the smallest eigenvalue of M^T M via cyclic Jacobi.
double sigma_min(const Tensor& m);

/// Rescales W so its largest singular value is at most state.target:
/// W * target / max(target, sigma_est). Runs `iters` power iterations to
/// refresh the estimate first. Gradient flows through W with sigma_est
/// treated as constant.
Tensor spectral_normalize(const Tensor& w, SpectralState& state, int iters = 1);

}  // namespace gsnf
