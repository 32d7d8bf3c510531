#pragma once

#include <vector>

#include "gsnf/data.hpp"
#include "gsnf/flow.hpp"
#include "gsnf/inference.hpp"
#include "gsnf/tensor.hpp"

namespace gsnf {

/// One-step latent trajectory: every state is generated directly from the
/// origin, never by rolling forward from the previous point.
struct Trajectory {
  std::vector<double> times;
  Tensor states;        // L x D_z
  double origin_time = 0.0;
  Tensor origin_state;  // 1 x D_z
  Tensor adjacency;     // D_z x D_z
};

enum class MarginMode { fixed, derived };

struct ItgConfig {
  std::size_t reinit_index = 0;  // k_0^*, 1-based; 0 means ceil(L/2)
  MarginMode margin_mode = MarginMode::fixed;
  double fixed_delta = 1e-6;
};

std::size_t resolve_reinit_index(const ItgConfig& cfg, std::size_t L);

Trajectory generate_trajectory(const Tensor& z0, const Tensor& A,
                               const std::vector<double>& times,
                               const FlowStack& stack);

/// Re-initialized trajectory: origin (z(t_{k0}), t_{k0}) taken from `traj`,
/// evaluated at every t_i >= t_0^* with the same parameters and adjacency.
Trajectory itg_auxiliary(const Trajectory& traj, const FlowStack& stack,
                         std::size_t k0);

/// max(delta^2 - sum_{i>=k0} |z(t_i) - z*(t_i)|^2, 0) / (L - k0 + 1)
Tensor itg_loss(const Trajectory& traj, const Trajectory& aux, double delta,
                std::size_t k0);

struct MarginBound {
  double delta = 0.0;     // margin fed into the ITG hinge
  double bound = 0.0;     // B, lower bound on the summed divergence norms
  double delta_in = 0.0;  // |z_0^* - z_0|
  double sigma_a = 0.0;
  double sigma_w = 0.0;
  bool fallback = false;  // true when B = 0 forced the fixed margin
};

/// Data-dependent margin: Delta_in = |z0* - z0|,
/// eta = sigma_min(A) sigma_min(W) Delta_in, B = max(0, n (eta - Delta_in))
/// with n = L - k0 + 1; the hinge margin transfers as delta^2 = B^2 / n
/// (Cauchy-Schwarz from summed norms to summed squares). B = 0 falls back to
/// fixed_delta.
MarginBound delta_lower_bound(const Tensor& a_hat, const Tensor& w,
                              const Tensor& z0, const Tensor& z0_star,
                              std::size_t L, std::size_t k0,
                              double fixed_delta);

/// Reverse-time evaluation from the final state back to every t_i.
Tensor rtg_trajectory(const Trajectory& traj, const FlowStack& stack);

/// Mask-weighted mean squared error of decoded reversed states against the
/// observations, normalized by the observed-entry count.
Tensor rtg_loss(const Tensor& reversed, const FeedForward& decoder,
                const IrregularSeries& X);

}  // namespace gsnf
