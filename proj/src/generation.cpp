#include "gsnf/generation.hpp"

#include <cmath>

#include "gsnf/linalg.hpp"

namespace gsnf {

std::size_t resolve_reinit_index(const ItgConfig& cfg, std::size_t L) {
  std::size_t k0 = cfg.reinit_index == 0 ? (L + 1) / 2 : cfg.reinit_index;
  if (k0 < 1 || k0 > L)
    throw UsageError("itg: reinit index " + std::to_string(k0) +
                     " out of range for L=" + std::to_string(L));
  return k0;
}

Trajectory generate_trajectory(const Tensor& z0, const Tensor& A,
                               const std::vector<double>& times,
                               const FlowStack& stack) {
  if (times.empty()) throw UsageError("generate_trajectory: empty times");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (times[i] <= times[i - 1])
      throw UsageError("generate_trajectory: times must be increasing");
  const std::size_t L = times.size();
  Tensor t_to = zeros({L, 1});
  for (std::size_t i = 0; i < L; ++i) (*t_to.data)[i] = times[i];
  Trajectory traj;
  traj.times = times;
  traj.origin_time = 0.0;
  traj.origin_state = z0;
  traj.adjacency = A;
  traj.states = stack_forward(stack, repeat_rows(z0, L), zeros({L, 1}), t_to, A);
  return traj;
}

Trajectory itg_auxiliary(const Trajectory& traj, const FlowStack& stack,
                         std::size_t k0) {
  const std::size_t L = traj.times.size();
  if (k0 < 1 || k0 > L) throw UsageError("itg_auxiliary: k0 out of range");
  const std::size_t n = L - k0 + 1;
  Tensor z0_star = slice_rows(traj.states, k0 - 1, 1);
  double t0_star = traj.times[k0 - 1];
  Tensor t_to = zeros({n, 1});
  for (std::size_t i = 0; i < n; ++i) (*t_to.data)[i] = traj.times[k0 - 1 + i];
  Trajectory aux;
  aux.times.assign(traj.times.begin() + (long)(k0 - 1), traj.times.end());
  aux.origin_time = t0_star;
  aux.origin_state = z0_star;
  aux.adjacency = traj.adjacency;
  aux.states = stack_forward(stack, repeat_rows(z0_star, n),
                             full({n, 1}, t0_star), t_to, traj.adjacency);
  return aux;
}

Tensor itg_loss(const Trajectory& traj, const Trajectory& aux, double delta,
                std::size_t k0) {
  if (delta < 0.0) throw UsageError("itg_loss: delta must be nonnegative");
  const std::size_t L = traj.times.size();
  const std::size_t n = L - k0 + 1;
  if (aux.states.rows() != n)
    throw DimensionError("itg_loss: auxiliary trajectory length mismatch");
  Tensor div = sqnorm(sub(slice_rows(traj.states, k0 - 1, n), aux.states));
  Tensor hinge = clamp_min(add_scalar(neg(div), delta * delta), 0.0);
  return scale(hinge, 1.0 / (double)n);
}

MarginBound delta_lower_bound(const Tensor& a_hat, const Tensor& w,
                              const Tensor& z0, const Tensor& z0_star,
                              std::size_t L, std::size_t k0,
                              double fixed_delta) {
  if (k0 < 1 || k0 > L) throw UsageError("delta_lower_bound: k0 out of range");
  const double n = (double)(L - k0 + 1);
  MarginBound mb;
  mb.delta_in = std::sqrt(sqnorm(sub(z0_star, z0)).value());
  mb.sigma_a = sigma_min(a_hat);
  mb.sigma_w = sigma_min(w);
  double eta = mb.sigma_a * mb.sigma_w * mb.delta_in;
  mb.bound = std::max(0.0, n * (eta - mb.delta_in));
  if (mb.bound > 0.0) {
    mb.delta = mb.bound / std::sqrt(n);
  } else {
    mb.delta = fixed_delta;
    mb.fallback = true;
  }
  return mb;
}

Tensor rtg_trajectory(const Trajectory& traj, const FlowStack& stack) {
  const std::size_t L = traj.times.size();
  Tensor z_last = slice_rows(traj.states, L - 1, 1);
  double t_last = traj.times[L - 1];
  Tensor t_to = zeros({L, 1});
  for (std::size_t i = 0; i < L; ++i) (*t_to.data)[i] = traj.times[i];
  return stack_forward(stack, repeat_rows(z_last, L), full({L, 1}, t_last),
                       t_to, traj.adjacency);
}

Tensor rtg_loss(const Tensor& reversed, const FeedForward& decoder,
                const IrregularSeries& X) {
  if (reversed.rows() != X.length())
    throw DimensionError("rtg_loss: state count must match series length");
  double observed = 0.0;
  for (std::size_t i = 0; i < X.mask.size(); ++i) observed += X.mask.at(i);
  if (observed < 1.0) return scalar(0.0);  // empty support
  Tensor decoded = ff_apply(decoder, reversed);
  Tensor err = mul(sub(decoded, X.values), X.mask);
  return scale(sqnorm(err), 1.0 / observed);
}

}  // namespace gsnf
