#pragma once

#include <optional>
#include <random>
#include <vector>

#include "gsnf/linalg.hpp"
#include "gsnf/tensor.hpp"

namespace gsnf {

/// Smooth time gate vanishing exactly at dt = 0 and bounded below `ceiling`:
/// phi(dt) = ceiling * tanh^2(sum_k a_k sin(f_k dt)).
struct TimeGate {
  Tensor freqs;  // K x 1
  Tensor amps;   // K x 1
  double ceiling = 1.0 - 1e-3;
};

Tensor time_gate(const TimeGate& gate, const Tensor& dt);  // n x 1 -> n x 1
double time_gate_value(const TimeGate& gate, double dt);

/// One flow stage: z + phi(t - t0) * [MLP(z||t||t0) (.) GCN(A, z||t||t0)].
/// The MLP has tanh hidden layers and a tanh output (bounded residual); the
/// graph branch projects per-node features [z_i, tau(t), tau(t0)] through
/// gcn_w and mixes nodes by the row-stochastic adjacency. linear_gcn drops
/// the time features, leaving the A z W form with a 1x1 weight.
struct GsnfLayer {
  TimeGate gate;
  std::vector<Tensor> mlp_w;
  std::vector<Tensor> mlp_b;
  Tensor gcn_w;  // 3x1, or 1x1 in linear mode
  bool linear_gcn = false;
  double tau_scale = 1.0;   // fixed affine time rescaling
  double tau_offset = 0.0;

  std::size_t latent_dim() const { return mlp_w.back().cols(); }
};

struct FlowStack {
  std::vector<GsnfLayer> layers;
};

/// The interaction residual g(z, t0, t, A) without the time gate.
Tensor gsnf_residual(const GsnfLayer& layer, const Tensor& z,
                     const Tensor& t_from, const Tensor& t_to, const Tensor& A);

/// Batched flow map: row i of z evolves from t_from[i] to t_to[i].
Tensor gsnf_forward(const GsnfLayer& layer, const Tensor& z,
                    const Tensor& t_from, const Tensor& t_to, const Tensor& A);

/// Fixed-point (Banach) inversion: finds z with gsnf_forward(z) ~= x.
/// Appends per-iteration residual norms to *residuals when given.
/// Throws NumericError when max_iters is exhausted above tol.
Tensor gsnf_invert(const GsnfLayer& layer, const Tensor& x,
                   const Tensor& t_from, const Tensor& t_to, const Tensor& A,
                   double tol = 1e-6, int max_iters = 200,
                   std::vector<double>* residuals = nullptr);

/// Empirical Lipschitz estimate of g over random pairs (lower bound on the
/// true constant). The gated residual phi*g then has constant phi * L_g.
double lipschitz_probe(const GsnfLayer& layer, double t_from, double t_to,
                       const Tensor& A, int n_pairs, std::mt19937_64& rng);

Tensor stack_forward(const FlowStack& stack, const Tensor& z,
                     const Tensor& t_from, const Tensor& t_to, const Tensor& A);

/// Inverts the composition by inverting stages in reverse order.
Tensor stack_invert(const FlowStack& stack, const Tensor& x,
                    const Tensor& t_from, const Tensor& t_to, const Tensor& A,
                    double tol = 1e-6, int max_iters = 200);

void check_row_stochastic(const Tensor& A, double tol = 1e-6);

/// Random spectrally normalized layer for tests and verification probes.
GsnfLayer random_layer(std::size_t d_z, std::mt19937_64& rng,
                       bool linear_gcn = false, double eta = 0.45,
                       std::size_t hidden = 32, double gate_amp = 0.5);

/// Random row-stochastic adjacency.
Tensor random_adjacency(std::size_t d, std::mt19937_64& rng);

}  // namespace gsnf
