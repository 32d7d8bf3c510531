#pragma once

#include <random>
#include <vector>

#include "gsnf/data.hpp"
#include "gsnf/flow.hpp"
#include "gsnf/tensor.hpp"

namespace gsnf {

/// Plain feed-forward map: tanh hidden layers, linear output.
struct FeedForward {
  std::vector<Tensor> w;
  std::vector<Tensor> b;
};

Tensor ff_apply(const FeedForward& net, const Tensor& x);
FeedForward random_ff(std::size_t in, std::size_t out, std::size_t hidden,
                      std::size_t n_hidden, std::mt19937_64& rng);

/// Parameters of the graph-posterior branch: attention projections plus the
/// shared head producing (mu, softplus -> sigma) from a flattened adjacency.
struct GraphHeads {
  Tensor wq;  // 1 x D_x
  Tensor wk;  // 1 x D_x
  FeedForward h_a;  // D_x^2 -> D_x^2
};

struct SegmentGraph {
  std::size_t index = 0;
  std::size_t row_begin = 0, row_count = 0;  // observation rows covered
  Tensor mean_obs;   // 1 x D_x
  Tensor adjacency;  // D_x x D_x, row-stochastic
  Tensor mu;         // 1 x D_x^2
  Tensor sigma;      // 1 x D_x^2, strictly positive
  Tensor kl;         // scalar
};

struct GraphPosterior {
  std::vector<SegmentGraph> segments;
  Tensor weights;  // 1 x C, nonnegative, sums to 1
};

struct LatentPosterior {
  Tensor mu;     // L x D_z per-point means
  Tensor sigma;  // L x D_z per-point scales, strictly positive
  Tensor kl;     // L x 1 per-point KL to the standard normal prior
};

/// Per-variable temporal averages over C consecutive segments of the
/// zero-imputed observation matrix; the last segment absorbs any remainder.
std::vector<Tensor> segment_means(const IrregularSeries& X, std::size_t C);

/// Self-attention over variables with scalar per-variable features:
/// q_i = xbar_i wq, k_i = xbar_i wk, a_ij = softmax_j(q_i . k_j / sqrt(D_x)).
Tensor attention_adjacency(const Tensor& xbar, const Tensor& wq,
                           const Tensor& wk);

GraphPosterior graph_posterior(const IrregularSeries& X, std::size_t C,
                               const GraphHeads& heads);

/// Graph-free stand-in: identity adjacency per segment, prior-matching
/// (0, 1) components, uniform weights. Used by the no-graph ablation.
GraphPosterior identity_graph_posterior(const IrregularSeries& X,
                                        std::size_t C);

/// Weighted sum of per-segment reparameterized draws (one shared noise
/// matrix), then row-softmax. Pass zero noise for the deterministic mean path.
Tensor sample_adjacency(const GraphPosterior& gp, const Tensor& noise);

/// f_enc on [x || m]; rows are observations, so whole series encode at once.
Tensor encode_observations(const FeedForward& enc, const Tensor& values,
                           const Tensor& mask);

/// Backward one-step propagation of every encoded state to t0 = 0 under its
/// segment's adjacency, followed by the shared (mu, sigma) head.
LatentPosterior latent_posterior(const IrregularSeries& X,
                                 const Tensor& encoded,
                                 const GraphPosterior& gp,
                                 const FlowStack& stack,
                                 const FeedForward& h_z);

/// KL(N(mu, diag sigma^2) || N(0, I)) summed over all elements.
Tensor kl_diag_gaussian(const Tensor& mu, const Tensor& sigma);
/// Per-row KL for a matrix of stacked diagonal Gaussians.
Tensor kl_diag_gaussian_rows(const Tensor& mu, const Tensor& sigma);

/// Moment-matched single-Gaussian draw from the uniform mixture of per-point
/// posteriors: mean of means, variance = mean(sigma^2 + mu^2) - mean(mu)^2.
Tensor sample_z0(const LatentPosterior& lp, const Tensor& noise);

}  // namespace gsnf
