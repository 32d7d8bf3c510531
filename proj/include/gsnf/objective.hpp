#pragma once

#include "gsnf/generation.hpp"
#include "gsnf/inference.hpp"

namespace gsnf {

/// Output heads: decoder back to observation space and the label classifier.
struct Heads {
  FeedForward decoder;     // D_z -> D_x
  FeedForward classifier;  // D_z -> n_classes logits
};

struct LossWeights {
  double alpha = 1000.0;  // cross-entropy
  double beta = 0.1;      // ITG
  double gamma = 0.1;     // RTG

  void validate() const {
    if (alpha < 0 || beta < 0 || gamma < 0)
      throw UsageError("loss weights must be nonnegative");
  }
};

/// ELBO with a unit-variance Gaussian likelihood on observed entries and
/// constants dropped: -1/2 sum_observed (dec(z(t_i)) - x_i)^2 - (1/L) sum KL_i.
/// Positive direction = better; the training loss negates it.
Tensor elbo(const IrregularSeries& X, const LatentPosterior& lp,
            const Trajectory& traj, const FeedForward& decoder);

Tensor cross_entropy(const Tensor& logits, int y);

/// (-L_VAE) + alpha L_CE + beta L_ITG + gamma L_RTG; throws NumericError
/// naming the offending component when any input is non-finite.
Tensor total_loss(const Tensor& l_vae, const Tensor& l_ce, const Tensor& l_itg,
                  const Tensor& l_rtg, const LossWeights& w);

}  // namespace gsnf
