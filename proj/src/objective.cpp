#include "gsnf/objective.hpp"

#include <cmath>

namespace gsnf {

Tensor elbo(const IrregularSeries& X, const LatentPosterior& lp,
            const Trajectory& traj, const FeedForward& decoder) {
  if (traj.states.rows() != X.length())
    throw DimensionError("elbo: trajectory must cover every observation time");
  Tensor decoded = ff_apply(decoder, traj.states);
  Tensor err = mul(sub(decoded, X.values), X.mask);
  Tensor recon = scale(sqnorm(err), -0.5);
  Tensor kl = scale(sum(lp.kl), 1.0 / (double)X.length());
  return sub(recon, kl);
}

Tensor cross_entropy(const Tensor& logits, int y) {
  if (logits.rows() != 1) throw DimensionError("cross_entropy: logits must be 1 x K");
  if (y < 0 || (std::size_t)y >= logits.cols())
    throw UsageError("cross_entropy: class index " + std::to_string(y) +
                     " out of range");
  Tensor logp = log_(softmax(logits, 1));
  return neg(reshape(slice_cols(logp, (std::size_t)y, 1), {}));
}

namespace {

void check_component(const Tensor& t, const char* name) {
  if (!std::isfinite(t.value()))
    throw NumericError(std::string("total_loss: non-finite component ") + name);
}

}  // namespace

Tensor total_loss(const Tensor& l_vae, const Tensor& l_ce, const Tensor& l_itg,
                  const Tensor& l_rtg, const LossWeights& w) {
  w.validate();
  check_component(l_vae, "L_VAE");
  check_component(l_ce, "L_CE");
  check_component(l_itg, "L_ITG");
  check_component(l_rtg, "L_RTG");
  Tensor loss = neg(l_vae);
  loss = add(loss, scale(l_ce, w.alpha));
  loss = add(loss, scale(l_itg, w.beta));
  loss = add(loss, scale(l_rtg, w.gamma));
  return loss;
}

}  // namespace gsnf
