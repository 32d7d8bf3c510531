#include "gsnf/inference.hpp"

#include <cmath>

namespace gsnf {

Tensor ff_apply(const FeedForward& net, const Tensor& x) {
  if (net.w.empty() || net.w.size() != net.b.size())
    throw UsageError("ff_apply: malformed network");
  Tensor h = x;
  for (std::size_t i = 0; i < net.w.size(); ++i) {
    h = add_row_bias(matmul(h, net.w[i]), net.b[i]);
    if (i + 1 < net.w.size()) h = tanh_(h);
  }
  return h;
}

FeedForward random_ff(std::size_t in, std::size_t out, std::size_t hidden,
                      std::size_t n_hidden, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::size_t> widths;
  widths.push_back(in);
  for (std::size_t i = 0; i < n_hidden; ++i) widths.push_back(hidden);
  widths.push_back(out);
  FeedForward net;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    Tensor w = zeros({widths[i], widths[i + 1]});
    for (auto& v : *w.data) v = gauss(rng) / std::sqrt((double)widths[i]);
    net.w.push_back(w);
    net.b.push_back(zeros({1, widths[i + 1]}));
  }
  return net;
}

namespace {

struct SegmentSpan {
  std::size_t begin, count;
};

std::vector<SegmentSpan> segment_spans(std::size_t L, std::size_t C) {
  if (C == 0 || C > L)
    throw UsageError("segments: need 1 <= C <= L, got C=" + std::to_string(C) +
                     " for L=" + std::to_string(L));
  const std::size_t M = L / C;
  std::vector<SegmentSpan> spans;
  for (std::size_t s = 0; s < C; ++s) {
    std::size_t begin = s * M;
    std::size_t count = (s + 1 == C) ? L - begin : M;  // remainder to the last
    spans.push_back({begin, count});
  }
  return spans;
}

}  // namespace

std::vector<Tensor> segment_means(const IrregularSeries& X, std::size_t C) {
  const std::size_t D = X.n_vars();
  std::vector<Tensor> out;
  for (const auto& span : segment_spans(X.length(), C)) {
    Tensor m = zeros({1, D});
    for (std::size_t r = span.begin; r < span.begin + span.count; ++r)
      for (std::size_t c = 0; c < D; ++c)
        (*m.data)[c] += X.values.at(r, c);
    for (auto& v : *m.data) v /= (double)span.count;
    out.push_back(std::move(m));
  }
  return out;
}

Tensor attention_adjacency(const Tensor& xbar, const Tensor& wq,
                           const Tensor& wk) {
  const std::size_t D = xbar.cols();
  if (wq.rows() != 1 || wq.cols() != D || wk.rows() != 1 || wk.cols() != D)
    throw DimensionError("attention_adjacency: projections must be 1 x D_x");
  Tensor q = matmul(transpose(xbar), wq);  // D x D, row i = xbar_i * wq
  Tensor k = matmul(transpose(xbar), wk);
  Tensor logits = scale(matmul(q, transpose(k)), 1.0 / std::sqrt((double)D));
  return softmax(logits, 1);
}

GraphPosterior graph_posterior(const IrregularSeries& X, std::size_t C,
                               const GraphHeads& heads) {
  const std::size_t D = X.n_vars();
  auto spans = segment_spans(X.length(), C);
  auto means = segment_means(X, C);
  GraphPosterior gp;
  std::vector<Tensor> kls;
  for (std::size_t s = 0; s < C; ++s) {
    SegmentGraph seg;
    seg.index = s;
    seg.row_begin = spans[s].begin;
    seg.row_count = spans[s].count;
    seg.mean_obs = means[s];
    seg.adjacency = attention_adjacency(means[s], heads.wq, heads.wk);
    Tensor h = ff_apply(heads.h_a, reshape(seg.adjacency, {1, D * D}));
    seg.mu = h;
    seg.sigma = softplus(h);
    seg.kl = kl_diag_gaussian(seg.mu, seg.sigma);
    kls.push_back(reshape(seg.kl, {1, 1}));
    gp.segments.push_back(std::move(seg));
  }
  Tensor kl_row = concat_cols(kls);  // 1 x C
  double total_val = 0.0;
  for (std::size_t s = 0; s < C; ++s) total_val += kl_row.at(s);
  if (total_val < 1e-12) {
    gp.weights = full({1, C}, 1.0 / (double)C);  // uninformative segments
  } else {
    Tensor total = reshape(sum(kl_row), {1, 1});
    gp.weights = div(kl_row, matmul(total, full({1, C}, 1.0)));
  }
  return gp;
}

GraphPosterior identity_graph_posterior(const IrregularSeries& X,
                                        std::size_t C) {
  const std::size_t D = X.n_vars();
  auto spans = segment_spans(X.length(), C);
  GraphPosterior gp;
  for (std::size_t s = 0; s < C; ++s) {
    SegmentGraph seg;
    seg.index = s;
    seg.row_begin = spans[s].begin;
    seg.row_count = spans[s].count;
    seg.mean_obs = zeros({1, D});
    seg.adjacency = eye(D);
    seg.mu = zeros({1, D * D});
    seg.sigma = full({1, D * D}, 1.0);
    seg.kl = scalar(0.0);
    gp.segments.push_back(std::move(seg));
  }
  gp.weights = full({1, C}, 1.0 / (double)C);
  return gp;
}

Tensor sample_adjacency(const GraphPosterior& gp, const Tensor& noise) {
  if (gp.segments.empty()) throw UsageError("sample_adjacency: no segments");
  const std::size_t DD = gp.segments[0].mu.cols();
  const std::size_t D = (std::size_t)std::llround(std::sqrt((double)DD));
  if (noise.size() != DD)
    throw DimensionError("sample_adjacency: noise must match adjacency size");
  Tensor noise_flat = reshape(noise, {1, DD});
  Tensor acc;
  for (std::size_t s = 0; s < gp.segments.size(); ++s) {
    const auto& seg = gp.segments[s];
    Tensor draw = add(seg.mu, mul(seg.sigma, noise_flat));
    Tensor term = scale_by(draw, slice_cols(gp.weights, s, 1));
    acc = (s == 0) ? term : add(acc, term);
  }
  return softmax(reshape(acc, {D, D}), 1);
}

Tensor encode_observations(const FeedForward& enc, const Tensor& values,
                           const Tensor& mask) {
  if (values.rows() != mask.rows() || values.cols() != mask.cols())
    throw DimensionError("encode_observations: values/mask shape mismatch");
  return ff_apply(enc, concat_cols({values, mask}));
}

LatentPosterior latent_posterior(const IrregularSeries& X,
                                 const Tensor& encoded,
                                 const GraphPosterior& gp,
                                 const FlowStack& stack,
                                 const FeedForward& h_z) {
  if (encoded.rows() != X.length())
    throw DimensionError("latent_posterior: encoded rows must match length");
  // one flow evaluation per segment, batched over that segment's rows
  std::vector<Tensor> cols;
  for (const auto& seg : gp.segments) {
    Tensor z = slice_rows(encoded, seg.row_begin, seg.row_count);
    Tensor t_from = zeros({seg.row_count, 1});
    for (std::size_t r = 0; r < seg.row_count; ++r)
      (*t_from.data)[r] = X.times[seg.row_begin + r];
    Tensor z0 = stack_forward(stack, z, t_from, zeros({seg.row_count, 1}),
                              seg.adjacency);
    cols.push_back(transpose(z0));
  }
  Tensor z0_all = transpose(concat_cols(cols));  // L x D_z, original order
  Tensor h = ff_apply(h_z, z0_all);
  LatentPosterior lp;
  lp.mu = h;
  lp.sigma = softplus(h);
  lp.kl = kl_diag_gaussian_rows(lp.mu, lp.sigma);
  return lp;
}

namespace {

Tensor kl_terms(const Tensor& mu, const Tensor& sigma) {
  if (mu.shape != sigma.shape)
    throw DimensionError("kl_diag_gaussian: mu/sigma shape mismatch");
  for (std::size_t i = 0; i < sigma.size(); ++i)
    if (!(sigma.at(i) > 0.0))
      throw UsageError("kl_diag_gaussian: sigma must be positive");
  Tensor s2 = square(sigma);
  return sub(add(square(mu), s2), add_scalar(log_(s2), 1.0));
}

}  // namespace

Tensor kl_diag_gaussian(const Tensor& mu, const Tensor& sigma) {
  return scale(sum(kl_terms(mu, sigma)), 0.5);
}

Tensor kl_diag_gaussian_rows(const Tensor& mu, const Tensor& sigma) {
  return scale(sum_axis(kl_terms(mu, sigma), 1), 0.5);
}

Tensor sample_z0(const LatentPosterior& lp, const Tensor& noise) {
  const double L = (double)lp.mu.rows();
  if (noise.rows() != 1 || noise.cols() != lp.mu.cols())
    throw DimensionError("sample_z0: noise must be 1 x D_z");
  Tensor mean_mu = scale(sum_axis(lp.mu, 0), 1.0 / L);
  Tensor second =
      scale(sum_axis(add(square(lp.sigma), square(lp.mu)), 0), 1.0 / L);
  Tensor var = clamp_min(sub(second, square(mean_mu)), 1e-12);
  return add(mean_mu, mul(sqrt_(var), noise));
}

}  // namespace gsnf
