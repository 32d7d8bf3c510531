#include "gsnf/flow.hpp"

#include <cmath>

namespace gsnf {

Tensor time_gate(const TimeGate& gate, const Tensor& dt) {
  if (dt.cols() != 1) throw DimensionError("time_gate: dt must be n x 1");
  Tensor phase = matmul(dt, transpose(gate.freqs));      // n x K
  Tensor mixed = matmul(sin_(phase), gate.amps);          // n x 1
  Tensor th = tanh_(mixed);
  return scale(mul(th, th), gate.ceiling);
}

double time_gate_value(const TimeGate& gate, double dt) {
  return time_gate(gate, make_tensor({1, 1}, {dt})).value();
}

void check_row_stochastic(const Tensor& A, double tol) {
  if (A.rows() != A.cols())
    throw ContractViolation("adjacency must be square");
  for (std::size_t r = 0; r < A.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < A.cols(); ++c) {
      double v = A.at(r, c);
      if (v < -1e-12)
        throw ContractViolation("adjacency has a negative entry");
      s += v;
    }
    if (std::abs(s - 1.0) > tol)
      throw ContractViolation("adjacency row " + std::to_string(r) +
                              " sums to " + std::to_string(s));
  }
}

namespace {

Tensor mlp_branch(const GsnfLayer& layer, const Tensor& inp) {
  Tensor h = inp;
  for (std::size_t i = 0; i < layer.mlp_w.size(); ++i)
    h = tanh_(add_row_bias(matmul(h, layer.mlp_w[i]), layer.mlp_b[i]));
  return h;
}

Tensor gcn_branch(const GsnfLayer& layer, const Tensor& z,
                  const Tensor& t_from, const Tensor& t_to, const Tensor& A) {
  Tensor mixed = matmul(z, transpose(A));  // n x D
  Tensor w0 = slice_rows(layer.gcn_w, 0, 1);
  Tensor out = scale_by(mixed, w0);
  if (!layer.linear_gcn) {
    Tensor w1 = slice_rows(layer.gcn_w, 1, 1);
    Tensor w2 = slice_rows(layer.gcn_w, 2, 1);
    Tensor tau_to = add_scalar(scale(t_to, layer.tau_scale), layer.tau_offset);
    Tensor tau_from = add_scalar(scale(t_from, layer.tau_scale), layer.tau_offset);
    Tensor coeff = add(scale_by(tau_to, w1), scale_by(tau_from, w2));  // n x 1
    Tensor row_mass = transpose(matmul(A, full({(std::size_t)A.cols(), 1}, 1.0)));
    out = add(out, matmul(coeff, row_mass));
  }
  return out;
}

}  // namespace

Tensor gsnf_residual(const GsnfLayer& layer, const Tensor& z,
                     const Tensor& t_from, const Tensor& t_to, const Tensor& A) {
  if (z.cols() != A.rows())
    throw DimensionError("gsnf: latent dim must equal adjacency dim");
  if (t_from.rows() != z.rows() || t_to.rows() != z.rows())
    throw DimensionError("gsnf: per-row time vectors must match state rows");
  Tensor inp = concat_cols({z, t_to, t_from});
  return mul(mlp_branch(layer, inp), gcn_branch(layer, z, t_from, t_to, A));
}

Tensor gsnf_forward(const GsnfLayer& layer, const Tensor& z,
                    const Tensor& t_from, const Tensor& t_to, const Tensor& A) {
  check_row_stochastic(A);
  Tensor phi = time_gate(layer.gate, sub(t_to, t_from));
  Tensor g = gsnf_residual(layer, z, t_from, t_to, A);
  return add(z, colwise_scale(g, phi));
}

Tensor gsnf_invert(const GsnfLayer& layer, const Tensor& x,
                   const Tensor& t_from, const Tensor& t_to, const Tensor& A,
                   double tol, int max_iters, std::vector<double>* residuals) {
  check_row_stochastic(A);
  Tensor phi = time_gate(layer.gate, sub(t_to, t_from));
  Tensor z = x;
  double res = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Tensor g = gsnf_residual(layer, z, t_from, t_to, A);
    Tensor fz = add(z, colwise_scale(g, phi));
    res = std::sqrt(sqnorm(sub(fz, x)).value());
    if (residuals) residuals->push_back(res);
    if (res <= tol) return z;
    z = sub(x, colwise_scale(g, phi));
  }
  // one final check: the last update may have landed inside tolerance
  Tensor g = gsnf_residual(layer, z, t_from, t_to, A);
  res = std::sqrt(sqnorm(sub(add(z, colwise_scale(g, phi)), x)).value());
  if (residuals) residuals->push_back(res);
  if (res <= tol) return z;
  throw NumericError("gsnf_invert: no convergence after " +
                     std::to_string(max_iters) + " iterations, residual " +
                     std::to_string(res) + " (contractivity violated?)");
}

double lipschitz_probe(const GsnfLayer& layer, double t_from, double t_to,
                       const Tensor& A, int n_pairs, std::mt19937_64& rng) {
  if (n_pairs < 100) throw UsageError("lipschitz_probe: need n_pairs >= 100");
  const std::size_t d = layer.latent_dim();
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> radius(1e-3, 2.0);
  Tensor z1 = zeros({(std::size_t)n_pairs, d});
  Tensor z2 = zeros({(std::size_t)n_pairs, d});
  for (int p = 0; p < n_pairs; ++p) {
    for (std::size_t j = 0; j < d; ++j)
      (*z1.data)[(std::size_t)p * d + j] = gauss(rng);
    // half wide pairs, half local perturbations
    double r = (p % 2 == 0) ? radius(rng) : 1e-4;
    for (std::size_t j = 0; j < d; ++j)
      (*z2.data)[(std::size_t)p * d + j] =
          (*z1.data)[(std::size_t)p * d + j] + r * gauss(rng);
  }
  Tensor tf = full({(std::size_t)n_pairs, 1}, t_from);
  Tensor tt = full({(std::size_t)n_pairs, 1}, t_to);
  Tensor g1 = gsnf_residual(layer, z1, tf, tt, A);
  Tensor g2 = gsnf_residual(layer, z2, tf, tt, A);
  double worst = 0.0;
  for (int p = 0; p < n_pairs; ++p) {
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      double dg = g1.at((std::size_t)p, j) - g2.at((std::size_t)p, j);
      double dz = z1.at((std::size_t)p, j) - z2.at((std::size_t)p, j);
      num += dg * dg;
      den += dz * dz;
    }
    if (den > 0) worst = std::max(worst, std::sqrt(num / den));
  }
  return worst;
}

Tensor stack_forward(const FlowStack& stack, const Tensor& z,
                     const Tensor& t_from, const Tensor& t_to, const Tensor& A) {
  if (stack.layers.empty()) throw UsageError("stack_forward: empty stack");
  Tensor h = z;
  for (const auto& layer : stack.layers)
    h = gsnf_forward(layer, h, t_from, t_to, A);
  return h;
}

Tensor stack_invert(const FlowStack& stack, const Tensor& x,
                    const Tensor& t_from, const Tensor& t_to, const Tensor& A,
                    double tol, int max_iters) {
  Tensor h = x;
  for (auto it = stack.layers.rbegin(); it != stack.layers.rend(); ++it)
    h = gsnf_invert(*it, h, t_from, t_to, A, tol, max_iters);
  return h;
}

GsnfLayer random_layer(std::size_t d_z, std::mt19937_64& rng, bool linear_gcn,
                       double eta, std::size_t hidden, double gate_amp) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.5, 8.0);
  GsnfLayer layer;
  layer.linear_gcn = linear_gcn;
  const std::size_t K = 4;
  layer.gate.freqs = zeros({K, 1});
  layer.gate.amps = zeros({K, 1});
  for (std::size_t k = 0; k < K; ++k) {
    (*layer.gate.freqs.data)[k] = uni(rng);
    (*layer.gate.amps.data)[k] = gate_amp * gauss(rng);
  }
  std::vector<std::size_t> widths = {d_z + 2, hidden, hidden, hidden, d_z};
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    Tensor w = zeros({widths[i], widths[i + 1]});
    for (auto& v : *w.data) v = gauss(rng) / std::sqrt((double)widths[i]);
    auto st = SpectralState::init(widths[i], widths[i + 1], eta, rng);
    layer.mlp_w.push_back(spectral_normalize(w, st, 100));
    Tensor b = zeros({1, widths[i + 1]});
    for (auto& v : *b.data) v = 0.1 * gauss(rng);
    layer.mlp_b.push_back(b);
  }
  std::size_t gw = linear_gcn ? 1 : 3;
  Tensor w = zeros({gw, 1});
  for (auto& v : *w.data) v = gauss(rng);
  auto st = SpectralState::init(gw, 1, eta, rng);
  layer.gcn_w = spectral_normalize(w, st, 100);
  return layer;
}

Tensor random_adjacency(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Tensor logits = zeros({d, d});
  for (auto& v : *logits.data) v = gauss(rng);
  return softmax(logits, 1);
}

}  // namespace gsnf
