#include "gsnf/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <set>

#include "gsnf/generation.hpp"
#include "gsnf/inference.hpp"
#include "gsnf/metrics.hpp"
#include "gsnf/objective.hpp"

namespace gsnf {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Tensor randn(std::vector<std::size_t> shape, std::mt19937_64& rng,
             double stddev = 1.0) {
  std::normal_distribution<double> d(0.0, stddev);
  Tensor t = zeros(std::move(shape));
  for (auto& v : *t.data) v = d(rng);
  return t;
}

double l2(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double e = a.at(i) - b.at(i);
    s += e * e;
  }
  return std::sqrt(s);
}

// central finite differences against the tape gradient; worst relative error
double fd_max_rel_error(
    std::vector<Tensor> inputs,
    const std::function<Tensor(const std::vector<Tensor>&)>& fn,
    double h = 1e-5) {
  std::vector<std::vector<double>> ad;
  {
    Tape tape;
    TapeScope scope(tape);
    std::vector<Tensor> leaves;
    for (auto& in : inputs) leaves.push_back(tape.leaf(in));
    Tensor loss = fn(leaves);
    tape.backward(loss);
    for (auto& l : leaves) ad.push_back(tape.grad(l.node));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto& vals = *inputs[i].data;
    for (std::size_t j = 0; j < vals.size(); ++j) {
      double keep = vals[j];
      auto fd_at = [&](double step) {
        vals[j] = keep + step;
        double up = fn(inputs).value();
        vals[j] = keep - step;
        double dn = fn(inputs).value();
        vals[j] = keep;
        return (up - dn) / (2.0 * step);
      };
      double fd = fd_at(h);
      if (std::abs(ad[i][j] - fd) <= 1e-10) continue;  // below FD resolution
      auto rel_of = [&](double est) {
        double diff = std::abs(ad[i][j] - est);
        if (diff <= 1e-10) return 0.0;  // below FD resolution
        return diff / (std::abs(est) + 1e-8);
      };
      double rel = rel_of(fd);
      if (rel > 1e-5) {
        // small gradients mix roundoff (small h) with truncation (large h);
        // scan steps and fold in Richardson extrapolation
        for (double step : {10.0 * h, h / 10.0}) rel = std::min(rel, rel_of(fd_at(step)));
        rel = std::min(rel, rel_of((4.0 * fd - fd_at(2.0 * h)) / 3.0));
      }
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

std::vector<double> random_times(std::size_t L, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.01, 1.0);
  std::set<double> ts;
  while (ts.size() < L) ts.insert(uni(rng));
  return {ts.begin(), ts.end()};
}

}  // namespace

SuiteResult verify_identity(std::uint64_t seed, std::size_t n_configs) {
  auto start = Clock::now();
  std::mt19937_64 rng(seed ^ 0x1d);
  std::uniform_int_distribution<std::size_t> dim(2, 5);
  SuiteResult res{"flow_identity"};
  res.limit = 1e-12;
  for (std::size_t c = 0; c < n_configs; ++c) {
    std::size_t d = dim(rng);
    GsnfLayer layer = random_layer(d, rng, false, 0.45, 8);
    FlowStack stack{{layer}};
    Tensor A = random_adjacency(d, rng);
    Tensor z = randn({2, d}, rng);
    Tensor t = randn({2, 1}, rng);
    Tensor out = stack_forward(stack, z, t, t, A);
    for (std::size_t i = 0; i < z.size(); ++i)
      res.worst = std::max(res.worst, std::abs(out.at(i) - z.at(i)));
    ++res.cases;
  }
  res.passed = res.worst <= res.limit;
  res.seconds = elapsed(start);
  return res;
}

SuiteResult verify_inversion(std::uint64_t seed, std::size_t n_configs) {
  auto start = Clock::now();
  std::mt19937_64 rng(seed ^ 0x2e);
  SuiteResult res{"inversion_round_trip"};
  res.limit = 1e-6;
  double worst_ratio_slack = 0.0;  // ratio - (probe*phi + 0.05), want <= 0
  std::uniform_real_distribution<double> tdist(0.3, 1.0);
  while (res.cases < n_configs) {
    GsnfLayer layer = random_layer(4, rng, false, 0.45, 8);
    Tensor A = random_adjacency(4, rng);
    double t1 = tdist(rng);
    double phi = time_gate_value(layer.gate, t1);
    double lg = lipschitz_probe(layer, 0.0, t1, A, 400, rng);
    if (phi * lg >= 0.95) continue;  // contraction condition not met
    ++res.cases;
    Tensor z = randn({1, 4}, rng);
    Tensor tf = zeros({1, 1}), tt = full({1, 1}, t1);
    Tensor x = gsnf_forward(layer, z, tf, tt, A);
    std::vector<double> residuals;
    Tensor rec = gsnf_invert(layer, x, tf, tt, A, 1e-9, 200, &residuals);
    res.worst = std::max(res.worst, l2(rec, z));
    for (std::size_t i = 1; i < residuals.size(); ++i) {
      if (residuals[i - 1] < 1e-10) break;
      double ratio = residuals[i] / residuals[i - 1];
      worst_ratio_slack =
          std::max(worst_ratio_slack, ratio - (phi * lg + 0.05));
    }
  }
  res.passed = res.worst <= res.limit && worst_ratio_slack <= 0.0;
  res.detail = "worst contraction-ratio slack " +
               std::to_string(worst_ratio_slack) + " (must be <= 0)";
  res.seconds = elapsed(start);
  return res;
}

SuiteResult verify_bilipschitz(std::uint64_t seed, std::size_t n_configs,
                               std::size_t n_pairs) {
  auto start = Clock::now();
  std::mt19937_64 rng(seed ^ 0x3f);
  SuiteResult res{"bi_lipschitz_sandwich"};
  res.limit = 1e-9;  // slack; worst tracks the largest bound violation
  const std::size_t d = 4;
  for (std::size_t c = 0; c < n_configs; ++c) {
    GsnfLayer layer = random_layer(d, rng, false, 0.45, 8);
    Tensor A = random_adjacency(d, rng);
    double t1 = 0.75;
    double phi = time_gate_value(layer.gate, t1);
    double lg = lipschitz_probe(layer, 0.0, t1, A, 1000, rng);
    Tensor z1 = randn({n_pairs, d}, rng), z2 = randn({n_pairs, d}, rng);
    Tensor tf = zeros({n_pairs, 1}), tt = full({n_pairs, 1}, t1);
    Tensor f1 = gsnf_forward(layer, z1, tf, tt, A);
    Tensor f2 = gsnf_forward(layer, z2, tf, tt, A);
    Tensor g1 = gsnf_residual(layer, z1, tf, tt, A);
    Tensor g2 = gsnf_residual(layer, z2, tf, tt, A);
    for (std::size_t p = 0; p < n_pairs; ++p) {
      double dz = 0.0, df = 0.0, dg = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        double ez = z1.at(p, j) - z2.at(p, j);
        double ef = f1.at(p, j) - f2.at(p, j);
        double eg = g1.at(p, j) - g2.at(p, j);
        dz += ez * ez;
        df += ef * ef;
        dg += eg * eg;
      }
      dz = std::sqrt(dz);
      df = std::sqrt(df);
      dg = std::sqrt(dg);
      // the probe is a sampled lower bound on L_g; the pair's own residual
      // slope is an analytic floor for it
      double lhat = std::max(lg, dg / dz);
      res.worst = std::max(res.worst, (1.0 - phi * lhat) * dz - df);
      res.worst = std::max(res.worst, df - (1.0 + phi * lhat) * dz);
      ++res.cases;
    }
  }
  res.passed = res.worst <= res.limit;
  res.seconds = elapsed(start);
  return res;
}

SuiteResult verify_bound_validity(std::uint64_t seed, std::size_t n_draws) {
  auto start = Clock::now();
  std::mt19937_64 rng(seed ^ 0x4a);
  SuiteResult res{"margin_bound_validity"};
  res.limit = 1e-9;  // worst tracks B - sum of norms, want <= slack
  std::size_t fallbacks = 0;
  res.worst = -1e300;
  for (std::size_t trial = 0; trial < n_draws; ++trial) {
    const std::size_t d = 3, L = 8, k0 = 4;
    FlowStack stack{{random_layer(d, rng, true)}};
    Tensor A = random_adjacency(d, rng);
    Tensor z0 = randn({1, d}, rng);
    Trajectory traj = generate_trajectory(z0, A, random_times(L, rng), stack);
    Trajectory aux = itg_auxiliary(traj, stack, k0);
    MarginBound mb =
        delta_lower_bound(A, stack.layers[0].gcn_w, z0,
                          slice_rows(traj.states, k0 - 1, 1), L, k0, 1e-6);
    if (mb.fallback) ++fallbacks;
    double sum_norms = 0.0;
    for (std::size_t i = 0; i < aux.states.rows(); ++i) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        double e = traj.states.at(k0 - 1 + i, j) - aux.states.at(i, j);
        d2 += e * e;
      }
      sum_norms += std::sqrt(d2);
    }
    res.worst = std::max(res.worst, mb.bound - sum_norms);
    ++res.cases;
  }
  res.passed = res.worst <= res.limit;
  res.detail = "B = 0 fallback on " + std::to_string(fallbacks) + "/" +
               std::to_string(n_draws) + " draws";
  res.seconds = elapsed(start);
  return res;
}

namespace {

double composite_loss_fd(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t D = 2, L = 4;
  IrregularSeries X;
  X.times = random_times(L, rng);
  X.values = randn({L, D}, rng);
  X.mask = full({L, D}, 1.0);
  for (std::size_t i = 0; i < 3; ++i) (*X.mask.data)[i * 3] = 0.0;
  for (std::size_t i = 0; i < X.mask.size(); ++i)
    if (X.mask.at(i) == 0.0) (*X.values.data)[i] = 0.0;
  X.label = (int)(seed % 2);

  GsnfLayer proto = random_layer(D, rng, false, 0.45, 6);
  GraphHeads gh;
  gh.wq = randn({1, D}, rng);
  gh.wk = randn({1, D}, rng);
  gh.h_a = random_ff(D * D, D * D, 6, 1, rng);
  FeedForward enc = random_ff(2 * D, D, 6, 1, rng);
  FeedForward hz = random_ff(D, D, 6, 1, rng);
  FeedForward dec = random_ff(D, D, 6, 1, rng);
  FeedForward cls = random_ff(D, 2, 6, 1, rng);
  Tensor a_noise = randn({D, D}, rng);
  Tensor z_noise = randn({1, D}, rng);
  LossWeights w;
  w.alpha = 10.0;  // keep the FD probe well conditioned

  std::vector<Tensor> inputs = {gh.wq, gh.wk, proto.gcn_w};
  auto push_ff = [&](const FeedForward& f) {
    for (auto& t : f.w) inputs.push_back(t);
    for (auto& t : f.b) inputs.push_back(t);
  };
  push_ff(gh.h_a);
  push_ff(enc);
  push_ff(hz);
  push_ff(dec);
  push_ff(cls);
  for (auto& t : proto.mlp_w) inputs.push_back(t);
  for (auto& t : proto.mlp_b) inputs.push_back(t);

  auto fn = [&](const std::vector<Tensor>& v) {
    std::size_t i = 0;
    GraphHeads g;
    g.wq = v[i++];
    g.wk = v[i++];
    GsnfLayer layer = proto;
    layer.gcn_w = v[i++];
    auto pull_ff = [&](const FeedForward& ref) {
      FeedForward f;
      for (std::size_t k = 0; k < ref.w.size(); ++k) f.w.push_back(v[i++]);
      for (std::size_t k = 0; k < ref.b.size(); ++k) f.b.push_back(v[i++]);
      return f;
    };
    g.h_a = pull_ff(gh.h_a);
    FeedForward e = pull_ff(enc), z = pull_ff(hz), d = pull_ff(dec),
                c = pull_ff(cls);
    layer.mlp_w.clear();
    layer.mlp_b.clear();
    for (std::size_t k = 0; k < proto.mlp_w.size(); ++k)
      layer.mlp_w.push_back(v[i++]);
    for (std::size_t k = 0; k < proto.mlp_b.size(); ++k)
      layer.mlp_b.push_back(v[i++]);
    FlowStack stack{{layer}};

    GraphPosterior gp = graph_posterior(X, 2, g);
    Tensor A = sample_adjacency(gp, a_noise);
    Tensor encd = encode_observations(e, X.values, X.mask);
    LatentPosterior lp = latent_posterior(X, encd, gp, stack, z);
    Tensor z0 = sample_z0(lp, z_noise);
    Trajectory traj = generate_trajectory(z0, A, X.times, stack);
    Trajectory aux = itg_auxiliary(traj, stack, 2);
    Tensor rev = rtg_trajectory(traj, stack);
    Tensor l_vae = elbo(X, lp, traj, d);
    Tensor l_ce = cross_entropy(ff_apply(c, z0), X.label);
    Tensor l_itg = itg_loss(traj, aux, 0.8, 2);
    Tensor l_rtg = rtg_loss(rev, d, X);
    return total_loss(l_vae, l_ce, l_itg, l_rtg, w);
  };
  return fd_max_rel_error(inputs, fn);
}

double op_battery_fd(std::mt19937_64& rng) {
  auto check = [&](std::size_t arity, std::vector<std::size_t> shape,
                   const std::function<Tensor(const std::vector<Tensor>&)>&
                       fn) {
    std::vector<Tensor> inputs;
    for (std::size_t i = 0; i < arity; ++i) inputs.push_back(randn(shape, rng));
    return fd_max_rel_error(inputs, fn);
  };
  double worst = 0.0;
  auto up = [&](double v) { worst = std::max(worst, v); };
  up(check(2, {3, 4}, [](const auto& v) { return sum(add(v[0], v[1])); }));
  up(check(2, {3, 4}, [](const auto& v) { return sum(sub(v[0], v[1])); }));
  up(check(2, {3, 4}, [](const auto& v) { return sum(mul(v[0], v[1])); }));
  up(check(2, {3, 4}, [](const auto& v) {
    return sum(div(v[0], add_scalar(softplus(v[1]), 0.5)));
  }));
  up(check(2, {4, 4}, [](const auto& v) { return sum(matmul(v[0], v[1])); }));
  up(check(1, {3, 5}, [](const auto& v) {
    return sum(square(transpose(v[0])));
  }));
  up(check(1, {3, 4}, [](const auto& v) {
    return sum(mul(softmax(v[0], 1), v[0]));
  }));
  up(check(1, {3, 4}, [](const auto& v) { return sum(square(tanh_(v[0]))); }));
  up(check(1, {3, 4}, [](const auto& v) { return sum(square(sin_(v[0]))); }));
  up(check(1, {3, 4}, [](const auto& v) { return sum(exp_(scale(v[0], 0.3))); }));
  up(check(1, {3, 4}, [](const auto& v) {
    return sum(log_(add_scalar(softplus(v[0]), 0.5)));
  }));
  up(check(1, {3, 4}, [](const auto& v) {
    return sum(sqrt_(add_scalar(square(v[0]), 0.5)));
  }));
  up(check(2, {1, 5}, [](const auto& v) {
    return sum(add_row_bias(repeat_rows(v[0], 3), v[1]));
  }));
  up(check(2, {4, 3}, [](const auto& v) {
    return sum(slice_cols(concat_cols({v[0], v[1]}), 2, 3));
  }));
  up(check(1, {5, 3}, [](const auto& v) {
    return sqnorm(slice_rows(v[0], 1, 3));
  }));
  up(check(1, {4, 3}, [](const auto& v) { return sum(sum_axis(square(v[0]), 0)); }));
  up(check(1, {4, 3}, [](const auto& v) { return sum(sum_axis(square(v[0]), 1)); }));
  up(check(1, {4, 3}, [](const auto& v) { return mean(square(v[0])); }));
  up(check(1, {4, 3}, [](const auto& v) {
    return sum(square(reshape(v[0], {2, 6})));
  }));
  up(check(1, {4, 3}, [](const auto& v) {
    return sum(
        colwise_scale(v[0], make_tensor({4, 1}, {0.5, -1.5, 2.0, 0.7})));
  }));
  up(check(2, {1, 1}, [](const auto& v) {
    return sum(scale_by(repeat_rows(v[0], 2), v[1]));
  }));
  up(check(1, {3, 4}, [](const auto& v) {
    return sum(clamp_min(v[0], 0.25));
  }));
  return worst;
}

}  // namespace

SuiteResult verify_gradients(std::uint64_t seed, std::size_t n_seeds) {
  auto start = Clock::now();
  std::mt19937_64 rng(seed ^ 0x5b);
  SuiteResult res{"gradient_checks"};
  res.limit = 1e-4;
  res.worst = op_battery_fd(rng);
  ++res.cases;
  for (std::size_t s = 0; s < n_seeds; ++s) {
    res.worst = std::max(res.worst, composite_loss_fd(1100 + seed + s));
    ++res.cases;
  }
  res.passed = res.worst <= res.limit;
  res.seconds = elapsed(start);
  return res;
}

namespace {

double auroc_pairwise_oracle(const std::vector<double>& scores,
                             const std::vector<int>& labels) {
  double num = 0.0;
  std::size_t np = 0, nn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    ++np;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] == 1) continue;
      if (scores[i] > scores[j])
        num += 1.0;
      else if (scores[i] == scores[j])
        num += 0.5;
    }
  }
  for (int l : labels) nn += (l == 0);
  return num / ((double)np * (double)nn);
}

double auprc_threshold_oracle(const std::vector<double>& scores,
                              const std::vector<int>& labels) {
  std::set<double, std::greater<double>> thresholds(scores.begin(),
                                                    scores.end());
  double total_pos = 0.0;
  for (int l : labels) total_pos += (l == 1);
  double ap = 0.0, prev_recall = 0.0;
  for (double th : thresholds) {
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] < th) continue;
      if (labels[i] == 1)
        tp += 1.0;
      else
        fp += 1.0;
    }
    double recall = tp / total_pos;
    double precision = tp / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

}  // namespace

SuiteResult verify_metric_oracles(std::uint64_t seed,
                                  std::size_t n_instances) {
  auto start = Clock::now();
  std::mt19937_64 rng(seed ^ 0x6c);
  SuiteResult res{"metric_oracles"};
  res.limit = 0.0;  // exact match
  std::uniform_int_distribution<std::size_t> size(4, 50);
  std::uniform_int_distribution<int> quant(0, 6);  // heavy ties
  std::uniform_int_distribution<int> coin(0, 1);
  while (res.cases < n_instances) {
    std::size_t n = size(rng);
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = quant(rng) / 6.0;
      labels[i] = coin(rng);
    }
    bool has0 = false, has1 = false;
    for (int l : labels) (l ? has1 : has0) = true;
    if (!has0 || !has1) continue;
    res.worst = std::max(
        res.worst, std::abs(auroc(scores, labels) -
                            auroc_pairwise_oracle(scores, labels)));
    res.worst = std::max(
        res.worst, std::abs(auprc(scores, labels) -
                            auprc_threshold_oracle(scores, labels)));
    ++res.cases;
  }
  res.passed = res.worst <= res.limit;
  res.seconds = elapsed(start);
  return res;
}

std::vector<SuiteResult> verify_all(std::uint64_t seed, double scale) {
  auto n = [&](std::size_t base) {
    return std::max<std::size_t>(1, (std::size_t)std::llround(base * scale));
  };
  std::vector<SuiteResult> out;
  out.push_back(verify_identity(seed, n(10000)));
  out.push_back(verify_inversion(seed, n(1000)));
  out.push_back(verify_bilipschitz(seed, n(100), n(1000)));
  out.push_back(verify_bound_validity(seed, n(100)));
  out.push_back(verify_gradients(seed, n(20)));
  out.push_back(verify_metric_oracles(seed, n(200)));
  return out;
}

}  // namespace gsnf
