#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "gsnf/inference.hpp"
#include "testutil.hpp"

using namespace gsnf;
using testutil::max_grad_rel_error;
using testutil::randn;

namespace {

IrregularSeries random_series(std::size_t L, std::size_t D,
                              std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  IrregularSeries s;
  std::set<double> ts;
  while (ts.size() < L) ts.insert(uni(rng));
  s.times.assign(ts.begin(), ts.end());
  s.values = randn({L, D}, rng);
  s.mask = full({L, D}, 1.0);
  return s;
}

GraphHeads random_heads(std::size_t D, std::mt19937_64& rng) {
  GraphHeads h;
  h.wq = randn({1, D}, rng);
  h.wk = randn({1, D}, rng);
  h.h_a = random_ff(D * D, D * D, 16, 1, rng);
  for (auto& b : h.h_a.b)
    for (auto& v : *b.data) v = 0.1 * std::normal_distribution<double>()(rng);
  return h;
}

}  // namespace

TEST_CASE("segment means") {
  std::mt19937_64 rng(1);
  SUBCASE("constant series gives the constant in every segment") {
    IrregularSeries s = random_series(8, 3, rng);
    s.values = full({8, 3}, 2.5);
    auto means = segment_means(s, 4);
    REQUIRE(means.size() == 4);
    for (const auto& m : means)
      for (std::size_t i = 0; i < 3; ++i) CHECK(m.at(i) == doctest::Approx(2.5));
  }
  SUBCASE("C = 1 gives the global mean") {
    IrregularSeries s = random_series(6, 2, rng);
    auto means = segment_means(s, 1);
    REQUIRE(means.size() == 1);
    for (std::size_t c = 0; c < 2; ++c) {
      double g = 0;
      for (std::size_t r = 0; r < 6; ++r) g += s.values.at(r, c);
      CHECK(means[0].at(c) == doctest::Approx(g / 6.0));
    }
  }
  SUBCASE("ramp 1..8 over four segments") {
    IrregularSeries s = random_series(8, 1, rng);
    for (std::size_t r = 0; r < 8; ++r) (*s.values.data)[r] = (double)(r + 1);
    auto means = segment_means(s, 4);
    double expect[] = {1.5, 3.5, 5.5, 7.5};
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(means[i].at(0) == doctest::Approx(expect[i]));
  }
  SUBCASE("remainder goes to the last segment") {
    IrregularSeries s = random_series(7, 1, rng);
    auto means = segment_means(s, 3);  // spans 2, 2, 3
    double last = (s.values.at(4, 0) + s.values.at(5, 0) + s.values.at(6, 0)) / 3.0;
    CHECK(means[2].at(0) == doctest::Approx(last));
  }
  SUBCASE("too many segments is a usage error") {
    IrregularSeries s = random_series(3, 1, rng);
    CHECK_THROWS_AS(segment_means(s, 4), UsageError);
  }
}

TEST_CASE("attention adjacency") {
  std::mt19937_64 rng(2);
  SUBCASE("zero input gives the uniform matrix") {
    Tensor A = attention_adjacency(zeros({1, 3}), randn({1, 3}, rng),
                                   randn({1, 3}, rng));
    for (std::size_t i = 0; i < 9; ++i) CHECK(A.at(i) == doctest::Approx(1.0 / 3));
  }
  SUBCASE("identical features give identical rows") {
    Tensor A = attention_adjacency(full({1, 4}, 1.7), randn({1, 4}, rng),
                                   randn({1, 4}, rng));
    for (std::size_t r = 1; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c)
        CHECK(A.at(r, c) == doctest::Approx(A.at(0, c)).epsilon(1e-14));
  }
  SUBCASE("matches a scalar reference evaluation for D_x = 2") {
    Tensor xbar = make_tensor({1, 2}, {1.0, 2.0});
    Tensor wq = make_tensor({1, 2}, {0.3, -0.2});
    Tensor wk = make_tensor({1, 2}, {0.1, 0.5});
    Tensor A = attention_adjacency(xbar, wq, wk);
    // scalar reference: q_i = xbar_i * wq, k_j = xbar_j * wk,
    // logit_ij = (q_i . k_j) / sqrt(2)
    double qk = 0.3 * 0.1 + (-0.2) * 0.5;  // wq . wk
    auto logit = [&](double xi, double xj) { return xi * xj * qk / std::sqrt(2.0); };
    for (std::size_t i = 0; i < 2; ++i) {
      double xi = xbar.at(i);
      double l0 = logit(xi, 1.0), l1 = logit(xi, 2.0);
      double m = std::max(l0, l1);
      double z = std::exp(l0 - m) + std::exp(l1 - m);
      CHECK(A.at(i, 0) == doctest::Approx(std::exp(l0 - m) / z).epsilon(1e-14));
      CHECK(A.at(i, 1) == doctest::Approx(std::exp(l1 - m) / z).epsilon(1e-14));
    }
  }
  SUBCASE("rows are always stochastic") {
    for (int t = 0; t < 50; ++t) {
      Tensor A = attention_adjacency(randn({1, 5}, rng), randn({1, 5}, rng),
                                     randn({1, 5}, rng));
      CHECK_NOTHROW(check_row_stochastic(A, 1e-9));
    }
  }
}

TEST_CASE("kl divergence to the standard normal") {
  CHECK(kl_diag_gaussian(zeros({1, 3}), full({1, 3}, 1.0)).value() ==
        doctest::Approx(0.0));
  CHECK(kl_diag_gaussian(full({1, 1}, 1.0), full({1, 1}, 1.0)).value() ==
        doctest::Approx(0.5));
  CHECK_THROWS_AS(kl_diag_gaussian(zeros({1, 1}), zeros({1, 1})), UsageError);

  SUBCASE("matches a Monte-Carlo estimate of E_q[log q - log p]") {
    std::mt19937_64 rng(3);
    Tensor mu = make_tensor({1, 2}, {0.7, -0.4});
    Tensor sg = make_tensor({1, 2}, {0.6, 1.8});
    double kl = kl_diag_gaussian(mu, sg).value();
    const int N = 1000000;
    std::normal_distribution<double> gauss(0.0, 1.0);
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < N; ++i) {
      double term = 0.0;
      for (int d = 0; d < 2; ++d) {
        double m = mu.at((std::size_t)d), s = sg.at((std::size_t)d);
        double eps = gauss(rng);
        double x = m + s * eps;
        term += -std::log(s) - 0.5 * eps * eps + 0.5 * x * x;
      }
      sum += term;
      sumsq += term * term;
    }
    double mean = sum / N;
    double se = std::sqrt((sumsq / N - mean * mean) / N);
    CHECK(std::abs(kl - mean) <= 3.0 * se);
  }

  SUBCASE("per-row variant sums to the total") {
    std::mt19937_64 rng(4);
    Tensor mu = randn({5, 3}, rng);
    Tensor sg = softplus(randn({5, 3}, rng));
    Tensor rows = kl_diag_gaussian_rows(mu, sg);
    double total = 0.0;
    for (std::size_t r = 0; r < 5; ++r) {
      CHECK(rows.at(r) >= 0.0);
      total += rows.at(r);
    }
    CHECK(total == doctest::Approx(kl_diag_gaussian(mu, sg).value()));
  }
}

TEST_CASE("graph posterior weights") {
  std::mt19937_64 rng(5);
  SUBCASE("weights are the recomputed KL ratios and sum to one") {
    IrregularSeries s = random_series(12, 3, rng);
    GraphHeads heads = random_heads(3, rng);
    GraphPosterior gp = graph_posterior(s, 4, heads);
    REQUIRE(gp.segments.size() == 4);
    double total = 0.0, wsum = 0.0;
    for (const auto& seg : gp.segments) {
      CHECK(seg.kl.value() >= 0.0);
      for (std::size_t i = 0; i < seg.sigma.size(); ++i)
        CHECK(seg.sigma.at(i) > 0.0);
      CHECK_NOTHROW(check_row_stochastic(seg.adjacency, 1e-9));
      total += seg.kl.value();
    }
    for (std::size_t i = 0; i < 4; ++i) {
      double w = gp.weights.at(i);
      CHECK(w >= 0.0);
      CHECK(w == doctest::Approx(gp.segments[i].kl.value() / total).epsilon(1e-12));
      wsum += w;
    }
    CHECK(wsum == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("identical segments get uniform weights") {
    IrregularSeries s = random_series(8, 2, rng);
    // same values in every segment row
    for (std::size_t r = 0; r < 8; ++r) {
      (*s.values.data)[2 * r] = 1.0;
      (*s.values.data)[2 * r + 1] = -2.0;
    }
    GraphPosterior gp = graph_posterior(s, 4, random_heads(2, rng));
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(gp.weights.at(i) == doctest::Approx(0.25).epsilon(1e-12));
  }
}

TEST_CASE("adjacency sampling") {
  std::mt19937_64 rng(6);
  IrregularSeries s = random_series(8, 3, rng);
  GraphHeads heads = random_heads(3, rng);
  GraphPosterior gp = graph_posterior(s, 4, heads);

  SUBCASE("zero noise gives the row-softmax of the weighted means") {
    Tensor A = sample_adjacency(gp, zeros({3, 3}));
    Tensor avg = zeros({1, 9});
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t i = 0; i < 9; ++i)
        (*avg.data)[i] += gp.weights.at(k) * gp.segments[k].mu.at(i);
    Tensor expect = softmax(reshape(avg, {3, 3}), 1);
    for (std::size_t i = 0; i < 9; ++i)
      CHECK(A.at(i) == doctest::Approx(expect.at(i)).epsilon(1e-12));
  }
  SUBCASE("samples are row-stochastic and concentrate on the mean path") {
    // shrink sigma to 0.1 by editing mu/sigma directly
    for (auto& seg : gp.segments) {
      seg.sigma = full({1, 9}, 0.1);
    }
    Tensor center = sample_adjacency(gp, zeros({3, 3}));
    const int N = 10000;
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> acc(9, 0.0), acc2(9, 0.0);
    for (int n = 0; n < N; ++n) {
      Tensor noise = zeros({3, 3});
      for (auto& v : *noise.data) v = gauss(rng);
      Tensor A = sample_adjacency(gp, noise);
      CHECK_NOTHROW(check_row_stochastic(A, 1e-9));
      for (std::size_t i = 0; i < 9; ++i) {
        acc[i] += A.at(i);
        acc2[i] += A.at(i) * A.at(i);
      }
    }
    for (std::size_t i = 0; i < 9; ++i) {
      double m = acc[i] / N;
      double se = std::sqrt((acc2[i] / N - m * m) / N);
      // 3 standard errors plus a second-order Jensen allowance of O(sigma^2)
      CHECK(std::abs(m - center.at(i)) <= 3.0 * se + 0.01);
    }
  }
}

TEST_CASE("observation encoder") {
  std::mt19937_64 rng(7);
  FeedForward enc = random_ff(6, 4, 16, 2, rng);
  SUBCASE("zero input with zero biases maps to zero") {
    Tensor z = encode_observations(enc, zeros({2, 3}), zeros({2, 3}));
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(z.at(i) == 0.0);
  }
  SUBCASE("pure function") {
    Tensor x = randn({3, 3}, rng), m = full({3, 3}, 1.0);
    Tensor a = encode_observations(enc, x, m);
    Tensor b = encode_observations(enc, x, m);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.at(i) == b.at(i));
  }
  SUBCASE("weight gradients match finite differences") {
    Tensor x = randn({2, 3}, rng), m = full({2, 3}, 1.0);
    std::vector<Tensor> inputs;
    for (auto& w : enc.w) inputs.push_back(w);
    for (auto& b : enc.b) inputs.push_back(b);
    auto fn = [&](const std::vector<Tensor>& v) {
      FeedForward net;
      std::size_t half = v.size() / 2;
      for (std::size_t i = 0; i < half; ++i) net.w.push_back(v[i]);
      for (std::size_t i = 0; i < half; ++i) net.b.push_back(v[half + i]);
      return sqnorm(encode_observations(net, x, m));
    };
    CHECK(max_grad_rel_error(inputs, fn) <= 1e-4);
  }
}

TEST_CASE("latent posterior") {
  std::mt19937_64 rng(8);
  SUBCASE("observation at t = 0 reduces to heads on the raw encoding") {
    IrregularSeries s;
    s.times = {0.0};
    s.values = randn({1, 3}, rng);
    s.mask = full({1, 3}, 1.0);
    GraphHeads heads = random_heads(3, rng);
    GraphPosterior gp = graph_posterior(s, 1, heads);
    FeedForward enc = random_ff(6, 3, 16, 2, rng);
    FeedForward hz = random_ff(3, 3, 16, 1, rng);
    FlowStack stack{{random_layer(3, rng)}};
    Tensor z = encode_observations(enc, s.values, s.mask);
    LatentPosterior lp = latent_posterior(s, z, gp, stack, hz);
    Tensor direct = ff_apply(hz, z);
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(lp.mu.at(i) == direct.at(i));
  }
  SUBCASE("shapes, positivity, and per-point kl") {
    std::size_t L = 10, D = 4;
    IrregularSeries s = random_series(L, D, rng);
    GraphHeads heads = random_heads(D, rng);
    GraphPosterior gp = graph_posterior(s, 4, heads);
    FeedForward enc = random_ff(2 * D, D, 16, 2, rng);
    FeedForward hz = random_ff(D, D, 16, 1, rng);
    FlowStack stack{{random_layer(D, rng), random_layer(D, rng)}};
    Tensor z = encode_observations(enc, s.values, s.mask);
    LatentPosterior lp = latent_posterior(s, z, gp, stack, hz);
    CHECK(lp.mu.rows() == L);
    CHECK(lp.sigma.rows() == L);
    CHECK(lp.kl.rows() == L);
    for (std::size_t i = 0; i < lp.sigma.size(); ++i) CHECK(lp.sigma.at(i) > 0.0);
    for (std::size_t r = 0; r < L; ++r) CHECK(lp.kl.at(r) >= 0.0);
  }
}

TEST_CASE("moment-matched z0 sampling") {
  std::mt19937_64 rng(9);
  SUBCASE("single point reduces to the reparameterized draw") {
    LatentPosterior lp;
    lp.mu = make_tensor({1, 2}, {0.5, -1.0});
    lp.sigma = make_tensor({1, 2}, {0.3, 2.0});
    Tensor noise = make_tensor({1, 2}, {1.0, -0.5});
    Tensor z0 = sample_z0(lp, noise);
    CHECK(z0.at(0) == doctest::Approx(0.5 + 0.3 * 1.0).epsilon(1e-9));
    CHECK(z0.at(1) == doctest::Approx(-1.0 + 2.0 * (-0.5)).epsilon(1e-9));
  }
  SUBCASE("matches the mixture's first two moments") {
    LatentPosterior lp;
    lp.mu = randn({6, 3}, rng);
    lp.sigma = softplus(randn({6, 3}, rng));
    // oracle: uniform-mixture mean and variance per dimension
    for (std::size_t d = 0; d < 3; ++d) {
      double m = 0, v = 0;
      for (std::size_t k = 0; k < 6; ++k) m += lp.mu.at(k, d) / 6.0;
      for (std::size_t k = 0; k < 6; ++k) {
        double mu = lp.mu.at(k, d), sg = lp.sigma.at(k, d);
        v += (sg * sg + (mu - m) * (mu - m)) / 6.0;
      }
      Tensor mean_draw = sample_z0(lp, zeros({1, 3}));
      Tensor unit = zeros({1, 3});
      (*unit.data)[d] = 1.0;
      Tensor shifted = sample_z0(lp, unit);
      CHECK(mean_draw.at(d) == doctest::Approx(m).epsilon(1e-12));
      double std_d = shifted.at(d) - mean_draw.at(d);
      CHECK(std_d * std_d == doctest::Approx(v).epsilon(1e-9));
    }
  }
}

TEST_CASE("inference pipeline gradients match finite differences") {
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(700 + seed);
    std::size_t L = 6, D = 2;
    IrregularSeries s = random_series(L, D, rng);
    GraphHeads proto = random_heads(D, rng);
    FeedForward enc = random_ff(2 * D, D, 6, 1, rng);
    FeedForward hz = random_ff(D, D, 6, 1, rng);
    FlowStack stack{{random_layer(D, rng, false, 0.45, 6)}};
    Tensor a_noise = randn({D, D}, rng);
    Tensor z_noise = randn({1, D}, rng);

    std::vector<Tensor> inputs = {proto.wq, proto.wk};
    for (auto& w : proto.h_a.w) inputs.push_back(w);
    for (auto& b : proto.h_a.b) inputs.push_back(b);
    for (auto& w : enc.w) inputs.push_back(w);
    for (auto& b : enc.b) inputs.push_back(b);
    for (auto& w : hz.w) inputs.push_back(w);
    for (auto& b : hz.b) inputs.push_back(b);

    auto fn = [&](const std::vector<Tensor>& v) {
      GraphHeads heads;
      heads.wq = v[0];
      heads.wk = v[1];
      std::size_t i = 2;
      for (std::size_t k = 0; k < proto.h_a.w.size(); ++k) heads.h_a.w.push_back(v[i++]);
      for (std::size_t k = 0; k < proto.h_a.b.size(); ++k) heads.h_a.b.push_back(v[i++]);
      FeedForward e, z;
      for (std::size_t k = 0; k < enc.w.size(); ++k) e.w.push_back(v[i++]);
      for (std::size_t k = 0; k < enc.b.size(); ++k) e.b.push_back(v[i++]);
      for (std::size_t k = 0; k < hz.w.size(); ++k) z.w.push_back(v[i++]);
      for (std::size_t k = 0; k < hz.b.size(); ++k) z.b.push_back(v[i++]);
      GraphPosterior gp = graph_posterior(s, 3, heads);
      Tensor A = sample_adjacency(gp, a_noise);
      Tensor encd = encode_observations(e, s.values, s.mask);
      LatentPosterior lp = latent_posterior(s, encd, gp, stack, z);
      Tensor z0 = sample_z0(lp, z_noise);
      return add(sqnorm(A), add(sqnorm(z0), sum(lp.kl)));
    };
    CHECK(max_grad_rel_error(inputs, fn) <= 1e-4);
  }
}
