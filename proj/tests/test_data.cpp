#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>

#include "gsnf/data.hpp"

using namespace gsnf;

namespace {

IrregularSeries tiny_series() {
  IrregularSeries s;
  s.times = {0.1, 0.5, 0.9};
  s.values = make_tensor({3, 2}, {1.0, 0.0, 2.0, -1.0, 0.0, 3.0});
  s.mask = make_tensor({3, 2}, {1, 0, 1, 1, 0, 1});
  s.label = 1;
  return s;
}

}  // namespace

TEST_CASE("series validation catches malformed samples") {
  IrregularSeries s = tiny_series();
  CHECK_NOTHROW(s.validate());

  SUBCASE("non-increasing times") {
    s.times[1] = 0.1;
    CHECK_THROWS_AS(s.validate(), ValidationError);
  }
  SUBCASE("time outside unit interval") {
    s.times[2] = 1.5;
    CHECK_THROWS_AS(s.validate(), ValidationError);
  }
  SUBCASE("non-binary mask") {
    (*s.mask.data)[0] = 0.5;
    CHECK_THROWS_AS(s.validate(), ValidationError);
  }
  SUBCASE("value at masked position") {
    (*s.values.data)[1] = 7.0;
    CHECK_THROWS_AS(s.validate(), ValidationError);
  }
  SUBCASE("shape mismatch") {
    s.times.push_back(0.95);
    CHECK_THROWS_AS(s.validate(), ValidationError);
  }
}

TEST_CASE("dataset serialization round trip is exact") {
  Dataset ds;
  ds.samples.push_back(tiny_series());
  IrregularSeries other = tiny_series();
  other.label = 0;
  other.times = {0.0, 0.25, 1.0};
  ds.samples.push_back(other);

  std::string path = "roundtrip_test.jsonl";
  save_dataset(ds, path);
  Dataset back = load_dataset(path);
  std::remove(path.c_str());

  REQUIRE(back.samples.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.samples[i].label == ds.samples[i].label);
    CHECK(back.samples[i].times == ds.samples[i].times);
    for (std::size_t j = 0; j < ds.samples[i].values.size(); ++j) {
      CHECK(back.samples[i].values.at(j) == ds.samples[i].values.at(j));
      CHECK(back.samples[i].mask.at(j) == ds.samples[i].mask.at(j));
    }
  }
}

TEST_CASE("loader reports the offending line") {
  std::string path = "badline_test.jsonl";
  {
    std::ofstream out(path);
    out << R"({"times":[0.1],"values":[[1.0]],"mask":[[1]],"label":0})" << "\n";
    out << "{not json\n";
  }
  try {
    load_dataset(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("normalization stats use only observed entries") {
  Dataset ds;
  ds.samples.push_back(tiny_series());
  NormStats st = compute_stats(ds);
  // variable 0 observed at {1, 2}; variable 1 observed at {-1, 3}
  CHECK(st.mean[0] == doctest::Approx(1.5));
  CHECK(st.stddev[0] == doctest::Approx(0.5));
  CHECK(st.mean[1] == doctest::Approx(1.0));
  CHECK(st.stddev[1] == doctest::Approx(2.0));

  Dataset norm = normalize_impute(ds, st);
  const auto& s = norm.samples[0];
  CHECK(s.values.at(0, 0) == doctest::Approx(-1.0));
  CHECK(s.values.at(1, 0) == doctest::Approx(1.0));
  CHECK(s.values.at(1, 1) == doctest::Approx(-1.0));
  CHECK(s.values.at(2, 1) == doctest::Approx(1.0));
  // masked positions stay exactly zero
  CHECK(s.values.at(0, 1) == 0.0);
  CHECK(s.values.at(2, 0) == 0.0);
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("constant variable gets unit stddev") {
  Dataset ds;
  IrregularSeries s;
  s.times = {0.2, 0.6};
  s.values = make_tensor({2, 1}, {3.0, 3.0});
  s.mask = make_tensor({2, 1}, {1, 1});
  ds.samples.push_back(s);
  NormStats st = compute_stats(ds);
  CHECK(st.stddev[0] == 1.0);
  Dataset norm = normalize_impute(ds, st);
  CHECK(norm.samples[0].values.at(0) == 0.0);
}

TEST_CASE("synthetic generator produces valid balanced datasets") {
  SynthSpec spec;
  spec.d_x = 4;
  spec.length = 16;
  spec.n_samples = 40;
  spec.missing_rate = 0.4;
  spec.seed = 7;
  Dataset ds = generate_synthetic(spec);
  REQUIRE(ds.samples.size() == 40);
  int c0 = 0, c1 = 0;
  double observed = 0.0, total = 0.0;
  for (const auto& s : ds.samples) {
    CHECK_NOTHROW(s.validate());
    CHECK(s.length() == 16);
    CHECK(s.n_vars() == 4);
    (s.label == 0 ? c0 : c1)++;
    for (std::size_t i = 0; i < s.mask.size(); ++i) observed += s.mask.at(i);
    total += (double)s.mask.size();
  }
  CHECK(c0 == 20);
  CHECK(c1 == 20);
  CHECK(observed / total == doctest::Approx(0.6).epsilon(0.1));
}

TEST_CASE("generator is deterministic in the seed") {
  SynthSpec spec;
  spec.d_x = 3;
  spec.length = 8;
  spec.n_samples = 6;
  spec.seed = 11;
  Dataset a = generate_synthetic(spec);
  Dataset b = generate_synthetic(spec);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].times == b.samples[i].times);
    for (std::size_t j = 0; j < a.samples[i].values.size(); ++j)
      CHECK(a.samples[i].values.at(j) == b.samples[i].values.at(j));
  }
  spec.seed = 12;
  Dataset c = generate_synthetic(spec);
  CHECK(a.samples[0].times != c.samples[0].times);
}

TEST_CASE("distinct_graphs gives class 1 its own dynamics") {
  SynthSpec spec;
  spec.d_x = 3;
  spec.length = 8;
  spec.n_samples = 6;
  spec.missing_rate = 0.0;
  spec.coupling_class0 = 3.0;
  spec.coupling_class1 = 3.0;
  spec.seed = 11;
  spec.graph = make_tensor({3, 3},
                           {0.2, 0.5, 0.3, 0.5, 0.2, 0.3, 0.3, 0.3, 0.4});
  Dataset shared = generate_synthetic(spec);
  spec.distinct_graphs = true;
  Dataset twog = generate_synthetic(spec);
  Dataset twog2 = generate_synthetic(spec);
  // deterministic, and the second graph actually changes class-1 values
  bool class1_differs = false;
  for (std::size_t i = 0; i < twog.samples.size(); ++i) {
    for (std::size_t j = 0; j < twog.samples[i].values.size(); ++j) {
      CHECK(twog.samples[i].values.at(j) == twog2.samples[i].values.at(j));
      if (twog.samples[i].label == 1 &&
          twog.samples[i].values.at(j) != shared.samples[i].values.at(j))
        class1_differs = true;
    }
  }
  CHECK(class1_differs);
}

TEST_CASE("integrator conserves the doubly-stochastic invariant") {
  // For dx/dt = c (G - I) x with G doubly stochastic, sum_i x_i(t) is exactly
  // conserved; RK4 error and interpolation error must keep it well below 1e-6.
  Tensor Gd = make_tensor({3, 3},
                          {0.2, 0.5, 0.3, 0.5, 0.2, 0.3, 0.3, 0.3, 0.4});
  SynthSpec inv;
  inv.d_x = 3;
  inv.length = 12;
  inv.n_samples = 4;
  inv.missing_rate = 0.0;
  inv.coupling_class0 = 2.0;
  inv.coupling_class1 = 5.0;
  inv.seed = 9;
  inv.graph = Gd;
  Dataset conserved = generate_synthetic(inv);
  for (const auto& s : conserved.samples) {
    double first = 0.0;
    for (std::size_t d = 0; d < 3; ++d) first += s.values.at(0, d);
    for (std::size_t k = 1; k < s.length(); ++k) {
      double sum = 0.0;
      for (std::size_t d = 0; d < 3; ++d) sum += s.values.at(k, d);
      CHECK(sum == doctest::Approx(first).epsilon(1e-6));
    }
  }
}

TEST_CASE("coupled classes are separable by the centroid baseline") {
  SynthSpec spec;
  spec.d_x = 6;
  spec.length = 24;
  spec.n_samples = 100;
  spec.missing_rate = 0.3;
  spec.coupling_class0 = 0.0;
  spec.coupling_class1 = 6.0;
  spec.seed = 3;
  Dataset ds = generate_synthetic(spec);
  CHECK(centroid_baseline_accuracy(ds) > 0.6);
}

TEST_CASE("stratified split preserves proportions without leakage") {
  SynthSpec spec;
  spec.d_x = 2;
  spec.length = 6;
  spec.n_samples = 100;
  spec.seed = 21;
  Dataset ds = generate_synthetic(spec);
  SplitResult sp = split(ds, 0.8, 0.1, 0.1, 123);
  CHECK(sp.train.samples.size() == 80);
  CHECK(sp.val.samples.size() == 10);
  CHECK(sp.test.samples.size() == 10);
  auto count1 = [](const Dataset& d) {
    int c = 0;
    for (const auto& s : d.samples) c += s.label;
    return c;
  };
  CHECK(count1(sp.train) == 40);
  CHECK(count1(sp.val) == 5);
  CHECK(count1(sp.test) == 5);
  // no sample appears in two splits (timestamps are a.s. unique keys)
  std::map<double, int> seen;
  for (const auto* d : {&sp.train, &sp.val, &sp.test})
    for (const auto& s : d->samples) seen[s.times[0]]++;
  for (const auto& [t, c] : seen) CHECK(c == 1);
  // deterministic in the seed
  SplitResult sp2 = split(ds, 0.8, 0.1, 0.1, 123);
  CHECK(sp2.train.samples[0].times == sp.train.samples[0].times);
}

TEST_CASE("split rejects undersized classes and bad fractions") {
  SynthSpec spec;
  spec.d_x = 2;
  spec.length = 4;
  spec.n_samples = 4;  // two per class
  spec.seed = 1;
  Dataset ds = generate_synthetic(spec);
  CHECK_THROWS_AS(split(ds, 0.8, 0.1, 0.1, 0), ValidationError);
  spec.n_samples = 30;
  Dataset ok = generate_synthetic(spec);
  CHECK_THROWS_AS(split(ok, 0.5, 0.1, 0.1, 0), UsageError);
}

TEST_CASE("synth spec json parsing") {
  std::string path = "spec_test.json";
  {
    std::ofstream out(path);
    out << R"({"d_x": 3, "length": 9, "n_samples": 12, "missing_rate": 0.2,)"
        << R"( "coupling_class1": 2.5, "seed": 4})";
  }
  SynthSpec spec = synth_spec_from_json(path);
  std::remove(path.c_str());
  CHECK(spec.d_x == 3);
  CHECK(spec.length == 9);
  CHECK(spec.n_samples == 12);
  CHECK(spec.missing_rate == doctest::Approx(0.2));
  CHECK(spec.coupling_class1 == doctest::Approx(2.5));
  CHECK(spec.grid_steps == 512);  // default preserved

  {
    std::ofstream out(path);
    out << R"({"missing_rate": 1.5})";
  }
  CHECK_THROWS_AS(synth_spec_from_json(path), ValidationError);
  std::remove(path.c_str());
}
