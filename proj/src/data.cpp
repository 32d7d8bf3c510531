#include "gsnf/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include <json.hpp>

namespace gsnf {

using nlohmann::json;

void IrregularSeries::validate() const {
  const std::size_t L = times.size(), D = n_vars();
  if (values.rows() != L || mask.rows() != L || mask.cols() != D)
    throw ValidationError("series: shape mismatch between times/values/mask");
  for (std::size_t k = 0; k < L; ++k) {
    if (times[k] < 0.0 || times[k] > 1.0)
      throw ValidationError("series: time outside [0,1] at index " +
                            std::to_string(k));
    if (k > 0 && times[k] <= times[k - 1])
      throw ValidationError("series: times not strictly increasing at index " +
                            std::to_string(k));
  }
  for (std::size_t i = 0; i < mask.size(); ++i) {
    double m = mask.at(i);
    if (m != 0.0 && m != 1.0)
      throw ValidationError("series: mask entry not binary");
    if (m == 0.0 && values.at(i) != 0.0)
      throw ValidationError("series: unmasked value at masked position");
  }
}

int Dataset::n_classes() const {
  int hi = -1;
  for (const auto& s : samples) hi = std::max(hi, s.label);
  return hi + 1;
}

void SynthSpec::validate() const {
  if (missing_rate < 0.0 || missing_rate >= 1.0)
    throw ValidationError("synth: missing_rate must lie in [0,1)");
  if (d_x == 0 || length == 0 || n_samples == 0 || grid_steps < 2)
    throw ValidationError("synth: dimensions must be positive");
  if (graph.size() > 0) {
    if (graph.rows() != d_x || graph.cols() != d_x)
      throw ValidationError("synth: graph must be d_x x d_x");
    for (std::size_t r = 0; r < d_x; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < d_x; ++c) s += graph.at(r, c);
      if (std::abs(s - 1.0) > 1e-9)
        throw ValidationError("synth: graph rows must sum to 1");
    }
  }
}

namespace {

IrregularSeries series_from_json(const json& rec, std::size_t line_no) {
  try {
    IrregularSeries s;
    s.times = rec.at("times").get<std::vector<double>>();
    auto vals = rec.at("values").get<std::vector<std::vector<double>>>();
    auto msk = rec.at("mask").get<std::vector<std::vector<double>>>();
    s.label = rec.at("label").get<int>();
    const std::size_t L = s.times.size();
    const std::size_t D = vals.empty() ? 0 : vals[0].size();
    std::vector<double> v, m;
    v.reserve(L * D);
    m.reserve(L * D);
    for (const auto& row : vals) {
      if (row.size() != D) throw ParseError("ragged values row");
      v.insert(v.end(), row.begin(), row.end());
    }
    for (const auto& row : msk) {
      if (row.size() != D) throw ParseError("ragged mask row");
      m.insert(m.end(), row.begin(), row.end());
    }
    s.values = make_tensor({L, D}, std::move(v));
    s.mask = make_tensor({L, D}, std::move(m));
    return s;
  } catch (const json::exception& e) {
    throw ParseError("dataset line " + std::to_string(line_no) + ": " +
                     e.what());
  }
}

}  // namespace

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open dataset file: " + path);
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("dataset line " + std::to_string(line_no) + ": " +
                       e.what());
    }
    IrregularSeries s = series_from_json(rec, line_no);
    try {
      s.validate();
    } catch (const ValidationError& e) {
      throw ValidationError("dataset line " + std::to_string(line_no) + ": " +
                            e.what());
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write dataset file: " + path);
  for (const auto& s : ds.samples) {
    json rec;
    rec["times"] = s.times;
    std::vector<std::vector<double>> vals, msk;
    for (std::size_t r = 0; r < s.length(); ++r) {
      std::vector<double> vrow(s.n_vars()), mrow(s.n_vars());
      for (std::size_t c = 0; c < s.n_vars(); ++c) {
        vrow[c] = s.values.at(r, c);
        mrow[c] = s.mask.at(r, c);
      }
      vals.push_back(std::move(vrow));
      msk.push_back(std::move(mrow));
    }
    rec["values"] = vals;
    rec["mask"] = msk;
    rec["label"] = s.label;
    out << rec.dump() << "\n";
  }
}

NormStats compute_stats(const Dataset& train) {
  const std::size_t D = train.n_vars();
  NormStats st;
  st.mean.assign(D, 0.0);
  st.stddev.assign(D, 1.0);
  std::vector<double> sum(D, 0.0), sumsq(D, 0.0), count(D, 0.0);
  for (const auto& s : train.samples)
    for (std::size_t r = 0; r < s.length(); ++r)
      for (std::size_t c = 0; c < D; ++c)
        if (s.mask.at(r, c) == 1.0) {
          double v = s.values.at(r, c);
          sum[c] += v;
          sumsq[c] += v * v;
          count[c] += 1.0;
        }
  for (std::size_t c = 0; c < D; ++c) {
    if (count[c] < 1.0) continue;  // keep (0,1) default
    st.mean[c] = sum[c] / count[c];
    double var = sumsq[c] / count[c] - st.mean[c] * st.mean[c];
    double sd = std::sqrt(std::max(var, 0.0));
    st.stddev[c] = sd < 1e-8 ? 1.0 : sd;
  }
  return st;
}

Dataset normalize_impute(const Dataset& ds, const NormStats& stats) {
  Dataset out;
  out.samples.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    IrregularSeries n = s;
    n.values = zeros({s.length(), s.n_vars()});
    for (std::size_t r = 0; r < s.length(); ++r)
      for (std::size_t c = 0; c < s.n_vars(); ++c)
        if (s.mask.at(r, c) == 1.0)
          (*n.values.data)[r * s.n_vars() + c] =
              (s.values.at(r, c) - stats.mean[c]) / stats.stddev[c];
    out.samples.push_back(std::move(n));
  }
  return out;
}

Dataset generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  auto random_graph = [&]() {
    Tensor logits = zeros({spec.d_x, spec.d_x});
    for (auto& v : *logits.data) v = 1.5 * gauss(rng);
    return softmax(logits, 1);
  };
  Tensor G = spec.graph;
  if (G.size() == 0) G = random_graph();
  Tensor G1 = spec.distinct_graphs ? random_graph() : G;
  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity((Eigen::Index)spec.d_x,
                                                  (Eigen::Index)spec.d_x);
  Eigen::MatrixXd drift_bases[2] = {G.map() - eye, G1.map() - eye};

  Dataset ds;
  const double dt = 1.0 / (double)(spec.grid_steps - 1);
  for (std::size_t n = 0; n < spec.n_samples; ++n) {
    int label = (int)(n % 2);  // balanced by construction
    double c = label == 0 ? spec.coupling_class0 : spec.coupling_class1;
    Eigen::MatrixXd drift = c * drift_bases[label];

    Eigen::VectorXd x((Eigen::Index)spec.d_x);
    for (auto& v : x) v = gauss(rng);
    std::vector<Eigen::VectorXd> grid;
    grid.reserve(spec.grid_steps);
    grid.push_back(x);
    for (std::size_t s = 1; s < spec.grid_steps; ++s) {
      // classic RK4 on the linear drift
      Eigen::VectorXd k1 = drift * x;
      Eigen::VectorXd k2 = drift * (x + 0.5 * dt * k1);
      Eigen::VectorXd k3 = drift * (x + 0.5 * dt * k2);
      Eigen::VectorXd k4 = drift * (x + dt * k3);
      x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      if (spec.noise_std > 0.0) {
        for (auto& v : x) v += spec.noise_std * std::sqrt(dt) * gauss(rng);
      }
      grid.push_back(x);
    }

    std::set<double> stamps;
    while (stamps.size() < spec.length) stamps.insert(uni(rng));
    IrregularSeries s;
    s.label = label;
    s.times.assign(stamps.begin(), stamps.end());
    s.values = zeros({spec.length, spec.d_x});
    s.mask = zeros({spec.length, spec.d_x});
    for (std::size_t k = 0; k < spec.length; ++k) {
      double t = s.times[k];
      double pos = t / dt;
      std::size_t lo = std::min((std::size_t)pos, spec.grid_steps - 2);
      double w = pos - (double)lo;
      for (std::size_t d = 0; d < spec.d_x; ++d) {
        bool observed = uni(rng) >= spec.missing_rate;
        if (!observed) continue;
        double v = (1.0 - w) * grid[lo]((Eigen::Index)d) +
                   w * grid[lo + 1]((Eigen::Index)d);
        (*s.values.data)[k * spec.d_x + d] = v;
        (*s.mask.data)[k * spec.d_x + d] = 1.0;
      }
    }
    s.validate();
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

SplitResult split(const Dataset& ds, double train_frac, double val_frac,
                  double test_frac, std::uint64_t seed) {
  if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
    throw UsageError("split: fractions must sum to 1");
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    by_label[ds.samples[i].label].push_back(i);
  for (const auto& [label, idx] : by_label)
    if (idx.size() < 3)
      throw ValidationError("split: class " + std::to_string(label) +
                            " has fewer than 3 samples");
  std::mt19937_64 rng(seed);
  SplitResult out;
  for (auto& [label, idx] : by_label) {
    std::shuffle(idx.begin(), idx.end(), rng);
    std::size_t n = idx.size();
    std::size_t n_train = (std::size_t)std::llround(train_frac * (double)n);
    std::size_t n_val = (std::size_t)std::llround(val_frac * (double)n);
    n_train = std::min(n_train, n - 2);
    if (n_train + n_val >= n) n_val = n - n_train - 1;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& s = ds.samples[idx[i]];
      if (i < n_train)
        out.train.samples.push_back(s);
      else if (i < n_train + n_val)
        out.val.samples.push_back(s);
      else
        out.test.samples.push_back(s);
    }
  }
  return out;
}

double centroid_baseline_accuracy(const Dataset& ds) {
  const std::size_t D = ds.n_vars();
  const int K = ds.n_classes();
  // per-variable observed means plus one cross-variable dispersion feature:
  // coupled dynamics pull variables toward consensus, so the average spread
  // across variables at a time point separates coupling strengths even when
  // every per-variable mean is centered at zero
  auto feature = [&](const IrregularSeries& s) {
    std::vector<double> f(D + 1, 0.0);
    for (std::size_t c = 0; c < D; ++c) {
      double sum = 0.0, cnt = 0.0;
      for (std::size_t r = 0; r < s.length(); ++r)
        if (s.mask.at(r, c) == 1.0) {
          sum += s.values.at(r, c);
          cnt += 1.0;
        }
      f[c] = cnt > 0 ? sum / cnt : 0.0;
    }
    double disp_sum = 0.0, disp_cnt = 0.0;
    for (std::size_t r = 0; r < s.length(); ++r) {
      double m = 0.0, m2 = 0.0, cnt = 0.0;
      for (std::size_t c = 0; c < D; ++c)
        if (s.mask.at(r, c) == 1.0) {
          m += s.values.at(r, c);
          m2 += s.values.at(r, c) * s.values.at(r, c);
          cnt += 1.0;
        }
      if (cnt >= 2.0) {
        m /= cnt;
        disp_sum += std::sqrt(std::max(m2 / cnt - m * m, 0.0));
        disp_cnt += 1.0;
      }
    }
    f[D] = disp_cnt > 0 ? disp_sum / disp_cnt : 0.0;
    return f;
  };
  const std::size_t F = D + 1;
  std::vector<std::vector<double>> centroid((std::size_t)K,
                                            std::vector<double>(F, 0.0));
  std::vector<double> count((std::size_t)K, 0.0);
  for (const auto& s : ds.samples) {
    auto f = feature(s);
    for (std::size_t c = 0; c < F; ++c) centroid[(std::size_t)s.label][c] += f[c];
    count[(std::size_t)s.label] += 1.0;
  }
  for (int k = 0; k < K; ++k)
    for (std::size_t c = 0; c < F; ++c)
      if (count[(std::size_t)k] > 0) centroid[(std::size_t)k][c] /= count[(std::size_t)k];
  double hits = 0.0;
  for (const auto& s : ds.samples) {
    auto f = feature(s);
    int best = 0;
    double best_d = 1e300;
    for (int k = 0; k < K; ++k) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < F; ++c) {
        double d = f[c] - centroid[(std::size_t)k][c];
        d2 += d * d;
      }
      if (d2 < best_d) {
        best_d = d2;
        best = k;
      }
    }
    if (best == s.label) hits += 1.0;
  }
  return ds.samples.empty() ? 0.0 : hits / (double)ds.samples.size();
}

SynthSpec synth_spec_from_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open synth spec: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(std::string("synth spec: ") + e.what());
  }
  SynthSpec spec;
  spec.d_x = j.value("d_x", spec.d_x);
  spec.length = j.value("length", spec.length);
  spec.n_samples = j.value("n_samples", spec.n_samples);
  spec.missing_rate = j.value("missing_rate", spec.missing_rate);
  spec.noise_std = j.value("noise_std", spec.noise_std);
  spec.coupling_class0 = j.value("coupling_class0", spec.coupling_class0);
  spec.coupling_class1 = j.value("coupling_class1", spec.coupling_class1);
  spec.seed = j.value("seed", spec.seed);
  spec.grid_steps = j.value("grid_steps", spec.grid_steps);
  spec.distinct_graphs = j.value("distinct_graphs", spec.distinct_graphs);
  if (j.contains("graph")) {
    auto rows = j["graph"].get<std::vector<std::vector<double>>>();
    std::vector<double> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    spec.graph = make_tensor({rows.size(), rows.empty() ? 0 : rows[0].size()},
                             std::move(flat));
  }
  spec.validate();
  return spec;
}

}  // namespace gsnf
