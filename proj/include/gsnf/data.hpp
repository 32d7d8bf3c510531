#pragma once

#include <string>
#include <vector>

#include "gsnf/tensor.hpp"

namespace gsnf {

/// One labeled sample of an irregularly sampled multivariate series.
/// Times are strictly increasing in [0,1]; values are zero-imputed where the
/// mask is 0.
struct IrregularSeries {
  std::vector<double> times;
  Tensor values;  // L x D
  Tensor mask;    // L x D, entries in {0,1}
  int label = 0;

  std::size_t length() const { return times.size(); }
  std::size_t n_vars() const { return values.cols(); }
  void validate() const;
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

struct Dataset {
  std::vector<IrregularSeries> samples;
  std::size_t n_vars() const {
    return samples.empty() ? 0 : samples[0].n_vars();
  }
  int n_classes() const;
};

/// Synthetic coupled-ODE generator: dx/dt = c (G - I) x + noise, classes
/// differ by coupling strength.
struct SynthSpec {
  std::size_t d_x = 8;
  std::size_t length = 32;
  std::size_t n_samples = 600;
  double missing_rate = 0.5;
  double noise_std = 0.0;
  double coupling_class0 = 0.0;
  double coupling_class1 = 4.0;
  std::uint64_t seed = 0;
  std::size_t grid_steps = 512;
  Tensor graph;  // ground-truth row-stochastic adjacency; random if empty
  // when true, class 1 evolves under an independent random graph instead of
  // sharing `graph`, so the classes differ by interaction structure
  bool distinct_graphs = false;

  void validate() const;
};

Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& ds, const std::string& path);

/// Per-variable mean/std over observed entries of the given (training) split.
/// Degenerate variables (no observations or near-zero spread) get (0, 1).
NormStats compute_stats(const Dataset& train);

/// Standardizes observed entries with the given stats and re-imputes masked
/// entries to exactly 0.
Dataset normalize_impute(const Dataset& ds, const NormStats& stats);

Dataset generate_synthetic(const SynthSpec& spec);

struct SplitResult {
  Dataset train, val, test;
};

/// Seeded label-stratified split; fractions must sum to 1.
SplitResult split(const Dataset& ds, double train_frac, double val_frac,
                  double test_frac, std::uint64_t seed);

/// Nearest-centroid accuracy on per-variable observed means; an independent
/// separability check for synthetic datasets.
double centroid_baseline_accuracy(const Dataset& ds);

SynthSpec synth_spec_from_json(const std::string& path);

}  // namespace gsnf
