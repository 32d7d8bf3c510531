#pragma once

#include <cstdint>

#include "gsnf/data.hpp"
#include "gsnf/model.hpp"

namespace gsnf {

struct TrainConfig {
  ModelConfig model;
  LossWeights weights;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  std::size_t batch_size = 50;
  std::size_t scheduler_step = 20;  // epochs between lr halvings
  double scheduler_decay = 0.5;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  double early_stop_auroc = 0.0;  // stop once val AUROC reaches this; 0 = off

  void validate() const;
};

/// Per-step loss breakdown, averaged over the batch. delta_mean and
/// bound_zero only carry information in derived-margin mode.
struct StepBreakdown {
  double total = 0, l_vae = 0, l_ce = 0, l_itg = 0, l_rtg = 0;
  double delta_mean = 0;
  std::size_t bound_zero = 0;  // samples that hit the B = 0 fallback
  std::size_t n_samples = 0;
};

struct TrainState {
  GsnfModel model;
  std::vector<double> adam_m, adam_v;  // flat, in named_parameters order
  std::size_t step = 0;
  double lr = 0;
  TrainConfig config;
};

TrainState init_train_state(const TrainConfig& cfg);

/// base_lr * decay^floor(epoch / step_every).
double scheduler_lr(std::size_t epoch, double base_lr, std::size_t step_every,
                    double decay);

/// Bias-corrected Adam (beta1 = 0.9, beta2 = 0.999, eps = 1e-8) with
/// decoupled weight decay; updates param and both moment buffers in place.
/// `step` is the 1-based update count.
void adam_update(std::vector<double>& param, const std::vector<double>& grad,
                 std::vector<double>& m, std::vector<double>& v,
                 std::size_t step, double lr, double weight_decay);

/// One optimizer step on a batch: per-sample forward/backward on worker
/// threads (pre-drawn noise, fixed-order reduction), mean-gradient Adam
/// update, spectral re-projection, contractivity probe. Deterministic given
/// (seed, step) regardless of thread count.
StepBreakdown train_step(TrainState& st,
                         const std::vector<const IrregularSeries*>& batch);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0;
  double loss = 0, l_vae = 0, l_ce = 0, l_itg = 0, l_rtg = 0;
  double delta_mean = 0;
  double bound_zero_frac = 0;
  double val_auroc = 0, val_auprc = 0;
};

struct EvalSummary {
  double auroc = 0, auprc = 0, accuracy = 0;
  std::vector<double> scores;  // P(class 1) per sample
  std::vector<int> labels;
};

/// Deterministic (zero-noise) evaluation over a dataset.
EvalSummary evaluate(GsnfModel& model, const Dataset& ds);

struct FitResult {
  TrainState state;
  std::vector<EpochRecord> history;
  GsnfModel best_model;  // best validation AUROC (earliest on ties)
  std::size_t best_epoch = 0;
  double best_auroc = 0;
};

FitResult fit(const Dataset& train, const Dataset& val,
              const TrainConfig& cfg);

/// Worker count: GSNF_THREADS env override, else hardware concurrency,
/// clamped to [1, 8].
std::size_t worker_threads();

}  // namespace gsnf
