#include "gsnf/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <thread>

#include "gsnf/metrics.hpp"

namespace gsnf {

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  if (lr <= 0.0) throw UsageError("train config: lr must be positive");
  if (weight_decay < 0.0)
    throw UsageError("train config: weight_decay must be nonnegative");
  if (batch_size == 0) throw UsageError("train config: batch_size must be > 0");
  if (scheduler_step == 0)
    throw UsageError("train config: scheduler_step must be > 0");
  if (scheduler_decay <= 0.0 || scheduler_decay > 1.0)
    throw UsageError("train config: scheduler_decay must lie in (0, 1]");
}

std::size_t worker_threads() {
  if (const char* env = std::getenv("GSNF_THREADS")) {
    char* end = nullptr;
    long n = std::strtol(env, &end, 10);
    if (end == env || n < 1) throw UsageError("GSNF_THREADS must be >= 1");
    return std::min<std::size_t>((std::size_t)n, 8);
  }
  unsigned hw = std::thread::hardware_concurrency();
  return std::min<std::size_t>(hw == 0 ? 1 : hw, 8);
}

double scheduler_lr(std::size_t epoch, double base_lr, std::size_t step_every,
                    double decay) {
  if (step_every == 0) return base_lr;
  return base_lr * std::pow(decay, (double)(epoch / step_every));
}

void adam_update(std::vector<double>& param, const std::vector<double>& grad,
                 std::vector<double>& m, std::vector<double>& v,
                 std::size_t step, double lr, double weight_decay) {
  if (param.size() != grad.size() || m.size() != param.size() ||
      v.size() != param.size())
    throw DimensionError("adam_update: buffer size mismatch");
  if (step == 0) throw UsageError("adam_update: step counter is 1-based");
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double c1 = 1.0 - std::pow(b1, (double)step);
  const double c2 = 1.0 - std::pow(b2, (double)step);
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
    v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
    double mhat = m[i] / c1;
    double vhat = v[i] / c2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    param[i] -= lr * weight_decay * param[i];  // decoupled decay
  }
}

namespace {

struct FlatLayout {
  std::vector<std::size_t> offsets;
  std::size_t total = 0;
};

FlatLayout layout_of(GsnfModel& m) {
  FlatLayout lay;
  for (auto& [name, t] : named_parameters(m)) {
    lay.offsets.push_back(lay.total);
    lay.total += t->size();
  }
  return lay;
}

void probe_contractivity(GsnfModel& m, std::uint64_t step) {
  const std::size_t d = m.cfg.latent_dim();
  Tensor A = full({d, d}, 1.0 / (double)d);
  for (std::size_t l = 0; l < m.stack.layers.size(); ++l) {
    std::mt19937_64 rng(step * 1000003ull + l);
    double lhat =
        lipschitz_probe(m.stack.layers[l], 0.0, 1.0, A, 100, rng);
    if (m.stack.layers[l].gate.ceiling * lhat >= 1.0)
      throw NumericError("contractivity probe failed after normalization: "
                         "layer " +
                         std::to_string(l) +
                         " gated Lipschitz estimate >= 1");
  }
}

}  // namespace

TrainState init_train_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState st;
  st.config = cfg;
  st.model = make_model(cfg.model, cfg.seed);
  FlatLayout lay = layout_of(st.model);
  st.adam_m.assign(lay.total, 0.0);
  st.adam_v.assign(lay.total, 0.0);
  st.lr = cfg.lr;
  return st;
}

StepBreakdown train_step(TrainState& st,
                         const std::vector<const IrregularSeries*>& batch) {
  if (batch.empty()) throw UsageError("train_step: empty batch");
  const std::size_t n = batch.size();
  const std::size_t dx = st.model.cfg.d_x;
  const std::size_t dz = st.model.cfg.latent_dim();
  FlatLayout lay = layout_of(st.model);

  // noise pre-drawn on this thread so the estimator is independent of the
  // worker partition
  std::mt19937_64 nrng(st.config.seed ^ ((st.step + 1) * 0x100000001b3ull));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Tensor> a_noise, z_noise;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor a = zeros({dx, dx});
    for (auto& v : *a.data) v = gauss(nrng);
    Tensor z = zeros({1, dz});
    for (auto& v : *z.data) v = gauss(nrng);
    a_noise.push_back(std::move(a));
    z_noise.push_back(std::move(z));
  }

  const std::size_t n_chunks = std::min<std::size_t>(n, 8);  // fixed partition
  std::vector<std::vector<double>> chunk_grad(n_chunks);
  std::vector<StepBreakdown> chunk_sum(n_chunks);
  std::vector<std::exception_ptr> chunk_err(n_chunks);

  auto run_chunk = [&](std::size_t c) {
    try {
      auto& acc = chunk_grad[c];
      acc.assign(lay.total, 0.0);
      auto& sum = chunk_sum[c];
      const std::size_t lo = c * n / n_chunks, hi = (c + 1) * n / n_chunks;
      for (std::size_t i = lo; i < hi; ++i) {
        Tape tape;
        TapeScope scope(tape);
        GsnfModel local = st.model;  // tensors share storage with st.model
        std::vector<Tensor*> params;
        for (auto& [name, t] : named_parameters(local)) {
          *t = tape.leaf(*t);
          params.push_back(t);
        }
        ForwardOutput out = forward_sample(local, *batch[i], a_noise[i],
                                           z_noise[i], st.config.weights);
        tape.backward(out.loss);
        for (std::size_t p = 0; p < params.size(); ++p) {
          std::vector<double> g = tape.grad(params[p]->node);
          double* dst = acc.data() + lay.offsets[p];
          for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
        }
        sum.total += out.loss.value();
        sum.l_vae += out.l_vae;
        sum.l_ce += out.l_ce;
        sum.l_itg += out.l_itg;
        sum.l_rtg += out.l_rtg;
        if (st.model.cfg.margin_mode == MarginMode::derived &&
            st.model.cfg.use_itg) {
          sum.delta_mean += out.margin.delta;
          if (out.margin.fallback) ++sum.bound_zero;
        }
        ++sum.n_samples;
      }
    } catch (...) {
      chunk_err[c] = std::current_exception();
    }
  };

  const std::size_t n_threads = std::min(worker_threads(), n_chunks);
  if (n_threads <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (std::size_t t = 0; t < n_threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t c = next.fetch_add(1); c < n_chunks;
             c = next.fetch_add(1))
          run_chunk(c);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& err : chunk_err)
    if (err) std::rethrow_exception(err);

  // fixed-order reduction: chunk 0, 1, ... regardless of completion order
  std::vector<double> grad(lay.total, 0.0);
  StepBreakdown bd;
  for (std::size_t c = 0; c < n_chunks; ++c) {
    for (std::size_t k = 0; k < lay.total; ++k) grad[k] += chunk_grad[c][k];
    bd.total += chunk_sum[c].total;
    bd.l_vae += chunk_sum[c].l_vae;
    bd.l_ce += chunk_sum[c].l_ce;
    bd.l_itg += chunk_sum[c].l_itg;
    bd.l_rtg += chunk_sum[c].l_rtg;
    bd.delta_mean += chunk_sum[c].delta_mean;
    bd.bound_zero += chunk_sum[c].bound_zero;
    bd.n_samples += chunk_sum[c].n_samples;
  }
  const double inv_n = 1.0 / (double)n;
  for (auto& g : grad) g *= inv_n;
  bd.total *= inv_n;
  bd.l_vae *= inv_n;
  bd.l_ce *= inv_n;
  bd.l_itg *= inv_n;
  bd.l_rtg *= inv_n;
  bd.delta_mean *= inv_n;
  for (double g : grad)
    if (!std::isfinite(g))
      throw NumericError("train_step: non-finite gradient at step " +
                         std::to_string(st.step + 1));

  std::vector<double> flat(lay.total);
  auto params = named_parameters(st.model);
  for (std::size_t p = 0; p < params.size(); ++p)
    std::copy(params[p].second->data->begin(), params[p].second->data->end(),
              flat.begin() + (std::ptrdiff_t)lay.offsets[p]);
  ++st.step;
  adam_update(flat, grad, st.adam_m, st.adam_v, st.step, st.lr,
              st.config.weight_decay);
  for (std::size_t p = 0; p < params.size(); ++p)
    std::copy(flat.begin() + (std::ptrdiff_t)lay.offsets[p],
              flat.begin() +
                  (std::ptrdiff_t)(lay.offsets[p] + params[p].second->size()),
              params[p].second->data->begin());

  project_spectral(st.model);
  probe_contractivity(st.model, st.step);
  return bd;
}

EvalSummary evaluate(GsnfModel& model, const Dataset& ds) {
  if (ds.samples.empty()) throw UsageError("evaluate: empty dataset");
  const std::size_t dx = model.cfg.d_x;
  const std::size_t dz = model.cfg.latent_dim();
  Tensor a0 = zeros({dx, dx}), z0 = zeros({1, dz});
  LossWeights w;
  EvalSummary ev;
  std::size_t correct = 0;
  for (const auto& s : ds.samples) {
    ForwardOutput out = forward_sample(model, s, a0, z0, w);
    ev.scores.push_back(out.score_pos);
    ev.labels.push_back(s.label);
    if (out.predicted == s.label) ++correct;
  }
  ev.accuracy = (double)correct / (double)ds.samples.size();
  ev.auroc = auroc(ev.scores, ev.labels);
  ev.auprc = auprc(ev.scores, ev.labels);
  return ev;
}

FitResult fit(const Dataset& train, const Dataset& val,
              const TrainConfig& cfg) {
  if (train.samples.empty()) throw UsageError("fit: empty training set");
  FitResult res;
  res.state = init_train_state(cfg);
  res.best_model = res.state.model;  // snapshot below on first epoch
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0xd1b54a32d192ed03ull);
  std::vector<std::size_t> order(train.samples.size());
  std::iota(order.begin(), order.end(), 0);
  res.best_auroc = -1.0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    res.state.lr =
        scheduler_lr(epoch, cfg.lr, cfg.scheduler_step, cfg.scheduler_decay);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = res.state.lr;
    std::size_t seen = 0, bound_zero = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<const IrregularSeries*> batch;
      for (std::size_t i = b; i < std::min(b + cfg.batch_size, order.size());
           ++i)
        batch.push_back(&train.samples[order[i]]);
      StepBreakdown bd = train_step(res.state, batch);
      const double w = (double)bd.n_samples;
      rec.loss += bd.total * w;
      rec.l_vae += bd.l_vae * w;
      rec.l_ce += bd.l_ce * w;
      rec.l_itg += bd.l_itg * w;
      rec.l_rtg += bd.l_rtg * w;
      rec.delta_mean += bd.delta_mean * w;
      bound_zero += bd.bound_zero;
      seen += bd.n_samples;
    }
    rec.loss /= (double)seen;
    rec.l_vae /= (double)seen;
    rec.l_ce /= (double)seen;
    rec.l_itg /= (double)seen;
    rec.l_rtg /= (double)seen;
    rec.delta_mean /= (double)seen;
    rec.bound_zero_frac = (double)bound_zero / (double)seen;

    if (!val.samples.empty()) {
      EvalSummary ev = evaluate(res.state.model, val);
      rec.val_auroc = ev.auroc;
      rec.val_auprc = ev.auprc;
    }
    res.history.push_back(rec);
    if (rec.val_auroc > res.best_auroc) {
      res.best_auroc = rec.val_auroc;
      res.best_epoch = epoch;
      // deep-copy the snapshot so later steps do not mutate it
      GsnfModel snap = res.state.model;
      for (auto& [name, t] : named_parameters(snap)) {
        Tensor copy = zeros(t->shape);
        *copy.data = *t->data;
        *t = copy;
      }
      res.best_model = snap;
    }
    if (cfg.early_stop_auroc > 0.0 && rec.val_auroc >= cfg.early_stop_auroc)
      break;
  }
  if (res.best_auroc < 0.0) res.best_auroc = 0.0;
  return res;
}

}  // namespace gsnf
