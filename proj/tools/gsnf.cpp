#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "gsnf/training.hpp"
#include "gsnf/verify.hpp"

using nlohmann::json;
using namespace gsnf;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return j;
}

MarginMode parse_margin_mode(const std::string& s) {
  if (s == "fixed") return MarginMode::fixed;
  if (s == "derived") return MarginMode::derived;
  throw UsageError("margin mode must be 'fixed' or 'derived', got '" + s +
                   "'");
}

struct SplitFractions {
  double train = 0.8, val = 0.1, test = 0.1;
};

struct CliTrainConfig {
  TrainConfig train;
  SplitFractions split;
};

CliTrainConfig train_config_from_json(const json& j) {
  CliTrainConfig c;
  TrainConfig& t = c.train;
  t.lr = j.value("lr", t.lr);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.scheduler_step = j.value("scheduler_step", t.scheduler_step);
  t.scheduler_decay = j.value("scheduler_decay", t.scheduler_decay);
  t.epochs = j.value("epochs", t.epochs);
  t.seed = j.value("seed", t.seed);
  t.early_stop_auroc = j.value("early_stop_auroc", t.early_stop_auroc);
  t.weights.alpha = j.value("alpha", t.weights.alpha);
  t.weights.beta = j.value("beta", t.weights.beta);
  t.weights.gamma = j.value("gamma", t.weights.gamma);
  ModelConfig& m = t.model;
  m.d_z = j.value("d_z", m.d_z);
  m.flow_layers = j.value("flow_layers", m.flow_layers);
  m.hidden = j.value("hidden", m.hidden);
  m.head_hidden_layers = j.value("head_hidden_layers", m.head_hidden_layers);
  m.segments = j.value("segments", m.segments);
  m.spectral_target = j.value("spectral_target", m.spectral_target);
  m.margin_mode =
      parse_margin_mode(j.value("margin_mode", std::string("fixed")));
  m.fixed_delta = j.value("fixed_delta", m.fixed_delta);
  m.use_graph = j.value("use_graph", m.use_graph);
  m.use_itg = j.value("use_itg", m.use_itg);
  m.use_rtg = j.value("use_rtg", m.use_rtg);
  if (j.contains("split")) {
    const json& s = j["split"];
    c.split.train = s.value("train", c.split.train);
    c.split.val = s.value("val", c.split.val);
    c.split.test = s.value("test", c.split.test);
  }
  return c;
}

json stats_to_json(const NormStats& st) {
  return json{{"mean", st.mean}, {"stddev", st.stddev}};
}

NormStats stats_from_json(const json& j) {
  NormStats st;
  st.mean = j.at("mean").get<std::vector<double>>();
  st.stddev = j.at("stddev").get<std::vector<double>>();
  return st;
}

json epoch_record_json(const EpochRecord& r) {
  return json{{"epoch", r.epoch},
              {"lr", r.lr},
              {"loss", r.loss},
              {"l_vae", r.l_vae},
              {"l_ce", r.l_ce},
              {"l_itg", r.l_itg},
              {"l_rtg", r.l_rtg},
              {"delta_lb", r.delta_mean},
              {"bound_zero_frac", r.bound_zero_frac},
              {"val_auroc", r.val_auroc},
              {"val_auprc", r.val_auprc}};
}

int cmd_synth(const std::string& config, const std::string& out,
              std::optional<std::uint64_t> seed) {
  SynthSpec spec = synth_spec_from_json(config);
  if (seed) spec.seed = *seed;
  Dataset ds = generate_synthetic(spec);
  save_dataset(ds, out);
  std::vector<std::size_t> counts((std::size_t)ds.n_classes(), 0);
  for (const auto& s : ds.samples) ++counts[(std::size_t)s.label];
  json rec{{"n_samples", ds.samples.size()},
           {"class_counts", counts},
           {"baseline_accuracy", centroid_baseline_accuracy(ds)},
           {"out", out}};
  std::cout << rec.dump() << "\n";
  return 0;
}

int cmd_train(const std::string& config, const std::string& data,
              const std::string& out, std::optional<std::uint64_t> seed,
              const std::optional<std::string>& margin_mode,
              std::optional<double> delta) {
  CliTrainConfig cli = train_config_from_json(read_json_file(config));
  TrainConfig& cfg = cli.train;
  if (seed) cfg.seed = *seed;
  if (margin_mode) cfg.model.margin_mode = parse_margin_mode(*margin_mode);
  if (delta) cfg.model.fixed_delta = *delta;

  Dataset raw = load_dataset(data);
  cfg.model.d_x = raw.n_vars();
  cfg.model.n_classes = (std::size_t)raw.n_classes();
  SplitResult sp = split(raw, cli.split.train, cli.split.val, cli.split.test,
                         cfg.seed);
  NormStats stats = compute_stats(sp.train);
  Dataset tr = normalize_impute(sp.train, stats);
  Dataset va = normalize_impute(sp.val, stats);
  Dataset te = normalize_impute(sp.test, stats);

  FitResult fr = fit(tr, va, cfg);
  for (const auto& rec : fr.history)
    std::cout << epoch_record_json(rec).dump() << "\n";

  save_checkpoint(fr.best_model, out);
  // embed the training-split normalization stats so eval/bound can reproduce
  // the preprocessing
  json ckpt = read_json_file(out);
  ckpt["norm_stats"] = stats_to_json(stats);
  std::ofstream os(out);
  os << ckpt.dump() << "\n";

  std::ofstream hist(out + ".history.jsonl");
  for (const auto& rec : fr.history)
    hist << epoch_record_json(rec).dump() << "\n";

  json final{{"best_epoch", fr.best_epoch},
             {"best_val_auroc", fr.best_auroc},
             {"checkpoint", out},
             {"checkpoint_hash", checkpoint_hash(fr.best_model)}};
  if (!te.samples.empty() && te.n_classes() == 2) {
    EvalSummary ev = evaluate(fr.best_model, te);
    final["test_auroc"] = ev.auroc;
    final["test_auprc"] = ev.auprc;
    final["test_accuracy"] = ev.accuracy;
  }
  std::cout << final.dump() << "\n";
  return 0;
}

Dataset load_for_checkpoint(const json& ckpt, const std::string& data) {
  Dataset ds = load_dataset(data);
  if (ckpt.contains("norm_stats"))
    ds = normalize_impute(ds, stats_from_json(ckpt["norm_stats"]));
  return ds;
}

int cmd_eval(const std::string& checkpoint, const std::string& data) {
  GsnfModel model = load_checkpoint(checkpoint);
  Dataset ds = load_for_checkpoint(read_json_file(checkpoint), data);
  EvalSummary ev = evaluate(model, ds);  // single-class data -> UsageError
  json rec{{"n", ds.samples.size()},
           {"auroc", ev.auroc},
           {"auprc", ev.auprc},
           {"accuracy", ev.accuracy}};
  std::cout << rec.dump() << "\n";
  return 0;
}

int cmd_verify(std::uint64_t seed, double scale) {
  bool all_passed = true;
  for (const auto& r : verify_all(seed, scale)) {
    json rec{{"suite", r.name},     {"passed", r.passed},
             {"cases", r.cases},    {"worst", r.worst},
             {"limit", r.limit},    {"seconds", r.seconds},
             {"detail", r.detail}};
    std::cout << rec.dump() << "\n";
    all_passed = all_passed && r.passed;
  }
  return all_passed ? 0 : 1;
}

int cmd_bound(const std::string& checkpoint, const std::string& data,
              std::optional<double> delta) {
  GsnfModel model = load_checkpoint(checkpoint);
  if (model.cfg.flow_layers != 1 || !model.stack.layers[0].linear_gcn)
    throw UsageError(
        "bound requires a bound-compatible checkpoint "
        "(single flow layer with linear GCN, i.e. margin_mode=derived)");
  double fallback = delta ? *delta : model.cfg.fixed_delta;
  Dataset ds = load_for_checkpoint(read_json_file(checkpoint), data);
  const std::size_t dx = model.cfg.d_x, dz = model.cfg.latent_dim();
  Tensor a0 = zeros({dx, dx}), z_noise = zeros({1, dz});
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const IrregularSeries& X = ds.samples[i];
    const std::size_t L = X.length();
    const std::size_t C = std::min(model.cfg.segments, L);
    GraphPosterior gp = model.cfg.use_graph
                            ? graph_posterior(X, C, model.graph_heads)
                            : identity_graph_posterior(X, C);
    Tensor A = model.cfg.use_graph ? sample_adjacency(gp, a0) : eye(dz);
    Tensor encoded = encode_observations(model.encoder, X.values, X.mask);
    LatentPosterior lp = latent_posterior(X, encoded, gp, model.stack,
                                          model.h_z);
    Tensor z0 = sample_z0(lp, z_noise);
    Trajectory traj = generate_trajectory(z0, A, X.times, model.stack);
    ItgConfig icfg;
    std::size_t k0 = resolve_reinit_index(icfg, L);
    MarginBound mb = delta_lower_bound(
        A, model.stack.layers[0].gcn_w, z0,
        slice_rows(traj.states, k0 - 1, 1), L, k0, fallback);
    json rec{{"index", i},
             {"delta", mb.delta},
             {"bound", mb.bound},
             {"delta_in", mb.delta_in},
             {"sigma_a", mb.sigma_a},
             {"sigma_w", mb.sigma_w},
             {"fallback", mb.fallback}};
    std::cout << rec.dump() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graph-structured neural flows for irregular time series"};
  app.require_subcommand(1);

  std::string config, data, checkpoint, out, margin_mode_s;
  std::uint64_t seed = 0;
  double scale = 1.0, delta_v = 0.0;
  bool seed_set = false, margin_set = false, delta_set = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "RNG seed override")
        ->each([&](const std::string&) { seed_set = true; });
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--config", config, "SynthSpec JSON file")->required();
  synth->add_option("--out", out, "output dataset path")->required();
  add_common(synth);

  CLI::App* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config, "TrainConfig JSON file")->required();
  train->add_option("--data", data, "dataset file")->required();
  train->add_option("--out", out, "checkpoint output path")->required();
  train->add_option("--margin-mode", margin_mode_s, "fixed or derived")
      ->each([&](const std::string&) { margin_set = true; });
  train->add_option("--delta", delta_v, "fixed ITG margin")
      ->each([&](const std::string&) { delta_set = true; });
  add_common(train);

  CLI::App* eval_c = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_c->add_option("--checkpoint", checkpoint, "checkpoint file")
      ->required();
  eval_c->add_option("--data", data, "dataset file")->required();

  CLI::App* verify = app.add_subcommand("verify", "run the invariant suites");
  verify->add_option("--scale", scale, "case-count multiplier");
  add_common(verify);

  CLI::App* bound = app.add_subcommand("bound", "stream margin-bound records");
  bound->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  bound->add_option("--data", data, "dataset file")->required();
  bound->add_option("--delta", delta_v, "fallback margin override")
      ->each([&](const std::string&) { delta_set = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    auto opt_seed = seed_set ? std::optional<std::uint64_t>(seed)
                             : std::nullopt;
    auto opt_margin = margin_set ? std::optional<std::string>(margin_mode_s)
                                 : std::nullopt;
    auto opt_delta = delta_set ? std::optional<double>(delta_v) : std::nullopt;
    if (synth->parsed()) return cmd_synth(config, out, opt_seed);
    if (train->parsed())
      return cmd_train(config, data, out, opt_seed, opt_margin, opt_delta);
    if (eval_c->parsed()) return cmd_eval(checkpoint, data);
    if (verify->parsed()) return cmd_verify(seed, scale);
    if (bound->parsed()) return cmd_bound(checkpoint, data, opt_delta);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
