#include "gsnf/model.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace gsnf {

using nlohmann::json;

void ModelConfig::validate() const {
  if (d_x == 0 || n_classes < 2 || flow_layers == 0 || hidden == 0 ||
      segments == 0)
    throw UsageError("model config: dimensions must be positive");
  if (spectral_target <= 0.0 || spectral_target >= 1.0)
    throw UsageError("model config: spectral target must lie in (0,1)");
  if (fixed_delta <= 0.0)
    throw UsageError("model config: fixed_delta must be positive");
  if (use_graph && latent_dim() != d_x)
    throw UsageError(
        "model config: graph mode requires latent dim == variable count");
  if (margin_mode == MarginMode::derived && flow_layers != 1)
    throw UsageError(
        "model config: the derived margin requires a single flow layer "
        "(bound-compatible configuration)");
}

namespace {

Tensor uniform_fan_in(std::size_t rows, std::size_t cols,
                      std::mt19937_64& rng) {
  double bound = 1.0 / std::sqrt((double)rows);
  std::uniform_real_distribution<double> uni(-bound, bound);
  Tensor w = zeros({rows, cols});
  for (auto& v : *w.data) v = uni(rng);
  return w;
}

FeedForward init_ff(std::size_t in, std::size_t out, std::size_t hidden,
                    std::size_t n_hidden, std::mt19937_64& rng) {
  std::vector<std::size_t> widths;
  widths.push_back(in);
  for (std::size_t i = 0; i < n_hidden; ++i) widths.push_back(hidden);
  widths.push_back(out);
  FeedForward net;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    net.w.push_back(uniform_fan_in(widths[i], widths[i + 1], rng));
    net.b.push_back(zeros({1, widths[i + 1]}));
  }
  return net;
}

GsnfLayer init_layer(const ModelConfig& cfg, std::mt19937_64& rng,
                     std::vector<SpectralState>& spectral) {
  const std::size_t d = cfg.latent_dim();
  GsnfLayer layer;
  layer.linear_gcn = cfg.margin_mode == MarginMode::derived;
  const std::size_t K = 4;
  layer.gate.freqs = zeros({K, 1});
  layer.gate.amps = full({K, 1}, 0.1);
  for (std::size_t k = 0; k < K; ++k)  // log-spaced over [0.5, 8]
    (*layer.gate.freqs.data)[k] =
        0.5 * std::pow(16.0, (double)k / (double)(K - 1));
  std::vector<std::size_t> widths = {d + 2, cfg.hidden, cfg.hidden, cfg.hidden,
                                     d};
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    Tensor w = uniform_fan_in(widths[i], widths[i + 1], rng);
    auto st = SpectralState::init(widths[i], widths[i + 1],
                                  cfg.spectral_target, rng);
    layer.mlp_w.push_back(spectral_normalize(w, st, 100));
    spectral.push_back(std::move(st));
    layer.mlp_b.push_back(zeros({1, widths[i + 1]}));
  }
  std::size_t gw = layer.linear_gcn ? 1 : 3;
  Tensor w = uniform_fan_in(gw, 1, rng);
  auto st = SpectralState::init(gw, 1, cfg.spectral_target, rng);
  layer.gcn_w = spectral_normalize(w, st, 100);
  spectral.push_back(std::move(st));
  return layer;
}

}  // namespace

GsnfModel make_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  GsnfModel m;
  m.cfg = cfg;
  const std::size_t dx = cfg.d_x, dz = cfg.latent_dim();
  m.graph_heads.wq = uniform_fan_in(1, dx, rng);
  m.graph_heads.wk = uniform_fan_in(1, dx, rng);
  m.graph_heads.h_a = init_ff(dx * dx, dx * dx, cfg.hidden, 1, rng);
  m.encoder = init_ff(2 * dx, dz, cfg.hidden, cfg.head_hidden_layers, rng);
  m.h_z = init_ff(dz, dz, cfg.hidden, 1, rng);
  m.heads.decoder = init_ff(dz, dx, cfg.hidden, cfg.head_hidden_layers, rng);
  m.heads.classifier = init_ff(dz, cfg.n_classes, cfg.hidden, 1, rng);
  for (std::size_t l = 0; l < cfg.flow_layers; ++l)
    m.stack.layers.push_back(init_layer(cfg, rng, m.spectral));
  return m;
}

namespace {

void push_ff(std::vector<std::pair<std::string, Tensor*>>& out,
             const std::string& prefix, FeedForward& f) {
  for (std::size_t i = 0; i < f.w.size(); ++i) {
    out.emplace_back(prefix + ".w" + std::to_string(i), &f.w[i]);
    out.emplace_back(prefix + ".b" + std::to_string(i), &f.b[i]);
  }
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> named_parameters(GsnfModel& m) {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("graph.wq", &m.graph_heads.wq);
  out.emplace_back("graph.wk", &m.graph_heads.wk);
  push_ff(out, "graph.h_a", m.graph_heads.h_a);
  push_ff(out, "encoder", m.encoder);
  push_ff(out, "h_z", m.h_z);
  push_ff(out, "decoder", m.heads.decoder);
  push_ff(out, "classifier", m.heads.classifier);
  for (std::size_t l = 0; l < m.stack.layers.size(); ++l) {
    auto& layer = m.stack.layers[l];
    std::string p = "flow" + std::to_string(l);
    out.emplace_back(p + ".gate.freqs", &layer.gate.freqs);
    out.emplace_back(p + ".gate.amps", &layer.gate.amps);
    for (std::size_t i = 0; i < layer.mlp_w.size(); ++i) {
      out.emplace_back(p + ".mlp.w" + std::to_string(i), &layer.mlp_w[i]);
      out.emplace_back(p + ".mlp.b" + std::to_string(i), &layer.mlp_b[i]);
    }
    out.emplace_back(p + ".gcn_w", &layer.gcn_w);
  }
  return out;
}

std::vector<Tensor*> constrained_matrices(GsnfModel& m) {
  std::vector<Tensor*> out;
  for (auto& layer : m.stack.layers) {
    for (auto& w : layer.mlp_w) out.push_back(&w);
    out.push_back(&layer.gcn_w);
  }
  return out;
}

void project_spectral(GsnfModel& m) {
  auto mats = constrained_matrices(m);
  if (mats.size() != m.spectral.size())
    throw NumericError("project_spectral: state/matrix count mismatch");
  for (std::size_t i = 0; i < mats.size(); ++i) {
    Tensor projected = spectral_normalize(*mats[i], m.spectral[i], 50);
    *mats[i]->data = *projected.data;  // in place, keeping tensor identity
  }
}

ForwardOutput forward_sample(GsnfModel& m, const IrregularSeries& X,
                             const Tensor& a_noise, const Tensor& z_noise,
                             const LossWeights& w) {
  const ModelConfig& cfg = m.cfg;
  const std::size_t L = X.length();
  const std::size_t C = std::min(cfg.segments, L);

  // stage 1: interaction graph posterior
  GraphPosterior gp;
  Tensor A;
  if (cfg.use_graph) {
    gp = graph_posterior(X, C, m.graph_heads);
    A = sample_adjacency(gp, a_noise);
  } else {
    gp = identity_graph_posterior(X, C);
    A = eye(cfg.latent_dim());
  }

  // stage 2: initial-state posterior
  Tensor encoded = encode_observations(m.encoder, X.values, X.mask);
  LatentPosterior lp = latent_posterior(X, encoded, gp, m.stack, m.h_z);
  Tensor z0 = sample_z0(lp, z_noise);

  // stage 3: one-step generation and classification
  Trajectory traj = generate_trajectory(z0, A, X.times, m.stack);
  Tensor logits = ff_apply(m.heads.classifier, z0);
  Tensor l_vae = elbo(X, lp, traj, m.heads.decoder);
  Tensor l_ce = cross_entropy(logits, X.label);

  // stage 4: auxiliary trajectories
  ForwardOutput out;
  Tensor l_itg = scalar(0.0), l_rtg = scalar(0.0);
  if (cfg.use_itg && L >= 2) {
    ItgConfig icfg;
    icfg.margin_mode = cfg.margin_mode;
    icfg.fixed_delta = cfg.fixed_delta;
    std::size_t k0 = resolve_reinit_index(icfg, L);
    Trajectory aux = itg_auxiliary(traj, m.stack, k0);
    double delta = cfg.fixed_delta;
    if (cfg.margin_mode == MarginMode::derived) {
      out.margin = delta_lower_bound(A, m.stack.layers[0].gcn_w, z0,
                                     slice_rows(traj.states, k0 - 1, 1), L,
                                     k0, cfg.fixed_delta);
      delta = out.margin.delta;
    }
    l_itg = itg_loss(traj, aux, delta, k0);
  }
  if (cfg.use_rtg)
    l_rtg = rtg_loss(rtg_trajectory(traj, m.stack), m.heads.decoder, X);

  // stage 5: composite loss
  out.loss = total_loss(l_vae, l_ce, l_itg, l_rtg, w);
  out.l_vae = l_vae.value();
  out.l_ce = l_ce.value();
  out.l_itg = l_itg.value();
  out.l_rtg = l_rtg.value();
  Tensor prob = softmax(logits, 1);
  out.score_pos = cfg.n_classes >= 2 ? prob.at(1) : prob.at(0);
  out.predicted = 0;
  for (std::size_t k = 1; k < cfg.n_classes; ++k)
    if (prob.at(k) > prob.at((std::size_t)out.predicted)) out.predicted = (int)k;
  return out;
}

namespace {

json config_to_json(const ModelConfig& c) {
  json j;
  j["d_x"] = c.d_x;
  j["d_z"] = c.d_z;
  j["n_classes"] = c.n_classes;
  j["flow_layers"] = c.flow_layers;
  j["hidden"] = c.hidden;
  j["head_hidden_layers"] = c.head_hidden_layers;
  j["segments"] = c.segments;
  j["spectral_target"] = c.spectral_target;
  j["margin_mode"] =
      c.margin_mode == MarginMode::derived ? "derived" : "fixed";
  j["fixed_delta"] = c.fixed_delta;
  j["use_graph"] = c.use_graph;
  j["use_itg"] = c.use_itg;
  j["use_rtg"] = c.use_rtg;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.d_x = j.at("d_x").get<std::size_t>();
  c.d_z = j.at("d_z").get<std::size_t>();
  c.n_classes = j.at("n_classes").get<std::size_t>();
  c.flow_layers = j.at("flow_layers").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.head_hidden_layers = j.at("head_hidden_layers").get<std::size_t>();
  c.segments = j.at("segments").get<std::size_t>();
  c.spectral_target = j.at("spectral_target").get<double>();
  c.margin_mode = j.at("margin_mode").get<std::string>() == "derived"
                      ? MarginMode::derived
                      : MarginMode::fixed;
  c.fixed_delta = j.at("fixed_delta").get<double>();
  c.use_graph = j.at("use_graph").get<bool>();
  c.use_itg = j.at("use_itg").get<bool>();
  c.use_rtg = j.at("use_rtg").get<bool>();
  return c;
}

std::string serialize_model(GsnfModel& m) {
  json j;
  j["config"] = config_to_json(m.cfg);
  json params = json::object();
  for (auto& [name, t] : named_parameters(m)) {
    json rec;
    rec["shape"] = t->shape;
    rec["data"] = *t->data;
    params[name] = rec;
  }
  j["params"] = params;
  json spectral = json::array();
  for (const auto& st : m.spectral) {
    json rec;
    rec["u"] = st.u;
    rec["v"] = st.v;
    rec["sigma_est"] = st.sigma_est;
    rec["target"] = st.target;
    spectral.push_back(rec);
  }
  j["spectral"] = spectral;
  return j.dump();
}

}  // namespace

void save_checkpoint(GsnfModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write checkpoint: " + path);
  out << serialize_model(m) << "\n";
}

GsnfModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  GsnfModel m = make_model(config_from_json(j.at("config")), 0);
  for (auto& [name, t] : named_parameters(m)) {
    if (!j.at("params").contains(name))
      throw ParseError("checkpoint: missing parameter " + name);
    const json& rec = j["params"][name];
    auto shape = rec.at("shape").get<std::vector<std::size_t>>();
    auto data = rec.at("data").get<std::vector<double>>();
    if (shape != t->shape || data.size() != t->data->size())
      throw ParseError("checkpoint: shape mismatch for " + name);
    *t->data = std::move(data);
  }
  const json& sp = j.at("spectral");
  if (sp.size() != m.spectral.size())
    throw ParseError("checkpoint: spectral state count mismatch");
  for (std::size_t i = 0; i < m.spectral.size(); ++i) {
    m.spectral[i].u = sp[i].at("u").get<std::vector<double>>();
    m.spectral[i].v = sp[i].at("v").get<std::vector<double>>();
    m.spectral[i].sigma_est = sp[i].at("sigma_est").get<double>();
    m.spectral[i].target = sp[i].at("target").get<double>();
  }
  return m;
}

std::uint64_t checkpoint_hash(GsnfModel& m) {
  std::string s = serialize_model(m);
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a 64
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace gsnf
