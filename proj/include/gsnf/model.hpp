#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gsnf/generation.hpp"
#include "gsnf/inference.hpp"
#include "gsnf/objective.hpp"

namespace gsnf {

struct ModelConfig {
  std::size_t d_x = 8;
  std::size_t d_z = 0;  // 0 -> d_x (latent dim = number of sensors)
  std::size_t n_classes = 2;
  std::size_t flow_layers = 2;
  std::size_t hidden = 128;
  std::size_t head_hidden_layers = 3;  // encoder/decoder depth
  std::size_t segments = 4;
  double spectral_target = 0.45;
  MarginMode margin_mode = MarginMode::fixed;
  double fixed_delta = 1e-6;
  // ablations
  bool use_graph = true;
  bool use_itg = true;
  bool use_rtg = true;

  std::size_t latent_dim() const { return d_z == 0 ? d_x : d_z; }
  void validate() const;
};

/// Complete parameter set. Flow weights carry persistent power-iteration
/// state so spectral re-projection after each update is warm-started.
struct GsnfModel {
  ModelConfig cfg;
  GraphHeads graph_heads;
  FeedForward encoder;     // 2 D_x -> D_z
  FeedForward h_z;         // D_z -> D_z
  Heads heads;             // decoder D_z -> D_x, classifier D_z -> K
  FlowStack stack;
  std::vector<SpectralState> spectral;  // one per constrained flow matrix
};

GsnfModel make_model(const ModelConfig& cfg, std::uint64_t seed);

/// Fixed-order parameter enumeration shared by the optimizer, tape leaves,
/// and checkpoints.
std::vector<std::pair<std::string, Tensor*>> named_parameters(GsnfModel& m);

/// Pointers to the spectrally constrained matrices, aligned with `spectral`.
std::vector<Tensor*> constrained_matrices(GsnfModel& m);

/// Rescales every constrained matrix back under the spectral target using
/// its warm-started power iteration; mutates weights in place.
void project_spectral(GsnfModel& m);

struct ForwardOutput {
  Tensor loss;  // tracked total (weighted loss combination)
  double l_vae = 0, l_ce = 0, l_itg = 0, l_rtg = 0;
  double score_pos = 0;  // P(class 1)
  int predicted = 0;
  MarginBound margin;
};

/// Five-stage forward pass for one sample: graph posterior, state posterior,
/// generation + classification, ITG/RTG, loss assembly. Pass zero noise for
/// the deterministic evaluation path.
ForwardOutput forward_sample(GsnfModel& m, const IrregularSeries& X,
                             const Tensor& a_noise, const Tensor& z_noise,
                             const LossWeights& w);

void save_checkpoint(GsnfModel& m, const std::string& path);
GsnfModel load_checkpoint(const std::string& path);

/// FNV-1a hash of the serialized checkpoint (determinism contract).
std::uint64_t checkpoint_hash(GsnfModel& m);

}  // namespace gsnf
