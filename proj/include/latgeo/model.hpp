#pragma once

#include <cstdint>
#include <mutex>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "latgeo/attention.hpp"
#include "latgeo/geometry.hpp"
#include "latgeo/scene.hpp"
#include "latgeo/tensor.hpp"
#include "latgeo/vocab.hpp"

namespace latgeo {

enum class Connectivity {
  fully_connected,   // every decoder layer attends all encoder outputs
  single,            // decoder layer i attends encoder output i only
  skipped,           // every decoder layer attends a configured subset
  residual_encoder,  // fully connected + skips between encoder layers
  residual_encdec,   // fully connected + skips in encoder and decoder stacks
};

Connectivity connectivity_from_string(const std::string& s);
std::string to_string(Connectivity c);

struct ModelConfig {
  int d_model = 64;
  int heads = 4;
  int layers = 3;
  int memory_slots = 8;
  int d_feat = 64;
  int vocab_size = 0;
  int max_len = 22;  // caption positions, START and END included
  Connectivity connectivity = Connectivity::fully_connected;
  std::vector<int> skip_memories;  // encoder outputs visible under `skipped`
  bool use_geometry = true;
  bool use_lam = true;
  bool use_background = true;
  GeometryKind geometry_kind = GeometryKind::ratio;
  bool mesh_sqrt_scale = true;  // divide the cross-attention sum by sqrt(#branches)
  double dropout = 0.1;

  void validate() const;  // throws ConfigError
};

// Which encoder outputs each decoder layer cross-attends, plus whether the
// stacks carry inter-layer skip additions.
struct ConnectivityPlan {
  std::vector<std::vector<int>> decoder_memories;
  bool encoder_residual = false;
  bool decoder_residual = false;
};

ConnectivityPlan build_connectivity(const ModelConfig& cfg);

// Flat JSON object with every field spelled out; unknown keys rejected.
nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j);

// Sinusoid position table; row r encodes position r+1 (positions 1..max_len):
// column 2i holds sin(pos / 10000^(2i/d_model)), column 2i+1 the cosine.
Matrix positional_encoding(int max_len, int d_model);

struct EncodeResult {
  std::vector<Tensor> enc_outputs;  // raw per-layer encoder outputs
  std::vector<Tensor> memories;     // label-gated outputs fed to the decoder
  Tensor gate;                      // undefined when the label gate is off
  int n_tot = 0;
};

class Model {
 public:
  Model(const ModelConfig& cfg, const Vocabulary& vocab,
        std::uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  const ConnectivityPlan& plan() const { return plan_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  EncodeResult encode(const Scene& scene, bool training = false,
                      std::mt19937_64* dropout_rng = nullptr,
                      AttnTrace* trace = nullptr);

  // Logits [t x vocab] for a START-led prefix of t token ids.
  Tensor decode(const EncodeResult& enc, const std::vector<int>& prefix,
                bool training = false, std::mt19937_64* dropout_rng = nullptr,
                AttnTrace* trace = nullptr);

  Tensor forward(const Scene& scene, const std::vector<int>& prefix,
                 bool training = false, std::mt19937_64* dropout_rng = nullptr,
                 AttnTrace* trace = nullptr);

 private:
  struct SceneConstants {
    Matrix features;  // [n_tot x d_feat], background last when enabled
    Tensor geometry;  // [n_tot^2 x d_model] sinusoid embedding, constant
    std::vector<std::string> class_words;
    std::vector<double> probs;
  };
  const SceneConstants& prepare(const Scene& scene);
  AttnParams attn_params(const std::string& prefix) const;
  Tensor feed_forward(const Tensor& x, const std::string& prefix,
                      bool training, std::mt19937_64* rng);
  Tensor maybe_dropout(const Tensor& x, bool training, std::mt19937_64* rng);

  ModelConfig cfg_;
  ConnectivityPlan plan_;
  Vocabulary vocab_;
  ParamStore params_;
  Matrix pe_;
  std::unordered_map<std::string, SceneConstants> scene_cache_;
  std::mutex cache_mutex_;
};

}  // namespace latgeo
