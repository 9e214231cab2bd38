#include "latgeo/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "latgeo/error.hpp"
#include "latgeo/lam.hpp"
#include "latgeo/rng.hpp"

namespace latgeo {

Connectivity connectivity_from_string(const std::string& s) {
  if (s == "fully_connected") return Connectivity::fully_connected;
  if (s == "single") return Connectivity::single;
  if (s == "skipped") return Connectivity::skipped;
  if (s == "residual_encoder") return Connectivity::residual_encoder;
  if (s == "residual_encdec") return Connectivity::residual_encdec;
  throw ConfigError("unknown connectivity '" + s + "'");
}

std::string to_string(Connectivity c) {
  switch (c) {
    case Connectivity::fully_connected: return "fully_connected";
    case Connectivity::single: return "single";
    case Connectivity::skipped: return "skipped";
    case Connectivity::residual_encoder: return "residual_encoder";
    case Connectivity::residual_encdec: return "residual_encdec";
  }
  throw ConfigError("unknown connectivity value");
}

void ModelConfig::validate() const {
  if (d_model <= 0 || d_model % 8 != 0) {
    throw ConfigError("d_model must be a positive multiple of 8, got " +
                      std::to_string(d_model));
  }
  if (heads <= 0 || d_model % heads != 0) {
    throw ConfigError("heads must divide d_model: " + std::to_string(heads) +
                      " vs " + std::to_string(d_model));
  }
  if (layers < 1) throw ConfigError("layers must be >= 1");
  if (memory_slots < 0) throw ConfigError("memory_slots must be >= 0");
  if (max_len < 3) throw ConfigError("max_len must be >= 3");
  if (d_feat < 1) throw ConfigError("d_feat must be >= 1");
  if (vocab_size < 5) {
    throw ConfigError("vocab_size must cover the 4 reserved ids plus words");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("dropout must lie in [0, 1)");
  }
  if (connectivity == Connectivity::skipped) {
    if (skip_memories.empty()) {
      throw ConfigError("skipped connectivity needs a non-empty memory subset");
    }
    for (int i : skip_memories) {
      if (i < 0 || i >= layers) {
        throw ConfigError("skip memory index " + std::to_string(i) +
                          " outside 0.." + std::to_string(layers - 1));
      }
    }
  }
}

ConnectivityPlan build_connectivity(const ModelConfig& cfg) {
  cfg.validate();
  ConnectivityPlan plan;
  std::vector<int> all(cfg.layers);
  for (int i = 0; i < cfg.layers; ++i) all[i] = i;
  switch (cfg.connectivity) {
    case Connectivity::fully_connected:
      plan.decoder_memories.assign(cfg.layers, all);
      break;
    case Connectivity::single:
      for (int i = 0; i < cfg.layers; ++i) plan.decoder_memories.push_back({i});
      break;
    case Connectivity::skipped: {
      std::set<int> uniq(cfg.skip_memories.begin(), cfg.skip_memories.end());
      std::vector<int> subset(uniq.begin(), uniq.end());
      plan.decoder_memories.assign(cfg.layers, subset);
      break;
    }
    case Connectivity::residual_encoder:
      plan.decoder_memories.assign(cfg.layers, all);
      plan.encoder_residual = true;
      break;
    case Connectivity::residual_encdec:
      plan.decoder_memories.assign(cfg.layers, all);
      plan.encoder_residual = true;
      plan.decoder_residual = true;
      break;
  }
  return plan;
}

nlohmann::json config_to_json(const ModelConfig& cfg) {
  return nlohmann::json{{"d_model", cfg.d_model},
                        {"heads", cfg.heads},
                        {"layers", cfg.layers},
                        {"memory_slots", cfg.memory_slots},
                        {"d_feat", cfg.d_feat},
                        {"vocab_size", cfg.vocab_size},
                        {"max_len", cfg.max_len},
                        {"connectivity", to_string(cfg.connectivity)},
                        {"skip_memories", cfg.skip_memories},
                        {"use_geometry", cfg.use_geometry},
                        {"use_lam", cfg.use_lam},
                        {"use_background", cfg.use_background},
                        {"geometry_kind", to_string(cfg.geometry_kind)},
                        {"mesh_sqrt_scale", cfg.mesh_sqrt_scale},
                        {"dropout", cfg.dropout}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  const nlohmann::json ref = config_to_json(ModelConfig{});
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!ref.contains(key)) {
      throw ConfigError("unknown model config key '" + key + "'");
    }
  }
  for (const auto& [key, value] : ref.items()) {
    (void)value;
    if (!j.contains(key)) {
      throw ConfigError("model config missing key '" + key + "'");
    }
  }
  ModelConfig cfg;
  try {
    cfg.d_model = j.at("d_model").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.layers = j.at("layers").get<int>();
    cfg.memory_slots = j.at("memory_slots").get<int>();
    cfg.d_feat = j.at("d_feat").get<int>();
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.max_len = j.at("max_len").get<int>();
    cfg.connectivity =
        connectivity_from_string(j.at("connectivity").get<std::string>());
    cfg.skip_memories = j.at("skip_memories").get<std::vector<int>>();
    cfg.use_geometry = j.at("use_geometry").get<bool>();
    cfg.use_lam = j.at("use_lam").get<bool>();
    cfg.use_background = j.at("use_background").get<bool>();
    cfg.geometry_kind =
        geometry_kind_from_string(j.at("geometry_kind").get<std::string>());
    cfg.mesh_sqrt_scale = j.at("mesh_sqrt_scale").get<bool>();
    cfg.dropout = j.at("dropout").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config value: ") + e.what());
  }
  return cfg;
}

Matrix positional_encoding(int max_len, int d_model) {
  if (d_model <= 0 || d_model % 2 != 0) {
    throw ConfigError("positional encoding needs even d_model, got " +
                      std::to_string(d_model));
  }
  Matrix pe(max_len, d_model);
  for (int r = 0; r < max_len; ++r) {
    double pos = r + 1;
    for (int i = 0; 2 * i < d_model; ++i) {
      double freq =
          std::pow(10000.0, -2.0 * i / static_cast<double>(d_model));
      pe(r, 2 * i) = std::sin(pos * freq);
      pe(r, 2 * i + 1) = std::cos(pos * freq);
    }
  }
  return pe;
}

namespace {

std::string layer_key(const char* stack, int layer, const char* rest) {
  return std::string(stack) + ".l" + std::to_string(layer) + "." + rest;
}

}  // namespace

Model::Model(const ModelConfig& cfg, const Vocabulary& vocab,
             std::uint64_t init_seed)
    : cfg_(cfg), plan_(build_connectivity(cfg)), vocab_(vocab) {
  if (cfg_.vocab_size != vocab_.size()) {
    throw ConfigError("vocab_size " + std::to_string(cfg_.vocab_size) +
                      " does not match the dictionary (" +
                      std::to_string(vocab_.size()) + " entries)");
  }
  pe_ = positional_encoding(cfg_.max_len, cfg_.d_model);
  auto rng = make_stream(init_seed, "init");
  const int d = cfg_.d_model;
  auto glorot = [&](const std::string& name, Eigen::Index r, Eigen::Index c) {
    return params_.create_glorot(name, r, c, rng);
  };
  auto ones_row = [&](const std::string& name) {
    params_.create(name, Matrix::Ones(1, d));
  };
  glorot("embed.word", cfg_.vocab_size, d);
  glorot("embed.visual", cfg_.d_feat, d);
  glorot("out.w", d, cfg_.vocab_size);
  params_.create_zeros("out.b", 1, cfg_.vocab_size);
  for (int l = 0; l < cfg_.layers; ++l) {
    for (const char* m : {"att.wq", "att.wk", "att.wv", "att.wo"}) {
      glorot(layer_key("enc", l, m), d, d);
    }
    if (cfg_.memory_slots > 0) {
      glorot(layer_key("enc", l, "att.mk"), cfg_.memory_slots, d);
      glorot(layer_key("enc", l, "att.mv"), cfg_.memory_slots, d);
    }
    if (cfg_.use_geometry) {
      glorot(layer_key("enc", l, "wg"), d, cfg_.heads);
    }
    glorot(layer_key("enc", l, "ff.w1"), d, 4 * d);
    params_.create_zeros(layer_key("enc", l, "ff.b1"), 1, 4 * d);
    glorot(layer_key("enc", l, "ff.w2"), 4 * d, d);
    params_.create_zeros(layer_key("enc", l, "ff.b2"), 1, d);
    for (const char* lnname : {"ln1", "ln2"}) {
      ones_row(layer_key("enc", l, (std::string(lnname) + ".g").c_str()));
      params_.create_zeros(layer_key("enc", l, (std::string(lnname) + ".b").c_str()), 1, d);
    }
  }
  if (cfg_.use_lam) {
    for (const char* m : {"lam.wq", "lam.wk", "lam.wv", "lam.wo"}) {
      glorot(m, d, d);
    }
  }
  for (int l = 0; l < cfg_.layers; ++l) {
    for (const char* m : {"self.wq", "self.wk", "self.wv", "self.wo",
                          "cross.wq", "cross.wk", "cross.wv", "cross.wo"}) {
      glorot(layer_key("dec", l, m), d, d);
    }
    for (int mem : plan_.decoder_memories[l]) {
      std::string stem = "alpha" + std::to_string(mem);
      glorot(layer_key("dec", l, (stem + ".w").c_str()), 2 * d, d);
      params_.create_zeros(layer_key("dec", l, (stem + ".b").c_str()), 1, d);
    }
    glorot(layer_key("dec", l, "ff.w1"), d, 4 * d);
    params_.create_zeros(layer_key("dec", l, "ff.b1"), 1, 4 * d);
    glorot(layer_key("dec", l, "ff.w2"), 4 * d, d);
    params_.create_zeros(layer_key("dec", l, "ff.b2"), 1, d);
    for (const char* lnname : {"ln1", "ln2", "ln3"}) {
      ones_row(layer_key("dec", l, (std::string(lnname) + ".g").c_str()));
      params_.create_zeros(layer_key("dec", l, (std::string(lnname) + ".b").c_str()), 1, d);
    }
  }
}

AttnParams Model::attn_params(const std::string& prefix) const {
  AttnParams p;
  p.wq = params_.get(prefix + ".wq");
  p.wk = params_.get(prefix + ".wk");
  p.wv = params_.get(prefix + ".wv");
  p.wo = params_.get(prefix + ".wo");
  return p;
}

Tensor Model::maybe_dropout(const Tensor& x, bool training,
                            std::mt19937_64* rng) {
  if (!training || cfg_.dropout == 0.0) return x;
  if (rng == nullptr) {
    throw ContractError("training forward pass needs a dropout stream");
  }
  return dropout(x, cfg_.dropout, *rng, true);
}

Tensor Model::feed_forward(const Tensor& x, const std::string& prefix,
                           bool training, std::mt19937_64* rng) {
  Tensor h = add(matmul(x, params_.get(prefix + ".ff.w1")),
                 broadcast_rows(params_.get(prefix + ".ff.b1"), x.rows()));
  h = relu(h);
  h = add(matmul(h, params_.get(prefix + ".ff.w2")),
          broadcast_rows(params_.get(prefix + ".ff.b2"), x.rows()));
  return maybe_dropout(h, training, rng);
}

const Model::SceneConstants& Model::prepare(const Scene& scene) {
  std::lock_guard<std::mutex> lock(cache_mutex_);
  auto it = scene_cache_.find(scene.id);
  if (it != scene_cache_.end()) return it->second;

  if (scene.proposals.empty()) {
    throw ContractError("scene '" + scene.id + "': no proposals to encode");
  }
  const auto n = static_cast<Eigen::Index>(scene.proposals.size());
  const Eigen::Index n_tot = n + (cfg_.use_background ? 1 : 0);
  SceneConstants sc;
  sc.features.resize(n_tot, cfg_.d_feat);
  std::vector<Box> boxes;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Proposal& p = scene.proposals[static_cast<std::size_t>(i)];
    if (p.feature.size() != cfg_.d_feat) {
      throw ConfigError("scene '" + scene.id + "': proposal feature size " +
                        std::to_string(p.feature.size()) + " != d_feat " +
                        std::to_string(cfg_.d_feat));
    }
    sc.features.row(i) = p.feature.transpose();
    boxes.push_back(p.box);
    sc.class_words.push_back(p.class_name);
    sc.probs.push_back(p.class_prob);
  }
  if (cfg_.use_background) {
    if (scene.background.size() != cfg_.d_feat) {
      throw ConfigError("scene '" + scene.id + "': background feature size " +
                        std::to_string(scene.background.size()) +
                        " != d_feat " + std::to_string(cfg_.d_feat));
    }
    sc.features.row(n) = scene.background.transpose();
    boxes.push_back(background_box(scene.image_w, scene.image_h));
  }
  if (cfg_.use_geometry) {
    GeometryMatrix geo = pairwise_geometry(boxes, cfg_.geometry_kind);
    sc.geometry = constant(geometry_embedding(geo, cfg_.d_model));
  }
  return scene_cache_.emplace(scene.id, std::move(sc)).first->second;
}

EncodeResult Model::encode(const Scene& scene, bool training,
                           std::mt19937_64* dropout_rng, AttnTrace* trace) {
  const SceneConstants& sc = prepare(scene);
  const auto n_tot = sc.features.rows();
  EncodeResult result;
  result.n_tot = static_cast<int>(n_tot);

  Tensor x = matmul(constant(sc.features), params_.get("embed.visual"));
  for (int l = 0; l < cfg_.layers; ++l) {
    Tensor layer_in = x;
    AttnOptions opt;
    std::vector<Tensor> eta;
    Tensor mk, mv;
    if (cfg_.use_geometry) {
      eta = geometry_weights(sc.geometry,
                             params_.get(layer_key("enc", l, "wg")),
                             static_cast<int>(n_tot));
      opt.key_bias = &eta;
    }
    if (cfg_.memory_slots > 0) {
      mk = params_.get(layer_key("enc", l, "att.mk"));
      mv = params_.get(layer_key("enc", l, "att.mv"));
      opt.mem_k = &mk;
      opt.mem_v = &mv;
    }
    opt.trace = trace;
    opt.trace_name = layer_key("enc", l, "self");
    Tensor a = multi_head_attention(x, x, x, attn_params(layer_key("enc", l, "att")),
                                    cfg_.heads, opt);
    a = maybe_dropout(a, training, dropout_rng);
    x = layer_norm(add(x, a), params_.get(layer_key("enc", l, "ln1.g")),
                   params_.get(layer_key("enc", l, "ln1.b")));
    Tensor f = feed_forward(x, "enc.l" + std::to_string(l), training, dropout_rng);
    x = layer_norm(add(x, f), params_.get(layer_key("enc", l, "ln2.g")),
                   params_.get(layer_key("enc", l, "ln2.b")));
    if (plan_.encoder_residual && l > 0) x = add(x, layer_in);
    result.enc_outputs.push_back(x);
  }

  if (cfg_.use_lam) {
    LabelSet labels = make_label_set(sc.class_words, vocab_,
                                     params_.get("embed.word"), sc.probs);
    AttnParams lam = attn_params("lam");
    Tensor gate = label_gate(labels, lam, cfg_.heads, trace);
    if (cfg_.use_background) gate = with_background_ones(gate);
    result.gate = gate;
    result.memories = gate_encoder_outputs(result.enc_outputs, gate);
  } else {
    result.memories = result.enc_outputs;
  }
  return result;
}

Tensor Model::decode(const EncodeResult& enc, const std::vector<int>& prefix,
                     bool training, std::mt19937_64* dropout_rng,
                     AttnTrace* trace) {
  if (prefix.empty() || prefix.front() != Vocabulary::kStart) {
    throw ContractError("decoder prefix must begin with the start token");
  }
  const auto t = static_cast<Eigen::Index>(prefix.size());
  if (t > cfg_.max_len) {
    throw ContractError("prefix length " + std::to_string(t) +
                        " exceeds max caption length " +
                        std::to_string(cfg_.max_len));
  }
  if (static_cast<int>(enc.memories.size()) != cfg_.layers) {
    throw ContractError("encoder provided " +
                        std::to_string(enc.memories.size()) +
                        " memories for " + std::to_string(cfg_.layers) +
                        " layers");
  }

  Tensor y = embed_lookup(params_.get("embed.word"), prefix);
  y = add(y, constant(pe_.topRows(t)));
  BoolArray causal(t, t);
  for (Eigen::Index i = 0; i < t; ++i) {
    for (Eigen::Index j = 0; j < t; ++j) causal(i, j) = j <= i;
  }

  for (int l = 0; l < cfg_.layers; ++l) {
    Tensor layer_in = y;
    AttnOptions self_opt;
    self_opt.mask = &causal;
    self_opt.trace = trace;
    self_opt.trace_name = layer_key("dec", l, "self");
    Tensor s = multi_head_attention(
        y, y, y, attn_params(layer_key("dec", l, "self")), cfg_.heads, self_opt);
    s = maybe_dropout(s, training, dropout_rng);
    y = layer_norm(add(y, s), params_.get(layer_key("dec", l, "ln1.g")),
                   params_.get(layer_key("dec", l, "ln1.b")));

    AttnParams cross = attn_params(layer_key("dec", l, "cross"));
    Tensor mesh;
    const auto& branches = plan_.decoder_memories[static_cast<std::size_t>(l)];
    for (int mem : branches) {
      AttnOptions copt;
      copt.trace = trace;
      copt.trace_name = layer_key("dec", l, ("cross.m" + std::to_string(mem)).c_str());
      const Tensor& memory = enc.memories[static_cast<std::size_t>(mem)];
      Tensor c = multi_head_attention(y, memory, memory, cross, cfg_.heads, copt);
      std::string stem = "alpha" + std::to_string(mem);
      Tensor alpha = sigmoid(
          add(matmul(concat_cols({y, c}),
                     params_.get(layer_key("dec", l, (stem + ".w").c_str()))),
              broadcast_rows(
                  params_.get(layer_key("dec", l, (stem + ".b").c_str())), t)));
      if (trace != nullptr) {
        trace->add(layer_key("dec", l, (stem).c_str()), alpha.value());
      }
      Tensor term = mul(alpha, c);
      mesh = mesh.defined() ? add(mesh, term) : term;
    }
    if (cfg_.mesh_sqrt_scale && branches.size() > 1) {
      mesh = scale(mesh, 1.0 / std::sqrt(static_cast<double>(branches.size())));
    }
    mesh = maybe_dropout(mesh, training, dropout_rng);
    y = layer_norm(add(y, mesh), params_.get(layer_key("dec", l, "ln2.g")),
                   params_.get(layer_key("dec", l, "ln2.b")));

    Tensor f = feed_forward(y, "dec.l" + std::to_string(l), training, dropout_rng);
    y = layer_norm(add(y, f), params_.get(layer_key("dec", l, "ln3.g")),
                   params_.get(layer_key("dec", l, "ln3.b")));
    if (plan_.decoder_residual && l > 0) y = add(y, layer_in);
  }
  return add(matmul(y, params_.get("out.w")),
             broadcast_rows(params_.get("out.b"), t));
}

Tensor Model::forward(const Scene& scene, const std::vector<int>& prefix,
                      bool training, std::mt19937_64* dropout_rng,
                      AttnTrace* trace) {
  EncodeResult enc = encode(scene, training, dropout_rng, trace);
  return decode(enc, prefix, training, dropout_rng, trace);
}

}  // namespace latgeo
