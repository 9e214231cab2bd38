#include "latgeo/cli.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <memory>
#include <unordered_map>
#include <unordered_set>

#include "CLI11.hpp"
#include "latgeo/checkpoint.hpp"
#include "latgeo/decode.hpp"
#include "latgeo/error.hpp"
#include "latgeo/gradcheck.hpp"
#include "latgeo/metrics.hpp"
#include "latgeo/scene.hpp"
#include "latgeo/synth.hpp"
#include "latgeo/vocab.hpp"

namespace latgeo {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

// ---- configuration ----------------------------------------------------------

json default_flat_config() {
  const ModelConfig m;
  const TrainConfig t;
  json j;
  j["model.d_model"] = m.d_model;
  j["model.heads"] = m.heads;
  j["model.layers"] = m.layers;
  j["model.memory_slots"] = m.memory_slots;
  j["model.d_feat"] = m.d_feat;
  j["model.max_len"] = m.max_len;
  j["model.connectivity"] = to_string(m.connectivity);
  j["model.skip_memories"] = m.skip_memories;
  j["model.use_geometry"] = m.use_geometry;
  j["model.use_lam"] = m.use_lam;
  j["model.use_background"] = m.use_background;
  j["model.geometry_kind"] = to_string(m.geometry_kind);
  j["model.mesh_sqrt_scale"] = m.mesh_sqrt_scale;
  j["model.dropout"] = m.dropout;
  j["train.smoothing"] = t.smoothing;
  j["train.warmup_steps"] = t.warmup_steps;
  j["train.lr_scale"] = t.lr_scale;
  j["train.rl_lr"] = t.rl_lr;
  j["train.beam_k"] = t.beam_k;
  j["train.patience"] = t.patience;
  j["train.batch_size"] = t.batch_size;
  j["train.max_epochs"] = t.max_epochs;
  j["train.seed"] = t.seed;
  j["train.refs_per_scene"] = t.refs_per_scene;
  j["train.rl_sample"] = t.rl_sample;
  j["train.rl_temperature"] = t.rl_temperature;
  j["vocab.min_count"] = 5;
  return j;
}

namespace {

// Overlay one key with type discipline derived from the default value.
void apply_key(json& flat, const std::string& key, const json& value,
               const std::string& origin) {
  auto it = flat.find(key);
  if (it == flat.end()) {
    throw ConfigError("unknown configuration key '" + key + "' (" + origin +
                      ")");
  }
  const json& def = *it;
  const bool want_number = def.is_number();
  const bool want_bool = def.is_boolean();
  const bool want_string = def.is_string();
  const bool want_array = def.is_array();
  if ((want_number && !value.is_number()) ||
      (want_bool && !value.is_boolean()) ||
      (want_string && !value.is_string()) ||
      (want_array && !value.is_array())) {
    throw ConfigError("configuration key '" + key + "' expects a " +
                      std::string(def.type_name()) + ", got " +
                      std::string(value.type_name()) + " (" + origin + ")");
  }
  *it = value;
}

json parse_set_value(const std::string& raw) {
  json v = json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (v.is_discarded()) return json(raw);  // bare words are strings
  return v;
}

std::string iso_utc_now() {
  const std::time_t t =
      std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int thread_cap() {
  const char* env = std::getenv("LATGEO_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (end == nullptr || *end != '\0' || n < 1) {
    throw ConfigError("LATGEO_THREADS must be a positive integer, got '" +
                      std::string(env) + "'");
  }
  return static_cast<int>(n);
}

}  // namespace

bool ResolvedConfig::was_set(const std::string& key) const {
  return std::find(explicit_keys.begin(), explicit_keys.end(), key) !=
         explicit_keys.end();
}

json flat_from_model(const ModelConfig& cfg) {
  json j;
  j["model.d_model"] = cfg.d_model;
  j["model.heads"] = cfg.heads;
  j["model.layers"] = cfg.layers;
  j["model.memory_slots"] = cfg.memory_slots;
  j["model.d_feat"] = cfg.d_feat;
  j["model.vocab_size"] = cfg.vocab_size;
  j["model.max_len"] = cfg.max_len;
  j["model.connectivity"] = to_string(cfg.connectivity);
  j["model.skip_memories"] = cfg.skip_memories;
  j["model.use_geometry"] = cfg.use_geometry;
  j["model.use_lam"] = cfg.use_lam;
  j["model.use_background"] = cfg.use_background;
  j["model.geometry_kind"] = to_string(cfg.geometry_kind);
  j["model.mesh_sqrt_scale"] = cfg.mesh_sqrt_scale;
  j["model.dropout"] = cfg.dropout;
  return j;
}

ModelConfig model_from_flat(const json& flat) {
  ModelConfig m;
  try {
    m.d_model = flat.at("model.d_model").get<int>();
    m.heads = flat.at("model.heads").get<int>();
    m.layers = flat.at("model.layers").get<int>();
    m.memory_slots = flat.at("model.memory_slots").get<int>();
    m.d_feat = flat.at("model.d_feat").get<int>();
    if (flat.contains("model.vocab_size")) {
      m.vocab_size = flat.at("model.vocab_size").get<int>();
    }
    m.max_len = flat.at("model.max_len").get<int>();
    m.connectivity =
        connectivity_from_string(flat.at("model.connectivity").get<std::string>());
    m.skip_memories = flat.at("model.skip_memories").get<std::vector<int>>();
    m.use_geometry = flat.at("model.use_geometry").get<bool>();
    m.use_lam = flat.at("model.use_lam").get<bool>();
    m.use_background = flat.at("model.use_background").get<bool>();
    m.geometry_kind =
        geometry_kind_from_string(flat.at("model.geometry_kind").get<std::string>());
    m.mesh_sqrt_scale = flat.at("model.mesh_sqrt_scale").get<bool>();
    m.dropout = flat.at("model.dropout").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError("malformed model configuration: " + std::string(e.what()));
  }
  return m;
}

ModelConfig ResolvedConfig::model_config() const { return model_from_flat(flat); }

TrainConfig ResolvedConfig::train_config() const {
  TrainConfig t;
  try {
    t.smoothing = flat.at("train.smoothing").get<double>();
    t.warmup_steps = flat.at("train.warmup_steps").get<int>();
    t.lr_scale = flat.at("train.lr_scale").get<double>();
    t.rl_lr = flat.at("train.rl_lr").get<double>();
    t.beam_k = flat.at("train.beam_k").get<int>();
    t.patience = flat.at("train.patience").get<int>();
    t.batch_size = flat.at("train.batch_size").get<int>();
    t.max_epochs = flat.at("train.max_epochs").get<int>();
    t.seed = flat.at("train.seed").get<std::uint64_t>();
    t.refs_per_scene = flat.at("train.refs_per_scene").get<int>();
    t.rl_sample = flat.at("train.rl_sample").get<bool>();
    t.rl_temperature = flat.at("train.rl_temperature").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError("malformed training configuration: " +
                      std::string(e.what()));
  }
  return t;
}

int ResolvedConfig::vocab_min_count() const {
  return flat.at("vocab.min_count").get<int>();
}

ResolvedConfig resolve_config(const std::string& file_path,
                              const std::vector<std::string>& sets) {
  ResolvedConfig rc;
  rc.flat = default_flat_config();

  if (!file_path.empty()) {
    std::ifstream in(file_path);
    if (!in) throw IoError("cannot open config file '" + file_path + "'");
    json file;
    try {
      in >> file;
    } catch (const json::exception& e) {
      throw ParseError("config file '" + file_path + "': " + e.what());
    }
    if (!file.is_object()) {
      throw ParseError("config file '" + file_path +
                       "' must hold one JSON object of dotted keys");
    }
    for (const auto& [key, value] : file.items()) {
      apply_key(rc.flat, key, value, "config file");
      rc.explicit_keys.push_back(key);
    }
  }

  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("--set expects key=value, got '" + s + "'");
    }
    const std::string key = s.substr(0, eq);
    apply_key(rc.flat, key, parse_set_value(s.substr(eq + 1)), "--set flag");
    rc.explicit_keys.push_back(key);
  }
  return rc;
}

void write_run_manifest(const std::string& path, const std::string& command,
                        const json& config, std::uint64_t seed,
                        const json& inputs, const json& artifacts) {
  ordered_json m;
  m["command"] = command;
  m["seed"] = seed;
  m["started"] = iso_utc_now();
  m["threads"] = thread_cap();
  m["inputs"] = inputs;
  m["artifacts"] = artifacts;
  m["config"] = config;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write run manifest '" + path + "'");
  out << m.dump(2) << '\n';
  if (!out) throw IoError("short write to run manifest '" + path + "'");
}

// ---- shared helpers ----------------------------------------------------------

namespace {

std::vector<std::string> all_refs(const std::vector<Scene>& scenes) {
  std::vector<std::string> caps;
  for (const Scene& s : scenes) {
    for (const std::string& r : s.refs) caps.push_back(r);
  }
  return caps;
}

struct LoadedModel {
  Checkpoint ckpt;
  Vocabulary vocab;
  std::unique_ptr<Model> model;  // Model guards its scene cache, so no moves
};

LoadedModel model_from_checkpoint(const std::string& path) {
  Checkpoint c = load_checkpoint(path);
  Vocabulary vocab = Vocabulary::from_json(c.vocab);
  auto model = std::make_unique<Model>(c.config, vocab, /*init_seed=*/0);
  restore_checkpoint(c, *model);
  return LoadedModel{std::move(c), std::move(vocab), std::move(model)};
}

struct CorpusScores {
  Score b1, b2, b3, b4, rouge, cider;
};

CorpusScores score_corpus(const std::vector<TokenSeq>& cands,
                          const std::vector<RefSet>& refs) {
  return CorpusScores{bleu(cands, refs, 1),   bleu(cands, refs, 2),
                      bleu(cands, refs, 3),   bleu(cands, refs, 4),
                      rouge_l(cands, refs),   cider_d(cands, refs)};
}

std::vector<RefSet> tokenized_refs(const std::vector<Scene>& scenes) {
  std::vector<RefSet> refs;
  for (const Scene& s : scenes) {
    if (s.refs.empty()) {
      throw ContractError("scene '" + s.id + "' has no reference captions");
    }
    RefSet rs;
    for (const std::string& r : s.refs) rs.push_back(tokenize(r));
    refs.push_back(std::move(rs));
  }
  return refs;
}

std::string csv_safe(std::string s) {
  for (char& c : s) {
    if (c == ',') c = ';';
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

// Greedy caption tokens for every scene, tokenized for the metric layer.
std::vector<TokenSeq> greedy_corpus(Model& model,
                                    const std::vector<Scene>& scenes) {
  std::vector<TokenSeq> cands;
  for (const Scene& s : scenes) {
    cands.push_back(
        tokenize(caption_text(greedy_caption(model, s), model.vocab())));
  }
  return cands;
}

int best_epoch_of(const Trainer& trainer, double best) {
  int epoch = 0;
  for (const EpochRow& row : trainer.history()) {
    if (row.split == "val" && row.cider == best) {
      epoch = row.epoch;
      break;
    }
  }
  return epoch;
}

// ---- synth -------------------------------------------------------------------

struct SynthOptions {
  std::string out;
  int n = 500;
  std::uint64_t seed = 0;
  int objects_min = 2;
  int objects_max = 3;
  int classes = 8;
  int d_feat = 64;
  int image_w = 640;
  int image_h = 480;
  int caption_limit = 22;
};

int cmd_synth(const SynthOptions& o) {
  SynthConfig sc;
  sc.scenes = o.n;
  sc.seed = o.seed;
  sc.objects_min = o.objects_min;
  sc.objects_max = o.objects_max;
  sc.classes = o.classes;
  sc.d_feat = o.d_feat;
  sc.image_w = o.image_w;
  sc.image_h = o.image_h;
  sc.caption_limit = o.caption_limit;

  json cfg{{"n", o.n},
           {"seed", o.seed},
           {"objects_min", o.objects_min},
           {"objects_max", o.objects_max},
           {"classes", o.classes},
           {"d_feat", o.d_feat},
           {"image_w", o.image_w},
           {"image_h", o.image_h},
           {"caption_limit", o.caption_limit}};
  write_run_manifest(o.out + ".manifest.json", "synth", cfg, o.seed,
                     json::object(), json{{"scenes", o.out}});

  const std::vector<Scene> scenes = generate_corpus(sc);
  save_scenes_jsonl(o.out, scenes);
  std::cout << "wrote " << scenes.size() << " scenes to " << o.out << "\n";
  return 0;
}

// ---- train / rl ---------------------------------------------------------------

struct FitOptions {
  std::string data, val, out;
  std::string config;
  std::string resume;
  std::vector<std::string> sets;
};

int cmd_fit(const FitOptions& o, bool reward_phase) {
  const std::string command = reward_phase ? "rl" : "train";
  if (reward_phase && o.resume.empty()) {
    throw ConfigError(
        "the reward phase needs --resume with a supervised checkpoint");
  }
  ResolvedConfig rc = resolve_config(o.config, o.sets);
  const std::vector<Scene> train = load_scenes_jsonl(o.data);
  const std::vector<Scene> val = load_scenes_jsonl(o.val);

  fs::create_directories(o.out);
  TrainConfig tc = rc.train_config();
  tc.checkpoint_dir = o.out;
  tc.log_path = o.out + "/log.csv";

  write_run_manifest(
      o.out + "/manifest.json", command, rc.flat, tc.seed,
      json{{"data", o.data}, {"val", o.val}, {"resume", o.resume}},
      json{{"checkpoints", o.out},
           {"log", tc.log_path},
           {"best", o.out + "/best.ckpt"},
           {"last", o.out + "/last.ckpt"}});

  ModelConfig mc;
  bool resuming = !o.resume.empty();
  Checkpoint ck;
  if (resuming) {
    ck = load_checkpoint(o.resume);
    // The checkpoint's stored shape wins unless a model key was set
    // explicitly; a deliberate reshape then fails with the shape report.
    json flat = flat_from_model(ck.config);
    for (const std::string& key : rc.explicit_keys) {
      if (key.rfind("model.", 0) == 0) flat[key] = rc.flat.at(key);
    }
    mc = model_from_flat(flat);
  } else {
    mc = rc.model_config();
  }

  Vocabulary vocab = resuming
                         ? Vocabulary::from_json(ck.vocab)
                         : Vocabulary::build(all_refs(train),
                                             rc.vocab_min_count());
  if (!resuming) mc.vocab_size = vocab.size();

  Model model(mc, vocab, tc.seed);
  Trainer trainer(model, tc);
  if (resuming) trainer.resume_from(ck);

  const double best = reward_phase ? trainer.fit_rl(train, val)
                                   : trainer.fit_xe(train, val);
  std::cout << command << ": best validation cider_d "
            << std::setprecision(10) << best << " (epochs run "
            << trainer.epochs_run() << "); checkpoints in " << o.out << "\n";
  return 0;
}

// ---- caption -------------------------------------------------------------------

struct CaptionOptions {
  std::string ckpt, data, out;
  int beam = 1;
  int max_len = 0;  // 0: the model's trained cap
  bool length_norm = false;
  double length_alpha = 0.65;
};

int cmd_caption(const CaptionOptions& o) {
  LoadedModel lm = model_from_checkpoint(o.ckpt);
  const std::vector<Scene> scenes = load_scenes_jsonl(o.data);

  write_run_manifest(o.out + ".manifest.json", "caption",
                     json{{"beam", o.beam},
                          {"max_len", o.max_len},
                          {"length_norm", o.length_norm},
                          {"length_alpha", o.length_alpha}},
                     0,
                     json{{"checkpoint", o.ckpt}, {"data", o.data}},
                     json{{"captions", o.out}});

  std::ofstream out(o.out, std::ios::trunc);
  if (!out) throw IoError("cannot write captions to '" + o.out + "'");
  BeamOptions bo;
  bo.length_norm = o.length_norm;
  bo.length_alpha = o.length_alpha;
  for (const Scene& s : scenes) {
    const CaptionHypothesis hyp =
        o.beam > 1
            ? beam_captions(*lm.model, s, o.beam, o.max_len, bo).front()
            : greedy_caption(*lm.model, s, o.max_len);
    out << ordered_json{{"id", s.id},
                        {"caption", caption_text(hyp, lm.vocab)}}
               .dump()
        << '\n';
  }
  if (!out) throw IoError("short write to '" + o.out + "'");
  std::cout << "wrote " << scenes.size() << " captions to " << o.out << "\n";
  return 0;
}

// ---- eval ----------------------------------------------------------------------

struct EvalOptions {
  std::string cands, refs, out;  // empty out: report to stdout only
};

std::unordered_map<std::string, std::string> load_candidates(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open candidates '" + path + "'");
  std::unordered_map<std::string, std::string> by_id;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      const std::string id = j.at("id").get<std::string>();
      const std::string caption = j.at("caption").get<std::string>();
      if (!by_id.emplace(id, caption).second) {
        throw ParseError("candidates '" + path + "' line " +
                         std::to_string(lineno) + ": duplicate id '" + id +
                         "'");
      }
    } catch (const json::exception& e) {
      throw ParseError("candidates '" + path + "' line " +
                       std::to_string(lineno) + ": " + e.what());
    }
  }
  return by_id;
}

int cmd_eval(const EvalOptions& o) {
  const std::vector<Scene> scenes = load_scenes_jsonl(o.refs);
  const auto by_id = load_candidates(o.cands);

  std::unordered_set<std::string> scene_ids;
  for (const Scene& s : scenes) scene_ids.insert(s.id);
  for (const auto& [id, caption] : by_id) {
    (void)caption;
    if (scene_ids.count(id) == 0) {
      throw ContractError("candidate '" + id + "' matches no scene");
    }
  }

  std::vector<TokenSeq> cands;
  for (const Scene& s : scenes) {
    auto it = by_id.find(s.id);
    if (it == by_id.end()) {
      throw ContractError("no candidate caption for scene '" + s.id + "'");
    }
    cands.push_back(tokenize(it->second));
  }
  const std::vector<RefSet> refs = tokenized_refs(scenes);
  const CorpusScores s = score_corpus(cands, refs);

  ordered_json report;
  report["bleu1"] = s.b1.corpus;
  report["bleu2"] = s.b2.corpus;
  report["bleu3"] = s.b3.corpus;
  report["bleu4"] = s.b4.corpus;
  report["rougeL"] = s.rouge.corpus;
  report["ciderD"] = s.cider.corpus;
  ordered_json per;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    per[scenes[i].id] = ordered_json{{"bleu1", s.b1.per_image[i]},
                                     {"bleu2", s.b2.per_image[i]},
                                     {"bleu3", s.b3.per_image[i]},
                                     {"bleu4", s.b4.per_image[i]},
                                     {"rougeL", s.rouge.per_image[i]},
                                     {"ciderD", s.cider.per_image[i]}};
  }
  report["per_image"] = per;

  if (!o.out.empty()) {
    write_run_manifest(o.out + ".manifest.json", "eval", json::object(), 0,
                       json{{"candidates", o.cands}, {"references", o.refs}},
                       json{{"report", o.out}});
    std::ofstream out(o.out, std::ios::trunc);
    if (!out) throw IoError("cannot write report to '" + o.out + "'");
    out << report.dump(2) << '\n';
  }
  std::cout << report.dump(2) << '\n';
  return 0;
}

// ---- attn-dump -----------------------------------------------------------------

struct AttnDumpOptions {
  std::string ckpt, data, out;
  std::string id;  // empty: first scene in the file
};

// "name.h<k>" marks one attention head's map; everything else is a gate.
bool split_head_suffix(const std::string& name, std::string& stem, int& head) {
  const auto at = name.rfind(".h");
  if (at == std::string::npos) return false;
  const std::string digits = name.substr(at + 2);
  if (digits.empty() ||
      digits.find_first_not_of("0123456789") != std::string::npos) {
    return false;
  }
  stem = name.substr(0, at);
  head = std::stoi(digits);
  return true;
}

int cmd_attn_dump(const AttnDumpOptions& o) {
  LoadedModel lm = model_from_checkpoint(o.ckpt);
  const std::vector<Scene> scenes = load_scenes_jsonl(o.data);
  if (scenes.empty()) throw ContractError("no scenes in '" + o.data + "'");

  const Scene* scene = &scenes.front();
  if (!o.id.empty()) {
    scene = nullptr;
    for (const Scene& s : scenes) {
      if (s.id == o.id) {
        scene = &s;
        break;
      }
    }
    if (scene == nullptr) {
      throw ContractError("scene '" + o.id + "' not found in '" + o.data +
                          "'");
    }
  }

  // Teacher-force the first reference when there is one; otherwise trace the
  // model's own greedy caption.
  std::vector<int> prefix;
  if (!scene->refs.empty()) {
    prefix = lm.vocab.encode(scene->refs.front(), lm.model->config().max_len);
    prefix.pop_back();  // drop the end marker: inputs, not targets
  } else {
    prefix = greedy_caption(*lm.model, *scene).tokens;
    if (prefix.size() > 1 && prefix.back() == Vocabulary::kEnd) {
      prefix.pop_back();
    }
  }

  write_run_manifest(o.out + ".manifest.json", "attn-dump", json::object(), 0,
                     json{{"checkpoint", o.ckpt},
                          {"data", o.data},
                          {"scene", scene->id}},
                     json{{"table", o.out}});

  AttnTrace trace;
  lm.model->forward(*scene, prefix, /*training=*/false, nullptr, &trace);

  std::ofstream out(o.out, std::ios::trunc);
  if (!out) throw IoError("cannot write attention table to '" + o.out + "'");
  out << "entry,kind,head,row,col,value\n";
  out << std::setprecision(17);
  std::size_t rows = 0;
  for (const AttnTrace::Entry& e : trace.entries) {
    std::string stem = e.name;
    int head = -1;
    const bool is_attention = split_head_suffix(e.name, stem, head);
    for (Eigen::Index r = 0; r < e.values.rows(); ++r) {
      for (Eigen::Index c = 0; c < e.values.cols(); ++c) {
        out << stem << ',' << (is_attention ? "attention" : "gate") << ',';
        if (is_attention) out << head;
        out << ',' << r << ',' << c << ',' << e.values(r, c) << '\n';
        ++rows;
      }
    }
  }
  if (!out) throw IoError("short write to '" + o.out + "'");
  std::cout << "wrote " << rows << " attention table rows for scene '"
            << scene->id << "' to " << o.out << "\n";
  return 0;
}

// ---- gradcheck -----------------------------------------------------------------

struct GradCheckOptions {
  std::uint64_t seed = 0;
  std::string out;  // optional JSON report
  double limit = 1e-4;
};

int cmd_gradcheck(const GradCheckOptions& o) {
  const GradCheckReport report = run_gradient_suite(o.seed);
  for (const GradCheckEntry& e : report.checks) {
    std::cout << std::left << std::setw(26) << e.name << " cases " << std::setw(3)
              << e.cases << " max rel err " << std::scientific
              << std::setprecision(3) << e.worst << std::defaultfloat << "\n";
  }
  const bool ok = report.passed(o.limit);
  std::cout << "total cases " << report.total_cases << ", max rel err "
            << std::scientific << std::setprecision(3) << report.max_err
            << std::defaultfloat << ", limit " << o.limit << ": "
            << (ok ? "PASS" : "FAIL") << "\n";

  if (!o.out.empty()) {
    ordered_json j;
    j["total_cases"] = report.total_cases;
    j["max_rel_err"] = report.max_err;
    j["limit"] = o.limit;
    j["passed"] = ok;
    ordered_json checks = ordered_json::array();
    for (const GradCheckEntry& e : report.checks) {
      checks.push_back(ordered_json{
          {"name", e.name}, {"cases", e.cases}, {"max_rel_err", e.worst}});
    }
    j["checks"] = checks;
    std::ofstream out(o.out, std::ios::trunc);
    if (!out) throw IoError("cannot write gradcheck report to '" + o.out + "'");
    out << j.dump(2) << '\n';
  }
  return ok ? 0 : 2;
}

// ---- ablate --------------------------------------------------------------------

struct AblateOptions {
  std::string data, val, out;
  std::string grid = "connectivity";  // builtin name or a JSON file path
  std::string config;
  std::vector<std::string> sets;
};

json builtin_grid(const std::string& name) {
  if (name == "connectivity") {
    // Seven decoder-connectivity / depth compositions.
    return R"([
      {"name":"fully_l3","set":{"model.connectivity":"fully_connected","model.layers":3}},
      {"name":"single_l3","set":{"model.connectivity":"single","model.layers":3}},
      {"name":"skipped_l3","set":{"model.connectivity":"skipped","model.layers":3,"model.skip_memories":[0,2]}},
      {"name":"residual_encoder_l3","set":{"model.connectivity":"residual_encoder","model.layers":3}},
      {"name":"residual_encdec_l3","set":{"model.connectivity":"residual_encdec","model.layers":3}},
      {"name":"fully_l6","set":{"model.connectivity":"fully_connected","model.layers":6}},
      {"name":"residual_encdec_l6","set":{"model.connectivity":"residual_encdec","model.layers":6}}
    ])"_json;
  }
  if (name == "modules") {
    // Feature-module sweep; "baseline" switches every studied module off.
    return R"([
      {"name":"full","set":{}},
      {"name":"no_geometry","set":{"model.use_geometry":false}},
      {"name":"geometry_l1","set":{"model.geometry_kind":"l1"}},
      {"name":"no_lam","set":{"model.use_lam":false}},
      {"name":"no_background","set":{"model.use_background":false}},
      {"name":"baseline","set":{"model.use_geometry":false,"model.use_lam":false,"model.use_background":false}}
    ])"_json;
  }
  throw ConfigError("unknown grid '" + name +
                    "' (builtins: connectivity, modules; or a JSON file)");
}

json load_grid(const std::string& grid) {
  json rows;
  if (fs::exists(grid)) {
    std::ifstream in(grid);
    if (!in) throw IoError("cannot open grid file '" + grid + "'");
    try {
      in >> rows;
    } catch (const json::exception& e) {
      throw ParseError("grid file '" + grid + "': " + e.what());
    }
  } else {
    rows = builtin_grid(grid);
  }
  if (!rows.is_array() || rows.empty()) {
    throw ParseError("a grid must be a non-empty JSON array of rows");
  }
  for (const json& row : rows) {
    if (!row.is_object() || !row.contains("name") ||
        !row.at("name").is_string() ||
        (row.contains("set") && !row.at("set").is_object())) {
      throw ParseError(
          "each grid row needs {\"name\": string, \"set\": object}");
    }
  }
  return rows;
}

int cmd_ablate(const AblateOptions& o) {
  const ResolvedConfig base = resolve_config(o.config, o.sets);
  const json rows = load_grid(o.grid);
  const std::vector<Scene> train = load_scenes_jsonl(o.data);
  const std::vector<Scene> val = load_scenes_jsonl(o.val);

  fs::create_directories(o.out);
  const std::string table_path = o.out + "/ablation.csv";
  write_run_manifest(o.out + "/manifest.json", "ablate", base.flat,
                     base.flat.at("train.seed").get<std::uint64_t>(),
                     json{{"data", o.data}, {"val", o.val}, {"grid", o.grid}},
                     json{{"table", table_path},
                          {"runs", o.out + "/runs"},
                          {"grid_rows", rows}});

  std::ofstream table(table_path, std::ios::trunc);
  if (!table) throw IoError("cannot write '" + table_path + "'");
  table << "name,status,params,bleu1,bleu2,bleu3,bleu4,rouge_l,cider_d,"
           "best_epoch,seconds,note\n";
  table << std::setprecision(10);

  for (const json& row : rows) {
    const std::string name = row.at("name").get<std::string>();
    const auto t0 = std::chrono::steady_clock::now();
    try {
      ResolvedConfig rc = base;
      if (row.contains("set")) {
        for (const auto& [key, value] : row.at("set").items()) {
          apply_key(rc.flat, key, value, "grid row '" + name + "'");
        }
      }
      Vocabulary vocab =
          Vocabulary::build(all_refs(train), rc.vocab_min_count());
      ModelConfig mc = rc.model_config();
      mc.vocab_size = vocab.size();
      TrainConfig tc = rc.train_config();
      const std::string run_dir = o.out + "/runs/" + name;
      fs::create_directories(run_dir);
      tc.checkpoint_dir = run_dir;
      tc.log_path = run_dir + "/log.csv";

      Model model(mc, vocab, tc.seed);
      const std::size_t params = model.params().scalar_count();
      Trainer trainer(model, tc);
      const double best = trainer.fit_xe(train, val);

      const CorpusScores s =
          score_corpus(greedy_corpus(model, val), tokenized_refs(val));
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      table << name << ",ok," << params << ',' << s.b1.corpus << ','
            << s.b2.corpus << ',' << s.b3.corpus << ',' << s.b4.corpus << ','
            << s.rouge.corpus << ',' << s.cider.corpus << ','
            << best_epoch_of(trainer, best) << ',' << secs << ",\n";
      std::cout << "ablate " << name << ": cider_d " << s.cider.corpus
                << "\n";
    } catch (const Error& e) {
      // One failed configuration must not sink the rest of the grid.
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      table << name << ",error,,,,,,,," << ',' << secs << ','
            << csv_safe(e.what()) << "\n";
      std::cout << "ablate " << name << ": failed (" << e.what() << ")\n";
    }
    table.flush();
  }
  std::cout << "ablation table: " << table_path << "\n";
  return 0;
}

}  // namespace

// ---- entry point ----------------------------------------------------------------

int run_cli(int argc, const char* const* argv) {
  int code = 0;
  try {
    Eigen::setNbThreads(thread_cap());

    CLI::App app{"geometry-aware caption model pipeline"};
    app.require_subcommand(1);

    SynthOptions so;
    CLI::App* synth = app.add_subcommand("synth", "generate a scene corpus");
    synth->add_option("--out", so.out, "output scene JSONL")->required();
    synth->add_option("--n", so.n, "number of scenes");
    synth->add_option("--seed", so.seed, "corpus seed");
    synth->add_option("--objects-min", so.objects_min, "min objects per scene");
    synth->add_option("--objects-max", so.objects_max, "max objects per scene");
    synth->add_option("--classes", so.classes, "distinct object classes");
    synth->add_option("--dfeat", so.d_feat, "feature width");
    synth->add_option("--image-w", so.image_w, "image width");
    synth->add_option("--image-h", so.image_h, "image height");
    synth->add_option("--caption-limit", so.caption_limit,
                      "max caption tokens incl. start/end");
    synth->callback([&] { code = cmd_synth(so); });

    auto add_fit = [&](const char* name, const char* help, FitOptions& fo,
                       bool reward) {
      CLI::App* c = app.add_subcommand(name, help);
      c->add_option("--data", fo.data, "training scenes JSONL")->required();
      c->add_option("--val", fo.val, "validation scenes JSONL")->required();
      c->add_option("--out", fo.out, "run directory")->required();
      c->add_option("--config", fo.config, "JSON config of dotted keys");
      c->add_option("--resume", fo.resume, "checkpoint to continue from");
      c->add_option("--set", fo.sets, "override: key=value (repeatable)");
      c->add_option_function<std::uint64_t>(
          "--seed", [&fo](const std::uint64_t& s) {
            fo.sets.push_back("train.seed=" + std::to_string(s));
          },
          "shortcut for --set train.seed=");
      c->add_option_function<int>(
          "--max-epochs", [&fo](const int& n) {
            fo.sets.push_back("train.max_epochs=" + std::to_string(n));
          },
          "shortcut for --set train.max_epochs=");
      c->callback([&code, &fo, reward] { code = cmd_fit(fo, reward); });
      return c;
    };
    FitOptions train_o, rl_o;
    add_fit("train", "supervised training with early stopping", train_o, false);
    add_fit("rl", "reward fine-tuning from a supervised checkpoint", rl_o,
            true);

    CaptionOptions co;
    CLI::App* caption = app.add_subcommand("caption", "decode captions");
    caption->add_option("--ckpt", co.ckpt, "model checkpoint")->required();
    caption->add_option("--data", co.data, "scenes JSONL")->required();
    caption->add_option("--out", co.out, "captions JSONL")->required();
    caption->add_option("--beam", co.beam, "beam width (1 = greedy)");
    caption->add_option("--max-len", co.max_len, "caption cap (0: model cap)");
    caption->add_flag("--length-norm", co.length_norm,
                      "rank beams by length-normalized score");
    caption->add_option("--length-alpha", co.length_alpha,
                        "length normalization strength");
    caption->callback([&] { code = cmd_caption(co); });

    EvalOptions eo;
    CLI::App* eval = app.add_subcommand("eval", "score candidate captions");
    eval->add_option("--cands", eo.cands, "candidates JSONL (id, caption)")
        ->required();
    eval->add_option("--refs", eo.refs, "reference scenes JSONL")->required();
    eval->add_option("--out", eo.out, "report JSON (also printed)");
    eval->callback([&] { code = cmd_eval(eo); });

    AttnDumpOptions ao;
    CLI::App* attn = app.add_subcommand("attn-dump",
                                        "dump attention maps and gates as CSV");
    attn->add_option("--ckpt", ao.ckpt, "model checkpoint")->required();
    attn->add_option("--data", ao.data, "scenes JSONL")->required();
    attn->add_option("--out", ao.out, "CSV path")->required();
    attn->add_option("--id", ao.id, "scene id (default: first scene)");
    attn->callback([&] { code = cmd_attn_dump(ao); });

    GradCheckOptions go;
    CLI::App* grad = app.add_subcommand(
        "gradcheck", "finite-difference self-check of the gradient engine");
    grad->add_option("--seed", go.seed, "suite seed");
    grad->add_option("--out", go.out, "optional JSON report path");
    grad->callback([&] { code = cmd_gradcheck(go); });

    AblateOptions abo;
    CLI::App* ablate = app.add_subcommand(
        "ablate", "train a grid of configurations and tabulate their scores");
    ablate->add_option("--data", abo.data, "training scenes JSONL")->required();
    ablate->add_option("--val", abo.val, "validation scenes JSONL")->required();
    ablate->add_option("--out", abo.out, "grid output directory")->required();
    ablate->add_option("--grid", abo.grid,
                       "builtin grid (connectivity, modules) or JSON file");
    ablate->add_option("--config", abo.config, "JSON config of dotted keys");
    ablate->add_option("--set", abo.sets, "override: key=value (repeatable)");
    ablate->callback([&] { code = cmd_ablate(abo); });

    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int cli_code = app.exit(e);  // prints help or the parse error
      return cli_code == 0 ? 0 : 1;
    }
    return code;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("latgeo");
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace latgeo
