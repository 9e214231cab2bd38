#include "latgeo/synth.hpp"

#include <cmath>
#include <cstring>

#include "latgeo/error.hpp"
#include "latgeo/rng.hpp"

namespace latgeo {

namespace {

std::uint64_t hash_box(const Box& b, std::uint64_t seed) {
  double raw[4] = {b.x, b.y, b.w, b.h};
  return hash_bytes(raw, sizeof raw, seed);
}

Eigen::VectorXd prototype(int class_id, int d_feat) {
  // Keyed by class only: every corpus shares one prototype per class.
  const std::string key =
      class_id < 0 ? "proto/background" : "proto/" + std::to_string(class_id);
  auto g = make_stream(0x9E0C0FFEEULL, key);
  Eigen::VectorXd p(d_feat);
  for (int i = 0; i < d_feat; ++i) p(i) = normal(g);
  return p;
}

}  // namespace

const std::vector<std::string>& class_word_pool() {
  static const std::vector<std::string> pool{
      "cat", "dog", "car", "bird", "boat", "tree", "chair", "horse", "sheep", "lamp"};
  return pool;
}

Eigen::VectorXd pseudo_features(int class_id, const Box& box, int image_w,
                                int image_h, std::uint64_t seed, int d_feat) {
  if (d_feat < 4) throw ConfigError("pseudo_features: d_feat must be >= 4");
  Eigen::VectorXd f = prototype(class_id, d_feat);
  auto g = make_stream(hash_box(box, seed ^ static_cast<std::uint64_t>(class_id + 7)),
                       "feature-noise");
  for (int i = 0; i < d_feat; ++i) f(i) += 0.05 * normal(g);
  f(0) += 0.25 * (box.x / image_w);
  f(1) += 0.25 * (box.y / image_h);
  f(2) += 0.25 * (box.w / image_w);
  f(3) += 0.25 * (box.h / image_h);
  f.normalize();
  return f;
}

Scene generate_scene(std::uint64_t seed, const SynthConfig& cfg) {
  if (cfg.classes < 1 || cfg.classes > static_cast<int>(class_word_pool().size())) {
    throw ConfigError("generate_scene: classes must lie in [1," +
                      std::to_string(class_word_pool().size()) + "]");
  }
  if (cfg.objects_min < 1 || cfg.objects_max < cfg.objects_min) {
    throw ConfigError("generate_scene: invalid object count range");
  }
  auto g = make_stream(seed, "scene");
  Scene s;
  char idbuf[24];
  std::snprintf(idbuf, sizeof idbuf, "s%06llu", static_cast<unsigned long long>(seed));
  s.id = idbuf;
  s.image_w = cfg.image_w;
  s.image_h = cfg.image_h;

  const int n = uniform_int(g, cfg.objects_min, cfg.objects_max);
  for (int i = 0; i < n; ++i) {
    const int class_id = uniform_int(g, 0, cfg.classes - 1);
    const double w = uniform(g, 0.06, 0.35) * cfg.image_w;
    const double h = uniform(g, 0.06, 0.35) * cfg.image_h;
    const double x = uniform(g, w / 2.0, cfg.image_w - w / 2.0);
    const double y = uniform(g, h / 2.0, cfg.image_h - h / 2.0);
    Proposal p;
    p.box = Box{x, y, w, h};
    p.class_name = class_word_pool()[static_cast<std::size_t>(class_id)];
    p.class_prob = 1.0 - uniform(g, 0.0, 0.3 - 1e-9);  // lands in (0.7, 1.0]
    p.feature = pseudo_features(class_id, p.box, cfg.image_w, cfg.image_h, seed,
                                cfg.d_feat);
    s.proposals.push_back(std::move(p));
  }
  s.background = pseudo_features(-1, background_box(cfg.image_w, cfg.image_h),
                                 cfg.image_w, cfg.image_h, seed, cfg.d_feat);
  s.refs = render_captions(s);
  return s;
}

std::vector<std::string> render_captions(const Scene& scene) {
  if (scene.proposals.empty()) {
    throw ContractError("render_captions: scene '" + scene.id + "' has no objects");
  }
  std::string body;
  if (scene.proposals.size() == 1) {
    const std::string& c = scene.proposals[0].class_name;
    body = "a " + c +
           " stands alone against a plain gray backdrop in soft daylight with"
           " nothing else around";
  } else {
    const Proposal& a = scene.proposals[0];
    const Proposal& b = scene.proposals[1];
    const double ratio = (a.box.w * a.box.h) / (b.box.w * b.box.h);
    std::string sz_a, sz_b;
    if (ratio > 2.0) {
      sz_a = "big ";
      sz_b = "small ";
    } else if (ratio < 0.5) {
      sz_a = "small ";
      sz_b = "big ";
    }
    const std::string rel = a.box.x < b.box.x   ? "left of"
                            : a.box.x > b.box.x ? "right of"
                                                : "directly beside";
    body = "a " + sz_a + a.class_name + " appears " + rel + " a " + sz_b +
           b.class_name + " against a plain gray backdrop in soft daylight";
  }
  // One shared body, five short closing variants: references overlap heavily,
  // as a caption set for one image should.
  static const char* kTails[5] = {"in this image", "in this picture",
                                  "in the scene", "near the middle",
                                  "under even light"};
  std::vector<std::string> refs;
  refs.reserve(5);
  for (const char* tail : kTails) refs.push_back(body + " " + tail);
  return refs;
}

std::vector<Scene> generate_corpus(const SynthConfig& cfg) {
  std::vector<Scene> out;
  out.reserve(static_cast<std::size_t>(cfg.scenes));
  for (int i = 0; i < cfg.scenes; ++i) {
    out.push_back(generate_scene(cfg.seed + static_cast<std::uint64_t>(i), cfg));
  }
  return out;
}

}  // namespace latgeo
