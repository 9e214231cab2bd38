#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latgeo/scene.hpp"

namespace latgeo {

struct SynthConfig {
  int scenes = 500;
  std::uint64_t seed = 0;   // scene i draws from seed + i
  int objects_min = 2;
  int objects_max = 3;
  int classes = 8;          // uses the first `classes` entries of the word pool
  int image_w = 640;
  int image_h = 480;
  int d_feat = 64;
  int caption_limit = 22;   // max caption tokens including START/END
};

// Fixed pool of class nouns the synthesizer can draw from.
const std::vector<std::string>& class_word_pool();

// Deterministic detector-style feature: a per-class prototype (shared by all
// scenes regardless of seed), seeded Gaussian noise (sigma 0.05) keyed by
// (seed, box), and the normalized box folded into the first four slots at
// 0.25 weight; unit-normalized. class_id < 0 selects the background prototype.
Eigen::VectorXd pseudo_features(int class_id, const Box& box, int image_w,
                                int image_h, std::uint64_t seed, int d_feat);

// One scene, fully determined by (seed, cfg).
Scene generate_scene(std::uint64_t seed, const SynthConfig& cfg);

// Five deterministic reference captions over class words plus relational
// vocabulary derived from the boxes: size comparatives when the leading pair's
// area ratio exceeds 2 (either way), and horizontal order by center x. All
// five share one descriptive body and differ in a short closing phrase, and
// scale-invariant geometry only (ratios, orderings) feeds the wording.
std::vector<std::string> render_captions(const Scene& scene);

// cfg.scenes scenes with seeds cfg.seed .. cfg.seed + scenes - 1.
std::vector<Scene> generate_corpus(const SynthConfig& cfg);

}  // namespace latgeo
