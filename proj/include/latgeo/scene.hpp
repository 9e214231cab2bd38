#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "latgeo/geometry.hpp"

namespace latgeo {

struct Proposal {
  Box box;
  std::string class_name;
  double class_prob = 0.0;
  Eigen::VectorXd feature;
};

struct Scene {
  std::string id;
  int image_w = 0;
  int image_h = 0;
  Eigen::VectorXd background;  // whole-image feature, same length as proposals'
  std::vector<Proposal> proposals;
  std::vector<std::string> refs;  // reference captions, raw text
};

// One JSON object per line:
// {"id", "image_w", "image_h", "background": [..],
//  "proposals": [{"x","y","w","h","class","prob","feature":[..]}, ..],
//  "refs": ["..", ..]}
void save_scenes_jsonl(const std::string& path, const std::vector<Scene>& scenes);

// Raw reader: malformed lines raise a parse error carrying the line number.
std::vector<Scene> load_scenes_jsonl(const std::string& path);

struct LoadOptions {
  double min_prob = 0.7;  // proposals kept only when prob is strictly greater
  int max_objects = 50;   // keep this many with the highest prob
};

// Reader + detector-style filtering. A scene left with zero proposals is an
// error naming the scene. An empty file is an empty corpus, not an error.
std::vector<Scene> load_proposals(const std::string& path, const LoadOptions& opt = {});

}  // namespace latgeo
