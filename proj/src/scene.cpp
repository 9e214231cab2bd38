#include "latgeo/scene.hpp"

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>

#include "latgeo/error.hpp"

namespace latgeo {

namespace {

using nlohmann::json;

json vec_to_json(const Eigen::VectorXd& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Eigen::VectorXd vec_from_json(const json& arr) {
  Eigen::VectorXd v(arr.size());
  Eigen::Index i = 0;
  for (const auto& x : arr) v(i++) = x.get<double>();
  return v;
}

}  // namespace

void save_scenes_jsonl(const std::string& path, const std::vector<Scene>& scenes) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (const Scene& s : scenes) {
    json j;
    j["id"] = s.id;
    j["image_w"] = s.image_w;
    j["image_h"] = s.image_h;
    j["background"] = vec_to_json(s.background);
    json props = json::array();
    for (const Proposal& p : s.proposals) {
      props.push_back({{"x", p.box.x},
                       {"y", p.box.y},
                       {"w", p.box.w},
                       {"h", p.box.h},
                       {"class", p.class_name},
                       {"prob", p.class_prob},
                       {"feature", vec_to_json(p.feature)}});
    }
    j["proposals"] = std::move(props);
    j["refs"] = s.refs;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<Scene> load_scenes_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<Scene> scenes;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      Scene s;
      s.id = j.at("id").get<std::string>();
      s.image_w = j.at("image_w").get<int>();
      s.image_h = j.at("image_h").get<int>();
      s.background = vec_from_json(j.at("background"));
      for (const auto& pj : j.at("proposals")) {
        Proposal p;
        p.box = Box{pj.at("x").get<double>(), pj.at("y").get<double>(),
                    pj.at("w").get<double>(), pj.at("h").get<double>()};
        p.class_name = pj.at("class").get<std::string>();
        p.class_prob = pj.at("prob").get<double>();
        p.feature = vec_from_json(pj.at("feature"));
        if (p.feature.size() != s.background.size()) {
          throw ParseError("feature length " + std::to_string(p.feature.size()) +
                           " differs from background length " +
                           std::to_string(s.background.size()));
        }
        s.proposals.push_back(std::move(p));
      }
      for (const auto& r : j.at("refs")) s.refs.push_back(r.get<std::string>());
      scenes.push_back(std::move(s));
    } catch (const ParseError& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return scenes;
}

std::vector<Scene> load_proposals(const std::string& path, const LoadOptions& opt) {
  std::vector<Scene> scenes = load_scenes_jsonl(path);
  for (Scene& s : scenes) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < s.proposals.size(); ++i) {
      if (s.proposals[i].class_prob > opt.min_prob) keep.push_back(i);
    }
    // Highest-prob first; stable on ties so input order breaks them.
    std::stable_sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) {
      return s.proposals[a].class_prob > s.proposals[b].class_prob;
    });
    if (static_cast<int>(keep.size()) > opt.max_objects) {
      keep.resize(static_cast<std::size_t>(opt.max_objects));
    }
    std::sort(keep.begin(), keep.end());  // original order among survivors
    if (keep.empty()) {
      throw ContractError("scene '" + s.id + "': no proposals with prob > " +
                          std::to_string(opt.min_prob));
    }
    std::vector<Proposal> kept;
    kept.reserve(keep.size());
    for (std::size_t i : keep) kept.push_back(std::move(s.proposals[i]));
    s.proposals = std::move(kept);
  }
  return scenes;
}

}  // namespace latgeo
