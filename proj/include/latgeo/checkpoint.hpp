#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <utility>
#include <vector>

#include "latgeo/model.hpp"
#include "latgeo/optim.hpp"
#include "latgeo/rng.hpp"

namespace latgeo {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Everything a resumed run needs to continue bit-for-bit: configuration and
// vocabulary, every named parameter, the optimizer moments and step counter,
// the RNG stream states, and the progress bookkeeping.
//
// On disk: the magic bytes "LATG", a little-endian u32 version, a u64 length,
// that many bytes of UTF-8 JSON metadata (config, vocabulary, RNG states,
// bookkeeping, and a tensor manifest of name/rows/cols/offset), then the flat
// payload of little-endian 64-bit floats the manifest indexes into. Optimizer
// moments ride in the same payload under "adam.m." / "adam.v." name prefixes.
struct Checkpoint {
  ModelConfig config;
  nlohmann::json vocab;
  std::vector<std::pair<std::string, Matrix>> params;  // model manifest order
  std::int64_t adam_t = 0;
  std::vector<std::pair<std::string, Matrix>> adam_m;  // empty: fresh optimizer
  std::vector<std::pair<std::string, Matrix>> adam_v;
  std::string rng_data, rng_init, rng_dropout, rng_sampling;
  double best_cider = 0.0;
  int best_epoch = 0;  // epoch that produced best_cider, for patience resume
  int epoch = 0;
  std::string phase = "xe";  // "xe" or "rl"

  // Snapshot of the live training state.
  static Checkpoint capture(const Model& model, Adam& adam, const RngHub& rngs);
};

void save_checkpoint(const std::string& path, const Checkpoint& c);

// Raises an I/O error when the file cannot be read, a parse error on bad
// magic, version, or truncation.
Checkpoint load_checkpoint(const std::string& path);

// Copies the checkpoint's parameters into the model (every name and shape
// must line up; mismatches are listed in one error) and, when given, restores
// the optimizer moments and the RNG streams.
void restore_checkpoint(const Checkpoint& c, Model& model, Adam* adam = nullptr,
                        RngHub* rngs = nullptr);

}  // namespace latgeo
