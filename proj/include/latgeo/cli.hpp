#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "latgeo/model.hpp"
#include "latgeo/training.hpp"

namespace latgeo {

// Flat dotted-key configuration ("model.d_model", "train.max_epochs", ...)
// resolved along one precedence chain: built-in defaults, then the JSON
// config file, then command-line --set flags. Unknown keys are rejected.
struct ResolvedConfig {
  nlohmann::json flat;                     // every known key, resolved value
  std::vector<std::string> explicit_keys;  // keys set by file or flags

  bool was_set(const std::string& key) const;
  ModelConfig model_config() const;  // vocab_size is derived by the caller
  TrainConfig train_config() const;  // artifact paths are filled by the caller
  int vocab_min_count() const;
};

nlohmann::json default_flat_config();
ResolvedConfig resolve_config(const std::string& file_path,  // empty: defaults
                              const std::vector<std::string>& sets);

// Round-trips between a model configuration and its flat dotted-key form
// (used when a checkpoint's stored configuration is overlaid with flags).
nlohmann::json flat_from_model(const ModelConfig& cfg);
ModelConfig model_from_flat(const nlohmann::json& flat);

// Written before a run starts, next to the run's artifacts; a run is
// reproducible from its manifest alone (command, resolved config, seed,
// inputs, artifact paths).
void write_run_manifest(const std::string& path, const std::string& command,
                        const nlohmann::json& config, std::uint64_t seed,
                        const nlohmann::json& inputs,
                        const nlohmann::json& artifacts);

// Full command-line entry point. Exit codes: 0 success, 1 input error,
// 2 numeric failure (divergence, failed gradient self-check), 3 I/O error.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args without argv[0]

}  // namespace latgeo
