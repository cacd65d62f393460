#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "cigli/nn/layers.hpp"

namespace cigli::ckpt {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Manifest {
  std::string kind;  // generator, captioner, verifier, classifier
  nlohmann::json config;
  long step = 0;
  std::uint64_t seed = 0;
  nlohmann::json params = nlohmann::json::array();
  nlohmann::json extra = nlohmann::json::object();
};

// Writes manifest.json plus one raw little-endian float32 file per parameter.
// Every parameter must be finite.
void save(const std::filesystem::path& dir, const std::string& kind, const nlohmann::json& config,
          const nn::ParamList& params, long step, std::uint64_t seed,
          const nlohmann::json& extra = nlohmann::json::object());

Manifest read_manifest(const std::filesystem::path& dir);

// Fills `params` (matched by name, shapes checked) from a saved checkpoint.
// Returns the manifest. Throws on missing/extra names or kind mismatch.
Manifest load_into(const std::filesystem::path& dir, const std::string& kind, const nn::ParamList& params);

}  // namespace cigli::ckpt
