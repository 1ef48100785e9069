#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "groundcheck/ingest.hpp"
#include "groundcheck/judge.hpp"
#include "groundcheck/llm.hpp"
#include "groundcheck/metrics.hpp"

namespace groundcheck {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::map<std::string, llm::BackendProfile> backends;
  std::vector<ingest::DatasetManifest> manifests;
  judge::ChunkingPolicy chunking;
  std::size_t rationale_k = 3;
  std::uint64_t seed = 0;  // for manifests whose sample rule names no seed
  std::filesystem::path output_dir = "out";
  std::optional<std::filesystem::path> cache_dir;
  std::size_t jobs = 4;
  metrics::Grouping grouping = metrics::Grouping::standard_bench();

  // Default backend per stage; each must name an entry in `backends`.
  std::optional<std::string> judge_backend;
  std::optional<std::string> synth_backend;
  std::optional<std::string> rationale_backend;

  std::vector<std::string> validate() const;
  const llm::BackendProfile& backend(const std::string& name) const;  // throws ConfigError
};

/// Relative paths (manifest sources, output and cache dirs) resolve against
/// `base_dir`. `manifests` may be an inline list or the path of a manifest file.
RunConfig config_from_json(const json& j, const std::filesystem::path& base_dir = {});
RunConfig read_config(const std::filesystem::path& path);
json to_json(const RunConfig& c);

/// Applies the config seed to sample rules that did not set one. Idempotent.
void apply_default_seed(RunConfig& c);

}  // namespace groundcheck
