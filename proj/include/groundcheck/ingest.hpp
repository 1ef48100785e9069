#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "groundcheck/schema.hpp"

namespace groundcheck::ingest {

class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Where an example came from; its id is "<source>/<split>/<ordinal>".
struct Provenance {
  std::string source;
  std::string split;
  std::size_t ordinal = 0;

  std::string id() const;
};

Example from_nli_triple(std::string premise, std::string hypothesis, int label, const Provenance& from,
                        Language lang = Language::En);

Example from_qa_tuple(std::string passage, std::string question, std::string answer, int label,
                      const Provenance& from, Language lang = Language::En);

Example from_summary_pair(std::string document, std::string summary, int label, const Provenance& from,
                          Language lang = Language::En);

Example from_dialogue_triple(std::string document, std::vector<Turn> turns, int label, const Provenance& from,
                             Language lang = Language::En);

/// Treats the summary as a claim. Only task and id ("#as-nli") change.
Example summary_to_nli(const Example& e);

enum class Adapter { NliTriple, QaTuple, DialogueTriple, SummaryPair, Unified };

std::string_view to_string(Adapter a);
Adapter parse_adapter(std::string_view s);

struct SampleRule {
  std::size_t count = 0;
  std::optional<std::uint64_t> seed;  // unset: the run's seed, else 0
};

/// Content column fanned out into its own example with a fixed label, for
/// sources that store the faithful and the hallucinated answer side by side.
struct FanoutColumn {
  std::string column;
  int label = 1;
};

struct DatasetManifest {
  std::string name;
  std::filesystem::path path;
  Adapter adapter = Adapter::Unified;
  TaskFormat task = TaskFormat::Nli;
  std::optional<SampleRule> sample;
  std::string split = "test";

  // Adapter role -> field in the source record ("premise", "question", ...).
  // A value starting with '/' is a JSON pointer.
  std::map<std::string, std::string> columns;
  // String form of a source label -> 1, 0, or null (drop the record).
  std::optional<json> label_map;
  std::optional<int> default_label;
  std::vector<FanoutColumn> fanout;

  std::vector<std::string> include_sources;
  std::vector<std::string> exclude_sources;

  std::optional<std::string> skip_reason;  // e.g. "proprietary"
  std::optional<std::size_t> expected_count;
  Language language = Language::En;
  bool also_as_nli = false;

  std::vector<std::string> validate() const;
};

json to_json(const DatasetManifest& m);
/// Relative paths are resolved against `base_dir`.
DatasetManifest manifest_from_json(const json& j, const std::filesystem::path& base_dir = {});

/// Accepts either a top-level array or {"manifests": [...]}.
std::vector<DatasetManifest> read_manifest_file(const std::filesystem::path& path);

/// Every example the manifest's source yields before sampling, after filters.
/// `excluded` receives the number of records dropped by source filters.
std::vector<Example> load_source(const DatasetManifest& m, std::size_t* excluded = nullptr);

inline constexpr std::string_view kSamplingAlgorithm = "mt19937_64/partial-fisher-yates/sorted/v1";

/// `count` distinct indices from [0, available), ascending. Uniform without
/// replacement and identical for identical (available, count, seed).
std::vector<std::size_t> sample_indices(std::size_t available, std::size_t count, std::uint64_t seed);

struct ManifestReport {
  std::string name;
  std::size_t requested = 0;
  std::size_t available = 0;
  std::size_t excluded = 0;
  std::size_t yielded = 0;
  std::string status;  // "ok" | "skipped" | "failed"
  std::string reason;
};

struct AssemblyReport {
  std::string algorithm{kSamplingAlgorithm};
  std::vector<ManifestReport> entries;

  std::size_t requested_total() const;
  std::size_t yielded_total() const;
  bool ok() const;  // no entry failed
};

json to_json(const AssemblyReport& r);

struct AssemblyOptions {
  // Throw on the first failing manifest instead of recording it.
  bool fail_fast = true;
};

struct AssemblyResult {
  std::vector<Example> examples;
  AssemblyReport report;
};

AssemblyResult assemble_bench(std::span<const DatasetManifest> manifests, const AssemblyOptions& options = {});

}  // namespace groundcheck::ingest
