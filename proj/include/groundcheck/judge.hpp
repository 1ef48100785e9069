#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "groundcheck/llm.hpp"
#include "groundcheck/prompts.hpp"
#include "groundcheck/schema.hpp"

namespace groundcheck::judge {

enum class ParseMode { Strict, Salvaged };

std::string_view to_string(ParseMode m);
ParseMode parse_parse_mode(std::string_view s);

struct ParsedVerdict {
  int label = 0;
  std::optional<std::string> rationale;
  ParseMode mode = ParseMode::Strict;
};

class VerdictParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Strict: the whole output is one JSON object with "output" in {0,1} and a
/// "rationale" string. Salvaged: the first "output" key with a 0/1 value found
/// anywhere in the text. Anything else throws VerdictParseError.
ParsedVerdict parse_verdict(std::string_view raw);

struct ChunkVerdict {
  std::size_t chunk_index = 0;
  int label = 0;

  bool operator==(const ChunkVerdict&) const = default;
};

struct Verdict {
  int label = 0;
  std::optional<std::string> rationale;
  std::string raw;
  ParseMode parse_mode = ParseMode::Strict;
  std::optional<std::vector<ChunkVerdict>> chunk_verdicts;  // present iff chunked
};

/// Supported if any chunk supports.
int aggregate_labels(std::span<const ChunkVerdict> chunks);

enum class ChunkBoundary { ParagraphPreferred };

struct ChunkingPolicy {
  std::size_t max_chars = 24'000;  // ~6000 tokens at 4 chars/token
  std::size_t overlap_chars = 2'000;
  ChunkBoundary boundary = ChunkBoundary::ParagraphPreferred;

  std::vector<std::string> validate() const;
};

json to_json(const ChunkingPolicy& p);
ChunkingPolicy chunking_from_json(const json& j);

struct DocumentChunk {
  std::size_t offset = 0;  // byte offset into the source document
  std::string text;
};

/// Splits `document` into chunks of at most max_chars bytes. Consecutive
/// chunks overlap by at most overlap_chars. A chunk end snaps back to a
/// paragraph break ("\n\n") inside its final 20%, and never splits a UTF-8
/// sequence.
std::vector<DocumentChunk> chunk_document(std::string_view document, const ChunkingPolicy& policy);

struct JudgeOutcome {
  std::string id;
  std::optional<Verdict> verdict;  // empty when judging failed
  std::string error;
  std::string template_id;
  std::string template_version;
  std::string model_id;

  bool ok() const { return verdict.has_value(); }
};

/// Judges one example. Backend retry exhaustion and unparseable output become
/// a failed outcome; PermanentBackendError propagates.
JudgeOutcome judge_example(const Example& e, llm::Backend& backend, prompts::PromptKind template_kind,
                           const ChunkingPolicy& policy);

struct JudgeBatchOptions {
  prompts::PromptKind template_kind = prompts::PromptKind::GenerativeChat;
  ChunkingPolicy policy;
  std::size_t jobs = 4;
};

/// Outcomes in input order. Examples whose id appears in `reuse` with a
/// successful verdict and matching template/model are not re-judged.
std::vector<JudgeOutcome> judge_all(std::span<const Example> examples, llm::Backend& backend,
                                    const JudgeBatchOptions& options, std::span<const JudgeOutcome> reuse = {});

json to_json(const JudgeOutcome& o);
JudgeOutcome outcome_from_json(const json& j);

void write_verdicts(const std::filesystem::path& path, std::span<const JudgeOutcome> outcomes);
std::vector<JudgeOutcome> read_verdicts(const std::filesystem::path& path);

}  // namespace groundcheck::judge
