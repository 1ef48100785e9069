#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace groundcheck {

using json = nlohmann::json;

enum class TaskFormat { Nli, Qa, Dialogue, Summarization };
enum class Role { User, Assistant };
enum class Language { En, Es };

/// Six-way taxonomy used to diversify synthetic negatives.
enum class HallucinationErrorType { Entity, Relation, Sentence, Invented, Subjective, Unverifiable };

inline constexpr std::array<HallucinationErrorType, 6> kAllErrorTypes = {
    HallucinationErrorType::Entity,   HallucinationErrorType::Relation,
    HallucinationErrorType::Sentence, HallucinationErrorType::Invented,
    HallucinationErrorType::Subjective, HallucinationErrorType::Unverifiable};

/// Label semantics are global: 1 = consistent with the document, 0 = hallucinated.
inline constexpr int kSupported = 1;
inline constexpr int kHallucinated = 0;

std::string_view to_string(TaskFormat t);
std::string_view to_string(Role r);
std::string_view to_string(Language l);
std::string_view to_string(HallucinationErrorType t);

// Parsers throw std::invalid_argument on unknown names.
TaskFormat parse_task_format(std::string_view s);
Role parse_role(std::string_view s);
Language parse_language(std::string_view s);
HallucinationErrorType parse_error_type(std::string_view s);

struct Turn {
  Role role = Role::User;
  std::string content;

  static Turn user(std::string content) { return {Role::User, std::move(content)}; }
  static Turn assistant(std::string content) { return {Role::Assistant, std::move(content)}; }

  bool operator==(const Turn&) const = default;
};

/// One grounded-verification instance. The last turn of `conversation` is
/// always the content under assessment.
struct Example {
  std::string id;
  TaskFormat task = TaskFormat::Nli;
  std::string document;
  std::vector<Turn> conversation;
  std::optional<int> label;
  Language language = Language::En;
  std::string source;
  std::optional<HallucinationErrorType> hallucination_type;
  std::optional<std::string> rationale;
  std::optional<json> meta;
  // Record fields this version does not know about; written back verbatim.
  json extra = json::object();

  const Turn& assessed_turn() const { return conversation.back(); }

  bool operator==(const Example&) const = default;
};

/// Every failed invariant, one human-readable line each. Never throws.
std::vector<std::string> validate_example(const Example& e);

class RecordError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json to_json(const Example& e);
/// Throws RecordError on a structurally malformed record. Does not run
/// validate_example.
Example example_from_json(const json& j);

std::string serialize_record(const Example& e);

/// Reads a line-delimited record file. Blank lines are ignored. Errors name
/// the 1-based line number, or the example id for invariant violations.
std::vector<Example> read_records(const std::filesystem::path& path);

/// Validates the whole batch before touching the filesystem, then publishes
/// the file atomically. Returns the number of records written.
std::size_t write_records(const std::filesystem::path& path, std::span<const Example> examples);

}  // namespace groundcheck
