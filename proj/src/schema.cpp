#include "groundcheck/schema.hpp"

#include <fstream>
#include <string>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "groundcheck/util.hpp"

namespace groundcheck {

namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::array<std::pair<Enum, std::string_view>, N>& table,
                std::string_view what) {
  for (const auto& [value, name] : table) {
    if (name == s) return value;
  }
  throw std::invalid_argument(fmt::format("unknown {} '{}'", what, s));
}

template <typename Enum, std::size_t N>
std::string_view enum_name(Enum v, const std::array<std::pair<Enum, std::string_view>, N>& table) {
  for (const auto& [value, name] : table) {
    if (value == v) return name;
  }
  return "?";
}

constexpr std::array<std::pair<TaskFormat, std::string_view>, 4> kTaskNames{{
    {TaskFormat::Nli, "nli"},
    {TaskFormat::Qa, "qa"},
    {TaskFormat::Dialogue, "dialogue"},
    {TaskFormat::Summarization, "summarization"},
}};

constexpr std::array<std::pair<Role, std::string_view>, 2> kRoleNames{{
    {Role::User, "user"},
    {Role::Assistant, "assistant"},
}};

constexpr std::array<std::pair<Language, std::string_view>, 2> kLanguageNames{{
    {Language::En, "en"},
    {Language::Es, "es"},
}};

constexpr std::array<std::pair<HallucinationErrorType, std::string_view>, 6> kErrorTypeNames{{
    {HallucinationErrorType::Entity, "entity"},
    {HallucinationErrorType::Relation, "relation"},
    {HallucinationErrorType::Sentence, "sentence"},
    {HallucinationErrorType::Invented, "invented"},
    {HallucinationErrorType::Subjective, "subjective"},
    {HallucinationErrorType::Unverifiable, "unverifiable"},
}};

constexpr std::array<std::string_view, 10> kKnownFields = {
    "id", "task", "document", "conversation", "label",
    "lang", "source", "hallucination_type", "rationale", "meta"};

bool is_known_field(const std::string& key) {
  for (auto k : kKnownFields) {
    if (k == key) return true;
  }
  return false;
}

std::string task_title(TaskFormat t) {
  switch (t) {
    case TaskFormat::Nli: return "NLI";
    case TaskFormat::Qa: return "QA";
    case TaskFormat::Dialogue: return "Dialogue";
    case TaskFormat::Summarization: return "Summarization";
  }
  return "?";
}

const json& require(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw RecordError(fmt::format("missing field '{}'", key));
  return *it;
}

std::string require_string(const json& j, const char* key) {
  const json& v = require(j, key);
  if (!v.is_string()) throw RecordError(fmt::format("field '{}' must be a string", key));
  return v.get<std::string>();
}

template <typename F>
auto rethrow_as_record_error(const char* field, F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw RecordError(fmt::format("field '{}': {}", field, e.what()));
  }
}

}  // namespace

std::string_view to_string(TaskFormat t) { return enum_name(t, kTaskNames); }
std::string_view to_string(Role r) { return enum_name(r, kRoleNames); }
std::string_view to_string(Language l) { return enum_name(l, kLanguageNames); }
std::string_view to_string(HallucinationErrorType t) { return enum_name(t, kErrorTypeNames); }

TaskFormat parse_task_format(std::string_view s) { return parse_enum(s, kTaskNames, "task format"); }
Role parse_role(std::string_view s) { return parse_enum(s, kRoleNames, "role"); }
Language parse_language(std::string_view s) { return parse_enum(s, kLanguageNames, "language"); }
HallucinationErrorType parse_error_type(std::string_view s) {
  return parse_enum(s, kErrorTypeNames, "hallucination type");
}

std::vector<std::string> validate_example(const Example& e) {
  std::vector<std::string> v;

  if (util::trim(e.id).empty()) v.emplace_back("id must be non-empty");
  if (e.document.empty()) v.emplace_back("document must be non-empty");
  if (e.label && *e.label != 0 && *e.label != 1) v.emplace_back("label must be 0 or 1");

  const auto& turns = e.conversation;
  if (turns.empty()) {
    v.emplace_back("conversation must be non-empty");
    return v;
  }
  for (std::size_t i = 0; i < turns.size(); ++i) {
    if (util::trim(turns[i].content).empty()) {
      v.push_back(fmt::format("conversation[{}].content must be non-empty", i));
    }
  }

  switch (e.task) {
    case TaskFormat::Nli:
    case TaskFormat::Summarization:
      if (turns.size() != 1 || turns[0].role != Role::Assistant) {
        v.push_back(task_title(e.task) + " requires exactly one assistant turn");
        return v;
      }
      break;
    case TaskFormat::Qa:
      if (turns.size() != 2 || turns[0].role != Role::User || turns[1].role != Role::Assistant) {
        v.emplace_back("QA requires exactly [user, assistant] turns");
        return v;
      }
      break;
    case TaskFormat::Dialogue:
      if (turns.size() < 2) v.emplace_back("Dialogue requires at least 2 turns");
      for (std::size_t i = 0; i < turns.size(); ++i) {
        const Role expected = (i % 2 == 0) ? Role::User : Role::Assistant;
        if (turns[i].role != expected) {
          v.push_back(fmt::format("Dialogue turns must alternate starting from user (conversation[{}] is {})",
                                  i, to_string(turns[i].role)));
          break;
        }
      }
      break;
  }

  if (turns.back().role != Role::Assistant) {
    v.emplace_back("last conversation turn must have role assistant");
  }
  return v;
}

json to_json(const Example& e) {
  json j = e.extra.is_object() ? e.extra : json::object();
  j["id"] = e.id;
  j["task"] = to_string(e.task);
  j["document"] = e.document;
  json turns = json::array();
  for (const auto& t : e.conversation) {
    turns.push_back({{"role", to_string(t.role)}, {"content", t.content}});
  }
  j["conversation"] = std::move(turns);
  j["label"] = e.label ? json(*e.label) : json(nullptr);
  j["lang"] = to_string(e.language);
  j["source"] = e.source;
  if (e.hallucination_type) j["hallucination_type"] = to_string(*e.hallucination_type);
  if (e.rationale) j["rationale"] = *e.rationale;
  if (e.meta) j["meta"] = *e.meta;
  return j;
}

Example example_from_json(const json& j) {
  if (!j.is_object()) throw RecordError("record must be an object");

  Example e;
  e.id = require_string(j, "id");
  e.task = rethrow_as_record_error("task", [&] { return parse_task_format(require_string(j, "task")); });
  e.document = require_string(j, "document");

  const json& conv = require(j, "conversation");
  if (!conv.is_array()) throw RecordError("field 'conversation' must be an array");
  for (const auto& t : conv) {
    if (!t.is_object()) throw RecordError("conversation entries must be objects");
    Turn turn;
    turn.role = rethrow_as_record_error("role", [&] { return parse_role(require_string(t, "role")); });
    turn.content = require_string(t, "content");
    e.conversation.push_back(std::move(turn));
  }

  if (auto it = j.find("label"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer()) throw RecordError("field 'label' must be an integer or null");
    e.label = it->get<int>();
  }
  e.language = rethrow_as_record_error("lang", [&] { return parse_language(require_string(j, "lang")); });
  e.source = require_string(j, "source");

  if (auto it = j.find("hallucination_type"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw RecordError("field 'hallucination_type' must be a string");
    e.hallucination_type =
        rethrow_as_record_error("hallucination_type", [&] { return parse_error_type(it->get<std::string>()); });
  }
  if (auto it = j.find("rationale"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw RecordError("field 'rationale' must be a string");
    e.rationale = it->get<std::string>();
  }
  if (auto it = j.find("meta"); it != j.end()) e.meta = *it;

  for (const auto& [key, value] : j.items()) {
    if (!is_known_field(key)) e.extra[key] = value;
  }
  return e;
}

std::string serialize_record(const Example& e) { return to_json(e).dump(); }

std::vector<Example> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RecordError("cannot open record file " + path.string());

  std::vector<Example> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (util::trim(line).empty()) continue;

    Example e;
    try {
      e = example_from_json(json::parse(line));
    } catch (const json::exception& ex) {
      throw RecordError(fmt::format("{}: line {}: parse error: {}", path.string(), line_no, ex.what()));
    } catch (const RecordError& ex) {
      throw RecordError(fmt::format("{}: line {}: {}", path.string(), line_no, ex.what()));
    }

    if (auto violations = validate_example(e); !violations.empty()) {
      throw RecordError(fmt::format("{}: line {}: example '{}' invalid: {}", path.string(), line_no, e.id,
                                    fmt::join(violations, "; ")));
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::size_t write_records(const std::filesystem::path& path, std::span<const Example> examples) {
  std::string buffer;
  for (const auto& e : examples) {
    if (auto violations = validate_example(e); !violations.empty()) {
      throw RecordError(fmt::format("refusing to write invalid example '{}': {}", e.id,
                                    fmt::join(violations, "; ")));
    }
    buffer += serialize_record(e);
    buffer += '\n';
  }
  try {
    util::atomic_write_file(path, buffer);
  } catch (const std::exception& ex) {
    throw RecordError(ex.what());
  }
  return examples.size();
}

}  // namespace groundcheck
