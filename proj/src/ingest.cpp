#include "groundcheck/ingest.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <regex>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "groundcheck/util.hpp"

namespace groundcheck::ingest {

namespace {

void require_text(std::string_view value, std::string_view field) {
  if (util::trim(value).empty()) throw std::invalid_argument(fmt::format("{} must be non-empty", field));
}

void require_label(int label) {
  if (label != 0 && label != 1) throw std::invalid_argument(fmt::format("label must be 0 or 1, got {}", label));
}

Example base_example(TaskFormat task, std::string document, int label, const Provenance& from, Language lang) {
  Example e;
  e.id = from.id();
  e.task = task;
  e.document = std::move(document);
  e.label = label;
  e.language = lang;
  e.source = from.source;
  return e;
}

bool iequals(std::string_view a, std::string_view b) { return util::to_lower(a) == util::to_lower(b); }

bool in_list(std::string_view value, const std::vector<std::string>& list) {
  return std::any_of(list.begin(), list.end(), [&](const std::string& s) { return iequals(s, value); });
}

/// Role name -> default column name, per adapter. The first entry is the
/// assessed content, which fan-out columns replace.
std::vector<std::pair<std::string, std::string>> default_columns(Adapter a) {
  switch (a) {
    case Adapter::NliTriple: return {{"hypothesis", "hypothesis"}, {"premise", "premise"}};
    case Adapter::QaTuple: return {{"answer", "answer"}, {"passage", "passage"}, {"question", "question"}};
    case Adapter::DialogueTriple: return {{"response", "response"}, {"document", "document"}, {"dialogue", "dialogue"}};
    case Adapter::SummaryPair: return {{"summary", "summary"}, {"document", "document"}};
    case Adapter::Unified: return {};
  }
  return {};
}

std::optional<TaskFormat> task_for(Adapter a) {
  switch (a) {
    case Adapter::NliTriple: return TaskFormat::Nli;
    case Adapter::QaTuple: return TaskFormat::Qa;
    case Adapter::DialogueTriple: return TaskFormat::Dialogue;
    case Adapter::SummaryPair: return TaskFormat::Summarization;
    case Adapter::Unified: return std::nullopt;
  }
  return std::nullopt;
}

class RecordView {
 public:
  RecordView(const json& record, const DatasetManifest& m) : record_(record), manifest_(m) {}

  std::string column_for(const std::string& role) const {
    if (auto it = manifest_.columns.find(role); it != manifest_.columns.end()) return it->second;
    for (const auto& [r, c] : default_columns(manifest_.adapter)) {
      if (r == role) return c;
    }
    if (role == "label") return "label";
    return {};
  }

  const json* find_column(const std::string& column) const {
    if (column.empty()) return nullptr;
    if (column.front() == '/') {
      const json::json_pointer ptr(column);
      return record_.contains(ptr) ? &record_.at(ptr) : nullptr;
    }
    auto it = record_.find(column);
    return it == record_.end() ? nullptr : &*it;
  }

  const json* find(const std::string& role) const { return find_column(column_for(role)); }

  std::string text(const std::string& role) const { return text_of(find(role), column_for(role)); }

  static std::string text_of(const json* v, const std::string& column) {
    if (!v) throw std::invalid_argument(fmt::format("missing column '{}'", column));
    if (v->is_string()) return v->get<std::string>();
    if (v->is_number() || v->is_boolean()) return v->dump();
    throw std::invalid_argument(fmt::format("column '{}' must be text", column));
  }

 private:
  const json& record_;
  const DatasetManifest& manifest_;
};

/// nullopt means "drop this record".
std::optional<int> resolve_label(const json* value, const DatasetManifest& m) {
  if (!value || value->is_null()) {
    if (m.default_label) return *m.default_label;
    throw std::invalid_argument("record has no label and the manifest sets no default_label");
  }
  const std::string key = value->is_string() ? value->get<std::string>() : value->dump();
  if (m.label_map) {
    auto it = m.label_map->find(key);
    if (it == m.label_map->end()) throw std::invalid_argument(fmt::format("label '{}' not in label_map", key));
    if (it->is_null()) return std::nullopt;
    return it->get<int>();
  }
  if (value->is_boolean()) return value->get<bool>() ? 1 : 0;
  if (key == "0" || key == "1") return key == "1" ? 1 : 0;
  throw std::invalid_argument(fmt::format("label '{}' is not 0/1; configure a label_map", key));
}

Role role_from_name(std::string_view name) {
  const auto lower = util::to_lower(util::trim(name));
  if (lower == "user" || lower == "human" || lower == "[human]") return Role::User;
  if (lower == "assistant" || lower == "bot" || lower == "ai" || lower == "gpt" || lower == "[assistant]") {
    return Role::Assistant;
  }
  throw std::invalid_argument(fmt::format("unknown dialogue role '{}'", name));
}

std::vector<Turn> parse_dialogue(const json& v) {
  std::vector<Turn> turns;
  if (v.is_array()) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto& t = v[i];
      if (t.is_string()) {
        turns.push_back({i % 2 == 0 ? Role::User : Role::Assistant, t.get<std::string>()});
      } else if (t.is_object() && t.contains("role") && t.contains("content")) {
        turns.push_back({role_from_name(t["role"].get<std::string>()), t["content"].get<std::string>()});
      } else {
        throw std::invalid_argument("dialogue entries must be strings or {role, content} objects");
      }
    }
    return turns;
  }
  if (!v.is_string()) throw std::invalid_argument("dialogue must be an array or a string");

  const std::string s = v.get<std::string>();

  // HaluEval-style histories keep "[Human]: ... [Assistant]: ..." on one line.
  static const std::regex marker(R"(\[(human|assistant)\]\s*:)", std::regex::icase);
  if (std::regex_search(s, marker)) {
    std::size_t last = 0;
    for (std::sregex_iterator it(s.begin(), s.end(), marker), end; it != end; ++it) {
      const auto at = static_cast<std::size_t>(it->position());
      const auto between = util::trim(std::string_view(s).substr(last, at - last));
      if (turns.empty() && !between.empty()) {
        throw std::invalid_argument("dialogue text must start with a role marker");
      }
      if (!turns.empty()) turns.back().content = std::string(between);
      turns.push_back({role_from_name("[" + (*it)[1].str() + "]"), {}});
      last = at + static_cast<std::size_t>(it->length());
    }
    turns.back().content = std::string(util::trim(std::string_view(s).substr(last)));
    return turns;
  }

  // "role: content" lines; lines without a known role prefix continue the
  // previous turn.
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto nl = s.find('\n', pos);
    if (nl == std::string::npos) nl = s.size();
    const std::string_view line(s.data() + pos, nl - pos);
    pos = nl + 1;
    if (util::trim(line).empty()) continue;
    const auto colon = line.find(':');
    std::optional<Role> role;
    if (colon != std::string_view::npos) {
      try {
        role = role_from_name(line.substr(0, colon));
      } catch (const std::invalid_argument&) {
      }
    }
    if (role) {
      turns.push_back({*role, std::string(util::trim(line.substr(colon + 1)))});
    } else if (!turns.empty()) {
      turns.back().content += "\n" + std::string(line);
    } else {
      throw std::invalid_argument("dialogue text must start with a 'role:' line");
    }
  }
  return turns;
}

std::vector<json> read_source_records(const std::filesystem::path& path) {
  std::string contents;
  try {
    contents = util::read_file(path);
  } catch (const std::exception&) {
    throw IngestError(fmt::format("cannot read source '{}'", path.string()));
  }
  std::vector<json> records;
  const auto first = contents.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && contents[first] == '[') {
    json arr;
    try {
      arr = json::parse(contents);
    } catch (const json::exception& e) {
      throw IngestError(fmt::format("{}: parse error: {}", path.string(), e.what()));
    }
    for (auto& r : arr) records.push_back(std::move(r));
    return records;
  }
  std::size_t pos = 0, line_no = 0;
  while (pos < contents.size()) {
    auto nl = contents.find('\n', pos);
    if (nl == std::string::npos) nl = contents.size();
    ++line_no;
    const std::string_view line(contents.data() + pos, nl - pos);
    pos = nl + 1;
    if (util::trim(line).empty()) continue;
    try {
      records.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw IngestError(fmt::format("{}: line {}: parse error: {}", path.string(), line_no, e.what()));
    }
  }
  return records;
}

std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) {
  // Rejection sampling; std::uniform_int_distribution is not portable across
  // standard libraries.
  const std::uint64_t threshold = (0 - n) % n;
  while (true) {
    const std::uint64_t x = rng();
    if (x >= threshold) return x % n;
  }
}

}  // namespace

std::string Provenance::id() const { return fmt::format("{}/{}/{}", source, split, ordinal); }

Example from_nli_triple(std::string premise, std::string hypothesis, int label, const Provenance& from,
                        Language lang) {
  require_text(premise, "premise");
  require_text(hypothesis, "hypothesis");
  require_label(label);
  Example e = base_example(TaskFormat::Nli, std::move(premise), label, from, lang);
  e.conversation = {Turn::assistant(std::move(hypothesis))};
  return e;
}

Example from_qa_tuple(std::string passage, std::string question, std::string answer, int label,
                      const Provenance& from, Language lang) {
  require_text(passage, "passage");
  require_text(question, "question");
  require_text(answer, "answer");
  require_label(label);
  Example e = base_example(TaskFormat::Qa, std::move(passage), label, from, lang);
  e.conversation = {Turn::user(std::move(question)), Turn::assistant(std::move(answer))};
  return e;
}

Example from_summary_pair(std::string document, std::string summary, int label, const Provenance& from,
                          Language lang) {
  require_text(document, "document");
  require_text(summary, "summary");
  require_label(label);
  Example e = base_example(TaskFormat::Summarization, std::move(document), label, from, lang);
  e.conversation = {Turn::assistant(std::move(summary))};
  return e;
}

Example from_dialogue_triple(std::string document, std::vector<Turn> turns, int label, const Provenance& from,
                             Language lang) {
  require_text(document, "document");
  require_label(label);
  Example e = base_example(TaskFormat::Dialogue, std::move(document), label, from, lang);
  e.conversation = std::move(turns);
  if (auto v = validate_example(e); !v.empty()) {
    throw std::invalid_argument(fmt::format("dialogue '{}': {}", e.id, fmt::join(v, "; ")));
  }
  return e;
}

Example summary_to_nli(const Example& e) {
  if (e.task != TaskFormat::Summarization) {
    throw std::invalid_argument(
        fmt::format("summary_to_nli expects a summarization example, '{}' is {}", e.id, to_string(e.task)));
  }
  Example out = e;
  out.task = TaskFormat::Nli;
  out.id = e.id + "#as-nli";
  return out;
}

std::string_view to_string(Adapter a) {
  switch (a) {
    case Adapter::NliTriple: return "nli_triple";
    case Adapter::QaTuple: return "qa_tuple";
    case Adapter::DialogueTriple: return "dialogue_triple";
    case Adapter::SummaryPair: return "summary_pair";
    case Adapter::Unified: return "unified";
  }
  return "?";
}

Adapter parse_adapter(std::string_view s) {
  for (auto a : {Adapter::NliTriple, Adapter::QaTuple, Adapter::DialogueTriple, Adapter::SummaryPair,
                 Adapter::Unified}) {
    if (to_string(a) == s) return a;
  }
  throw std::invalid_argument(fmt::format("unknown adapter '{}'", s));
}

std::vector<std::string> DatasetManifest::validate() const {
  std::vector<std::string> v;
  if (name.empty()) v.emplace_back("manifest name must be non-empty");
  if (!skip_reason && path.empty()) v.push_back(fmt::format("manifest '{}' needs a path", name));
  if (auto t = task_for(adapter); t && *t != task) {
    v.push_back(fmt::format("manifest '{}': adapter {} produces {} examples, not {}", name, to_string(adapter),
                            to_string(*t), to_string(task)));
  }
  if (sample && sample->count == 0) v.push_back(fmt::format("manifest '{}': sample.count must be positive", name));
  if (default_label && *default_label != 0 && *default_label != 1) {
    v.push_back(fmt::format("manifest '{}': default_label must be 0 or 1", name));
  }
  if (also_as_nli && task != TaskFormat::Summarization) {
    v.push_back(fmt::format("manifest '{}': also_as_nli applies to summarization only", name));
  }
  for (const auto& f : fanout) {
    if (f.label != 0 && f.label != 1) v.push_back(fmt::format("manifest '{}': fanout labels must be 0 or 1", name));
  }
  return v;
}

json to_json(const DatasetManifest& m) {
  json j = {{"name", m.name},
            {"path", m.path.string()},
            {"adapter", to_string(m.adapter)},
            {"task", to_string(m.task)},
            {"split", m.split},
            {"lang", to_string(m.language)}};
  if (m.sample) {
    j["sample"] = {{"count", m.sample->count}};
    if (m.sample->seed) j["sample"]["seed"] = *m.sample->seed;
  }
  if (!m.columns.empty()) j["columns"] = m.columns;
  if (m.label_map) j["label_map"] = *m.label_map;
  if (m.default_label) j["default_label"] = *m.default_label;
  if (!m.fanout.empty()) {
    json f = json::array();
    for (const auto& c : m.fanout) f.push_back({{"column", c.column}, {"label", c.label}});
    j["fanout"] = std::move(f);
  }
  if (!m.include_sources.empty()) j["include_sources"] = m.include_sources;
  if (!m.exclude_sources.empty()) j["exclude_sources"] = m.exclude_sources;
  if (m.skip_reason) j["skip"] = *m.skip_reason;
  if (m.expected_count) j["expected_count"] = *m.expected_count;
  if (m.also_as_nli) j["also_as_nli"] = true;
  return j;
}

DatasetManifest manifest_from_json(const json& j, const std::filesystem::path& base_dir) {
  DatasetManifest m;
  try {
    m.name = j.at("name").get<std::string>();
    m.adapter = parse_adapter(j.value("adapter", std::string("unified")));
    if (j.contains("task")) {
      m.task = parse_task_format(j["task"].get<std::string>());
    } else if (auto t = task_for(m.adapter)) {
      m.task = *t;
    } else {
      throw std::invalid_argument("unified manifests must name their task");
    }
    if (j.contains("path")) {
      std::filesystem::path p = j["path"].get<std::string>();
      m.path = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    }
    m.split = j.value("split", m.split);
    if (auto it = j.find("sample"); it != j.end() && !it->is_null()) {
      m.sample = SampleRule{it->at("count").get<std::size_t>(), std::nullopt};
      if (it->contains("seed")) m.sample->seed = it->at("seed").get<std::uint64_t>();
    }
    if (auto it = j.find("columns"); it != j.end()) m.columns = it->get<std::map<std::string, std::string>>();
    if (auto it = j.find("label_map"); it != j.end()) m.label_map = *it;
    if (auto it = j.find("default_label"); it != j.end()) m.default_label = it->get<int>();
    if (auto it = j.find("fanout"); it != j.end()) {
      for (const auto& f : *it) m.fanout.push_back({f.at("column").get<std::string>(), f.at("label").get<int>()});
    }
    if (auto it = j.find("include_sources"); it != j.end()) m.include_sources = it->get<std::vector<std::string>>();
    if (auto it = j.find("exclude_sources"); it != j.end()) m.exclude_sources = it->get<std::vector<std::string>>();
    if (auto it = j.find("skip"); it != j.end()) m.skip_reason = it->get<std::string>();
    if (auto it = j.find("expected_count"); it != j.end()) m.expected_count = it->get<std::size_t>();
    if (auto it = j.find("lang"); it != j.end()) m.language = parse_language(it->get<std::string>());
    m.also_as_nli = j.value("also_as_nli", false);
  } catch (const std::exception& e) {
    throw IngestError(fmt::format("manifest '{}': {}", j.value("name", std::string("?")), e.what()));
  }
  if (auto v = m.validate(); !v.empty()) throw IngestError(v.front());
  return m;
}

std::vector<DatasetManifest> read_manifest_file(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(util::read_file(path), nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw IngestError(fmt::format("{}: parse error: {}", path.string(), e.what()));
  } catch (const std::exception&) {
    throw IngestError(fmt::format("cannot read manifest file '{}'", path.string()));
  }
  const json& list = j.is_array() ? j : j.value("manifests", json::array());
  std::vector<DatasetManifest> out;
  for (const auto& entry : list) out.push_back(manifest_from_json(entry, path.parent_path()));
  return out;
}

std::vector<Example> load_source(const DatasetManifest& m, std::size_t* excluded) {
  if (auto v = m.validate(); !v.empty()) throw IngestError(v.front());
  const auto records = read_source_records(m.path);

  std::vector<Example> out;
  std::size_t ordinal = 0;
  std::size_t dropped_by_filter = 0;

  auto keep_source = [&](std::string_view filter_value) {
    if (!m.include_sources.empty() && !in_list(filter_value, m.include_sources)) return false;
    if (in_list(filter_value, m.exclude_sources)) return false;
    return true;
  };

  for (std::size_t r = 0; r < records.size(); ++r) {
    const json& record = records[r];
    try {
      if (!record.is_object()) throw std::invalid_argument("record must be an object");

      if (m.adapter == Adapter::Unified) {
        Example e = example_from_json(record);
        ++ordinal;
        if (e.task != m.task) {
          throw std::invalid_argument(fmt::format("record task {} does not match manifest task {}",
                                                  to_string(e.task), to_string(m.task)));
        }
        if (!keep_source(e.source)) {
          ++dropped_by_filter;
          continue;
        }
        if (auto v = validate_example(e); !v.empty()) throw std::invalid_argument(fmt::format("{}", fmt::join(v, "; ")));
        out.push_back(std::move(e));
        continue;
      }

      const RecordView view(record, m);
      std::string filter_value = m.name;
      std::string source = m.name;
      if (const json* s = view.find_column(view.column_for("source")); s && m.columns.contains("source")) {
        filter_value = RecordView::text_of(s, view.column_for("source"));
        source = m.name + "/" + filter_value;
      }
      Language lang = m.language;
      if (m.columns.contains("lang")) lang = parse_language(view.text("lang"));

      // (assessed content, label) pairs; fan-out yields several per record.
      const std::string content_role = default_columns(m.adapter).front().first;
      std::vector<std::pair<std::string, std::optional<int>>> variants;
      if (m.fanout.empty()) {
        variants.emplace_back(view.text(content_role), resolve_label(view.find("label"), m));
      } else {
        for (const auto& f : m.fanout) {
          variants.emplace_back(RecordView::text_of(view.find_column(f.column), f.column), f.label);
        }
      }

      for (auto& [content, label] : variants) {
        const Provenance from{m.name, m.split, ordinal++};
        if (!label) continue;  // label_map says drop (e.g. neutral)
        if (!keep_source(filter_value)) {
          ++dropped_by_filter;
          continue;
        }
        Example e;
        switch (m.adapter) {
          case Adapter::NliTriple:
            e = from_nli_triple(view.text("premise"), std::move(content), *label, from, lang);
            break;
          case Adapter::QaTuple:
            e = from_qa_tuple(view.text("passage"), view.text("question"), std::move(content), *label, from, lang);
            break;
          case Adapter::SummaryPair:
            e = from_summary_pair(view.text("document"), std::move(content), *label, from, lang);
            break;
          case Adapter::DialogueTriple: {
            const json* d = view.find("dialogue");
            if (!d) throw std::invalid_argument(fmt::format("missing column '{}'", view.column_for("dialogue")));
            auto turns = parse_dialogue(*d);
            if (m.fanout.size() > 0 || view.find(content_role)) turns.push_back(Turn::assistant(std::move(content)));
            e = from_dialogue_triple(view.text("document"), std::move(turns), *label, from, lang);
            break;
          }
          case Adapter::Unified:
            break;
        }
        e.source = source;
        out.push_back(e);
        if (m.also_as_nli) out.push_back(summary_to_nli(e));
      }
    } catch (const IngestError&) {
      throw;
    } catch (const std::exception& ex) {
      throw IngestError(fmt::format("manifest '{}': record {}: {}", m.name, r + 1, ex.what()));
    }
  }
  if (excluded) *excluded = dropped_by_filter;
  return out;
}

std::vector<std::size_t> sample_indices(std::size_t available, std::size_t count, std::uint64_t seed) {
  if (count > available) {
    throw IngestError(fmt::format("sample.count {} exceeds the {} available records", count, available));
  }
  std::vector<std::size_t> idx(available);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(bounded(rng, available - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::size_t AssemblyReport::requested_total() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.requested;
  return n;
}

std::size_t AssemblyReport::yielded_total() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.yielded;
  return n;
}

bool AssemblyReport::ok() const {
  return std::none_of(entries.begin(), entries.end(), [](const ManifestReport& e) { return e.status == "failed"; });
}

json to_json(const AssemblyReport& r) {
  json entries = json::array();
  for (const auto& e : r.entries) {
    json j = {{"name", e.name},         {"requested", e.requested}, {"available", e.available},
              {"excluded", e.excluded}, {"yielded", e.yielded},     {"status", e.status}};
    if (!e.reason.empty()) j["reason"] = e.reason;
    entries.push_back(std::move(j));
  }
  return {{"sampling_algorithm", r.algorithm},
          {"manifests", entries},
          {"requested_total", r.requested_total()},
          {"yielded_total", r.yielded_total()}};
}

AssemblyResult assemble_bench(std::span<const DatasetManifest> manifests, const AssemblyOptions& options) {
  AssemblyResult result;
  for (const auto& m : manifests) {
    ManifestReport entry;
    entry.name = m.name;
    if (m.skip_reason) {
      entry.status = "skipped";
      entry.reason = *m.skip_reason;
      entry.requested = m.sample ? m.sample->count : m.expected_count.value_or(0);
      result.report.entries.push_back(std::move(entry));
      continue;
    }
    try {
      auto examples = load_source(m, &entry.excluded);
      entry.available = examples.size();
      entry.requested = m.sample ? m.sample->count : m.expected_count.value_or(examples.size());
      if (m.sample) {
        const auto picked = sample_indices(examples.size(), m.sample->count, m.sample->seed.value_or(0));
        std::vector<Example> subset;
        subset.reserve(picked.size());
        for (auto i : picked) subset.push_back(std::move(examples[i]));
        examples = std::move(subset);
      }
      entry.yielded = examples.size();
      entry.status = "ok";
      std::move(examples.begin(), examples.end(), std::back_inserter(result.examples));
    } catch (const IngestError& e) {
      if (options.fail_fast) throw;
      entry.status = "failed";
      entry.reason = e.what();
      entry.yielded = 0;
      if (entry.requested == 0) entry.requested = m.sample ? m.sample->count : m.expected_count.value_or(0);
    }
    result.report.entries.push_back(std::move(entry));
  }
  return result;
}

}  // namespace groundcheck::ingest
