#include "groundcheck/judge.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <unordered_map>

#include <fmt/format.h>

#include "groundcheck/util.hpp"

namespace groundcheck::judge {

namespace {

bool is_utf8_continuation(char c) { return (static_cast<unsigned char>(c) & 0xC0) == 0x80; }

std::size_t skip_space(std::string_view s, std::size_t pos) {
  while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  return pos;
}

/// Position just past `"key" :` for the first such occurrence at or after
/// `from`, or npos.
std::size_t find_key(std::string_view raw, std::string_view key, std::size_t from) {
  const std::string quoted = fmt::format("\"{}\"", key);
  while (true) {
    const auto at = raw.find(quoted, from);
    if (at == std::string_view::npos) return at;
    auto pos = skip_space(raw, at + quoted.size());
    if (pos < raw.size() && raw[pos] == ':') return skip_space(raw, pos + 1);
    from = at + 1;
  }
}

std::optional<int> binary_value_at(std::string_view raw, std::size_t pos) {
  bool quoted = false;
  if (pos < raw.size() && raw[pos] == '"') {
    quoted = true;
    ++pos;
  }
  if (pos >= raw.size() || (raw[pos] != '0' && raw[pos] != '1')) return std::nullopt;
  const int value = raw[pos] - '0';
  ++pos;
  if (quoted) {
    if (pos >= raw.size() || raw[pos] != '"') return std::nullopt;
  } else if (pos < raw.size() && (std::isdigit(static_cast<unsigned char>(raw[pos])) || raw[pos] == '.')) {
    return std::nullopt;
  }
  return value;
}

std::optional<std::string> string_value_at(std::string_view raw, std::size_t pos) {
  if (pos >= raw.size() || raw[pos] != '"') return std::nullopt;
  std::size_t end = pos + 1;
  while (end < raw.size() && raw[end] != '"') {
    end += raw[end] == '\\' ? 2 : 1;
  }
  if (end >= raw.size()) return std::nullopt;
  try {
    return json::parse(raw.substr(pos, end - pos + 1)).get<std::string>();
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

std::optional<ParsedVerdict> parse_strict(std::string_view raw) {
  json j;
  try {
    j = json::parse(util::trim(raw));
  } catch (const json::exception&) {
    return std::nullopt;
  }
  if (!j.is_object()) return std::nullopt;
  auto out = j.find("output");
  auto rat = j.find("rationale");
  if (out == j.end() || rat == j.end() || !out->is_number_integer() || !rat->is_string()) return std::nullopt;
  const auto label = out->get<long long>();
  if (label != 0 && label != 1) return std::nullopt;
  return ParsedVerdict{static_cast<int>(label), rat->get<std::string>(), ParseMode::Strict};
}

std::string cache_tag(const prompts::RenderedPrompt& p) {
  return fmt::format("judge/{}@{}", p.template_id, p.template_version);
}

}  // namespace

std::string_view to_string(ParseMode m) { return m == ParseMode::Strict ? "strict" : "salvaged"; }

ParseMode parse_parse_mode(std::string_view s) {
  if (s == "strict") return ParseMode::Strict;
  if (s == "salvaged") return ParseMode::Salvaged;
  throw std::invalid_argument(fmt::format("unknown parse mode '{}'", s));
}

ParsedVerdict parse_verdict(std::string_view raw) {
  if (auto strict = parse_strict(raw)) return *strict;

  for (auto pos = find_key(raw, "output", 0); pos != std::string_view::npos; pos = find_key(raw, "output", pos)) {
    if (auto label = binary_value_at(raw, pos)) {
      ParsedVerdict v{*label, std::nullopt, ParseMode::Salvaged};
      if (auto rpos = find_key(raw, "rationale", 0); rpos != std::string_view::npos) {
        v.rationale = string_value_at(raw, rpos);
      }
      return v;
    }
  }
  throw VerdictParseError(fmt::format("no binary \"output\" in model text: '{}'", raw.substr(0, 120)));
}

int aggregate_labels(std::span<const ChunkVerdict> chunks) {
  int label = 0;
  for (const auto& c : chunks) label = std::max(label, c.label);
  return label;
}

std::vector<std::string> ChunkingPolicy::validate() const {
  std::vector<std::string> v;
  if (max_chars == 0) v.emplace_back("chunking.max_chars must be positive");
  if (overlap_chars >= max_chars) v.emplace_back("chunking.overlap_chars must be smaller than max_chars");
  return v;
}

json to_json(const ChunkingPolicy& p) {
  return {{"max_chars", p.max_chars}, {"overlap_chars", p.overlap_chars}, {"boundary", "paragraph_preferred"}};
}

ChunkingPolicy chunking_from_json(const json& j) {
  ChunkingPolicy p;
  p.max_chars = j.value("max_chars", p.max_chars);
  p.overlap_chars = j.value("overlap_chars", p.overlap_chars);
  if (j.value("boundary", std::string("paragraph_preferred")) != "paragraph_preferred") {
    throw std::invalid_argument("chunking.boundary must be 'paragraph_preferred'");
  }
  if (auto v = p.validate(); !v.empty()) throw std::invalid_argument(v.front());
  return p;
}

std::vector<DocumentChunk> chunk_document(std::string_view document, const ChunkingPolicy& policy) {
  if (auto v = policy.validate(); !v.empty()) throw std::invalid_argument(v.front());

  const std::size_t n = document.size();
  const std::size_t max = policy.max_chars;
  if (n <= max) return {DocumentChunk{0, std::string(document)}};

  std::vector<DocumentChunk> chunks;
  std::size_t begin = 0;
  while (true) {
    std::size_t end = std::min(begin + max, n);
    if (end < n) {
      const std::size_t window_start = begin + max - max / 5;
      const auto brk = end >= 2 ? document.rfind("\n\n", end - 2) : std::string_view::npos;
      if (brk != std::string_view::npos && brk >= window_start && brk + 2 > begin) {
        end = brk + 2;
      } else {
        while (end > begin + 1 && is_utf8_continuation(document[end])) --end;
      }
    }
    chunks.push_back({begin, std::string(document.substr(begin, end - begin))});
    if (end == n) break;

    std::size_t next = end > policy.overlap_chars ? end - policy.overlap_chars : 0;
    next = std::max(next, begin + 1);
    while (next < end && is_utf8_continuation(document[next])) ++next;
    begin = next;
  }
  return chunks;
}

JudgeOutcome judge_example(const Example& e, llm::Backend& backend, prompts::PromptKind template_kind,
                           const ChunkingPolicy& policy) {
  JudgeOutcome outcome;
  outcome.id = e.id;
  outcome.model_id = backend.profile().model_id;

  const auto chunks = chunk_document(e.document, policy);
  std::vector<ParsedVerdict> parsed;
  std::vector<std::string> raws;
  parsed.reserve(chunks.size());

  for (std::size_t i = 0; i < chunks.size(); ++i) {
    Example view = e;
    view.document = chunks[i].text;
    const auto prompt = prompts::render(view, template_kind);
    outcome.template_id = prompt.template_id;
    outcome.template_version = prompt.template_version;

    const auto messages = prompt.as_messages();
    std::string raw;
    try {
      raw = backend.complete(messages, cache_tag(prompt)).text;
      parsed.push_back(parse_verdict(raw));
    } catch (const llm::ExhaustedRetriesError& ex) {
      outcome.error = chunks.size() > 1 ? fmt::format("chunk {}: {}", i, ex.what()) : ex.what();
      return outcome;
    } catch (const VerdictParseError& ex) {
      outcome.error = chunks.size() > 1 ? fmt::format("chunk {}: {}", i, ex.what()) : ex.what();
      return outcome;
    }
    raws.push_back(std::move(raw));
  }

  Verdict v;
  if (chunks.size() == 1) {
    v.label = parsed[0].label;
    v.rationale = parsed[0].rationale;
    v.parse_mode = parsed[0].mode;
    v.raw = std::move(raws[0]);
  } else {
    std::vector<ChunkVerdict> per_chunk;
    for (std::size_t i = 0; i < parsed.size(); ++i) per_chunk.push_back({i, parsed[i].label});
    v.label = aggregate_labels(per_chunk);
    const auto chosen = static_cast<std::size_t>(
        std::find_if(per_chunk.begin(), per_chunk.end(), [&](const ChunkVerdict& c) { return c.label == v.label; }) -
        per_chunk.begin());
    v.rationale = parsed[chosen].rationale;
    v.parse_mode = parsed[chosen].mode;
    v.raw = std::move(raws[chosen]);
    v.chunk_verdicts = std::move(per_chunk);
  }
  outcome.verdict = std::move(v);
  return outcome;
}

std::vector<JudgeOutcome> judge_all(std::span<const Example> examples, llm::Backend& backend,
                                    const JudgeBatchOptions& options, std::span<const JudgeOutcome> reuse) {
  std::unordered_map<std::string, const JudgeOutcome*> reusable;
  for (const auto& o : reuse) {
    if (o.ok() && o.model_id == backend.profile().model_id) reusable[o.id] = &o;
  }

  std::vector<JudgeOutcome> out(examples.size());
  util::parallel_for(examples.size(), options.jobs, [&](std::size_t i) {
    const Example& e = examples[i];
    if (auto it = reusable.find(e.id); it != reusable.end()) {
      // Only reuse verdicts produced with the template this run would use.
      const auto prompt = prompts::render(e, options.template_kind);
      if (it->second->template_id == prompt.template_id &&
          it->second->template_version == prompt.template_version) {
        out[i] = *it->second;
        return;
      }
    }
    out[i] = judge_example(e, backend, options.template_kind, options.policy);
  });
  return out;
}

json to_json(const JudgeOutcome& o) {
  json j = {
      {"id", o.id},
      {"template_id", o.template_id},
      {"template_version", o.template_version},
      {"model", o.model_id},
  };
  if (!o.verdict) {
    j["failed"] = true;
    j["error"] = o.error;
    return j;
  }
  const Verdict& v = *o.verdict;
  j["failed"] = false;
  j["label"] = v.label;
  j["rationale"] = v.rationale ? json(*v.rationale) : json(nullptr);
  j["parse_mode"] = to_string(v.parse_mode);
  j["chunked"] = v.chunk_verdicts.has_value();
  json labels = json::array();
  if (v.chunk_verdicts) {
    for (const auto& c : *v.chunk_verdicts) labels.push_back(c.label);
  }
  j["chunk_labels"] = std::move(labels);
  j["raw"] = v.raw;
  return j;
}

JudgeOutcome outcome_from_json(const json& j) {
  JudgeOutcome o;
  o.id = j.at("id").get<std::string>();
  o.template_id = j.value("template_id", std::string{});
  o.template_version = j.value("template_version", std::string{});
  o.model_id = j.value("model", std::string{});
  if (j.value("failed", false)) {
    o.error = j.value("error", std::string{});
    return o;
  }
  Verdict v;
  v.label = j.at("label").get<int>();
  if (v.label != 0 && v.label != 1) throw std::invalid_argument("verdict label must be 0 or 1");
  if (auto it = j.find("rationale"); it != j.end() && it->is_string()) v.rationale = it->get<std::string>();
  v.parse_mode = parse_parse_mode(j.value("parse_mode", std::string("strict")));
  v.raw = j.value("raw", std::string{});
  if (j.value("chunked", false)) {
    std::vector<ChunkVerdict> chunks;
    const auto& labels = j.at("chunk_labels");
    for (std::size_t i = 0; i < labels.size(); ++i) chunks.push_back({i, labels[i].get<int>()});
    v.chunk_verdicts = std::move(chunks);
  }
  o.verdict = std::move(v);
  return o;
}

void write_verdicts(const std::filesystem::path& path, std::span<const JudgeOutcome> outcomes) {
  std::string buffer;
  for (const auto& o : outcomes) {
    buffer += to_json(o).dump();
    buffer += '\n';
  }
  util::atomic_write_file(path, buffer);
}

std::vector<JudgeOutcome> read_verdicts(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open verdict file " + path.string());
  std::vector<JudgeOutcome> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (util::trim(line).empty()) continue;
    try {
      out.push_back(outcome_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(fmt::format("{}: line {}: {}", path.string(), line_no, e.what()));
    }
  }
  return out;
}

}  // namespace groundcheck::judge
