#include "groundcheck/synthesis.hpp"

#include <fstream>
#include <functional>
#include <unordered_map>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include "groundcheck/prompts.hpp"
#include "groundcheck/util.hpp"

namespace groundcheck {

std::string_view to_string(SynthesisKind k) {
  switch (k) {
    case SynthesisKind::HallucinateAnswer: return "hallucinate";
    case SynthesisKind::QaToDialogue: return "dialogue";
    case SynthesisKind::UnfaithfulSummary: return "unfaithful-summary";
    case SynthesisKind::Translate: return "translate";
  }
  return "?";
}

SynthesisKind parse_synthesis_kind(std::string_view s) {
  for (auto k : {SynthesisKind::HallucinateAnswer, SynthesisKind::QaToDialogue, SynthesisKind::UnfaithfulSummary,
                 SynthesisKind::Translate}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument(
      fmt::format("unknown synthesis kind '{}' (expected hallucinate|dialogue|unfaithful-summary|translate)", s));
}

std::vector<std::string> validate_job(const SynthesisJob& job) {
  std::vector<std::string> v;
  const Example& e = job.input;
  if (auto bad = validate_example(e); !bad.empty()) {
    v.push_back(fmt::format("input example invalid: {}", fmt::join(bad, "; ")));
  }
  const bool wants_type = job.kind == SynthesisKind::HallucinateAnswer;
  const bool wants_target = job.kind == SynthesisKind::Translate;
  if (wants_type != job.error_type.has_value()) {
    v.emplace_back(wants_type ? "hallucinate jobs require an error_type"
                              : "error_type is only valid for hallucinate jobs");
  }
  if (wants_target != job.target_language.has_value()) {
    v.emplace_back(wants_target ? "translate jobs require a target_language"
                                : "target_language is only valid for translate jobs");
  }
  switch (job.kind) {
    case SynthesisKind::HallucinateAnswer:
      if (e.task != TaskFormat::Qa) v.emplace_back("hallucinate requires a QA example");
      if (e.label != kSupported) v.emplace_back("hallucinate requires a label-1 example");
      break;
    case SynthesisKind::QaToDialogue:
      if (e.task != TaskFormat::Qa) v.emplace_back("dialogue conversion requires a QA example");
      break;
    case SynthesisKind::UnfaithfulSummary:
      if (e.task != TaskFormat::Summarization) v.emplace_back("unfaithful-summary requires a summarization example");
      if (e.label != kSupported) v.emplace_back("unfaithful-summary requires a label-1 example");
      break;
    case SynthesisKind::Translate:
      if (job.target_language && *job.target_language == e.language) {
        v.push_back(fmt::format("example is already in '{}'", to_string(e.language)));
      }
      break;
  }
  return v;
}

}  // namespace groundcheck

namespace groundcheck::synthesis {

namespace {

/// Rejection of one generation; the job may still succeed on a later attempt.
class UnusableOutput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string_view strip_code_fence(std::string_view s) {
  s = util::trim(s);
  if (s.substr(0, 3) != "```") return s;
  const auto first_newline = s.find('\n');
  const auto closing = s.rfind("```");
  if (first_newline == std::string_view::npos || closing <= first_newline) return s;
  return util::trim(s.substr(first_newline + 1, closing - first_newline - 1));
}

std::string clean_text_reply(std::string_view raw) {
  std::string_view s = strip_code_fence(raw);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = util::trim(s.substr(1, s.size() - 2));
  if (s.empty()) throw UnusableOutput("model returned empty text");
  return std::string(s);
}

json parse_structured_reply(std::string_view raw) {
  try {
    return json::parse(strip_code_fence(raw));
  } catch (const json::exception& e) {
    throw UnusableOutput(fmt::format("reply is not valid JSON: {}", e.what()));
  }
}

void require_valid_output(const Example& out) {
  if (auto v = validate_example(out); !v.empty()) {
    throw UnusableOutput(fmt::format("output fails validation: {}", fmt::join(v, "; ")));
  }
}

void require_changed(std::string_view original, std::string_view rewritten) {
  if (util::normalize_for_comparison(original) == util::normalize_for_comparison(rewritten)) {
    throw UnusableOutput("model output equals the original text");
  }
}

Example derived(const Example& in, std::string id) {
  Example out = in;
  out.id = std::move(id);
  out.rationale.reset();
  return out;
}

void check_preconditions(const SynthesisJob& job) {
  if (auto v = validate_job(job); !v.empty()) {
    throw PreconditionError(fmt::format("job for '{}' ({}): {}", job.input.id, to_string(job.kind),
                                        fmt::join(v, "; ")));
  }
}

using Builder = std::function<Example(const std::string& reply)>;

JobResult attempt_loop(const SynthesisJob& job, llm::Backend& backend, const SynthesisOptions& options,
                       const Builder& build) {
  check_preconditions(job);
  const auto prompt = prompts::render_synthesis(job);
  const auto messages = prompt.as_messages();

  FailedJob failure{job.input.id, job.kind, job.error_type, 0, {}};
  for (int attempt = 1; attempt <= options.max_attempts; ++attempt) {
    failure.attempts = attempt;
    const auto tag = fmt::format("synth/{}@{}/{}/attempt-{}", prompt.template_id, prompt.template_version,
                                 output_id(job), attempt);
    std::string reply;
    try {
      reply = backend.complete(messages, tag).text;
    } catch (const llm::ExhaustedRetriesError& e) {
      failure.last_error = e.what();
      return JobResult{std::nullopt, failure};
    }
    try {
      Example out = build(reply);
      require_valid_output(out);
      return JobResult{std::move(out), std::nullopt};
    } catch (const UnusableOutput& e) {
      failure.last_error = e.what();
      spdlog::debug("synthesis {} attempt {} rejected: {}", output_id(job), attempt, e.what());
    }
  }
  return JobResult{std::nullopt, failure};
}

std::string language_code(Language l) { return std::string(to_string(l)); }

}  // namespace

std::string output_id(const SynthesisJob& job) {
  switch (job.kind) {
    case SynthesisKind::HallucinateAnswer:
      return fmt::format("{}#halluc-{}", job.input.id,
                         job.error_type ? std::string(to_string(*job.error_type)) : std::string("?"));
    case SynthesisKind::QaToDialogue:
      return job.input.id + "#dialog";
    case SynthesisKind::UnfaithfulSummary:
      return job.input.id + "#unfaithful";
    case SynthesisKind::Translate:
      return fmt::format("{}#{}", job.input.id, job.target_language ? language_code(*job.target_language) : "?");
  }
  return job.input.id;
}

JobResult hallucinate_answer(const Example& e, HallucinationErrorType type, llm::Backend& backend,
                             const SynthesisOptions& options) {
  SynthesisJob job{e, SynthesisKind::HallucinateAnswer, type, std::nullopt, backend.profile().name};
  return attempt_loop(job, backend, options, [&](const std::string& reply) {
    const std::string answer = clean_text_reply(reply);
    require_changed(e.conversation.back().content, answer);
    Example out = derived(e, output_id(job));
    out.conversation.back().content = answer;
    out.label = kHallucinated;
    out.hallucination_type = type;
    return out;
  });
}

JobResult qa_to_dialogue(const Example& e, llm::Backend& backend, const SynthesisOptions& options) {
  SynthesisJob job{e, SynthesisKind::QaToDialogue, std::nullopt, std::nullopt, backend.profile().name};
  return attempt_loop(job, backend, options, [&](const std::string& reply) {
    const json turns = parse_structured_reply(reply);
    if (!turns.is_array()) throw UnusableOutput("dialogue reply must be a JSON array of turns");
    Example out = derived(e, output_id(job));
    out.task = TaskFormat::Dialogue;
    out.conversation.clear();
    for (const auto& t : turns) {
      if (!t.is_object() || !t.contains("role") || !t.contains("content") || !t["role"].is_string() ||
          !t["content"].is_string()) {
        throw UnusableOutput("each dialogue turn needs string 'role' and 'content'");
      }
      Role role;
      try {
        role = parse_role(util::to_lower(t["role"].get<std::string>()));
      } catch (const std::invalid_argument& ex) {
        throw UnusableOutput(ex.what());
      }
      out.conversation.push_back({role, std::string(util::trim(t["content"].get<std::string>()))});
    }
    return out;
  });
}

JobResult unfaithful_summary(const Example& e, llm::Backend& backend, const SynthesisOptions& options) {
  SynthesisJob job{e, SynthesisKind::UnfaithfulSummary, std::nullopt, std::nullopt, backend.profile().name};
  return attempt_loop(job, backend, options, [&](const std::string& reply) {
    const std::string summary = clean_text_reply(reply);
    require_changed(e.conversation.back().content, summary);
    Example out = derived(e, output_id(job));
    out.conversation.back().content = summary;
    out.label = kHallucinated;
    return out;
  });
}

JobResult translate(const Example& e, Language target, llm::Backend& backend, const SynthesisOptions& options) {
  SynthesisJob job{e, SynthesisKind::Translate, std::nullopt, target, backend.profile().name};
  return attempt_loop(job, backend, options, [&](const std::string& reply) {
    const json j = parse_structured_reply(reply);
    if (!j.is_object() || !j.contains("document") || !j["document"].is_string() || !j.contains("turns") ||
        !j["turns"].is_array()) {
      throw UnusableOutput("translation reply must be an object with 'document' and 'turns'");
    }
    const auto& turns = j["turns"];
    if (turns.size() != e.conversation.size()) {
      throw UnusableOutput(fmt::format("turn-count mismatch: expected {}, got {}", e.conversation.size(),
                                       turns.size()));
    }
    Example out = derived(e, output_id(job));
    out.document = j["document"].get<std::string>();
    for (std::size_t i = 0; i < turns.size(); ++i) {
      if (!turns[i].is_string()) throw UnusableOutput("translated turns must be strings");
      out.conversation[i].content = turns[i].get<std::string>();
    }
    out.language = target;
    return out;
  });
}

JobResult run_job(const SynthesisJob& job, llm::Backend& backend, const SynthesisOptions& options) {
  switch (job.kind) {
    case SynthesisKind::HallucinateAnswer:
      if (!job.error_type) throw PreconditionError("hallucinate jobs require an error_type");
      return hallucinate_answer(job.input, *job.error_type, backend, options);
    case SynthesisKind::QaToDialogue:
      return qa_to_dialogue(job.input, backend, options);
    case SynthesisKind::UnfaithfulSummary:
      return unfaithful_summary(job.input, backend, options);
    case SynthesisKind::Translate:
      if (!job.target_language) throw PreconditionError("translate jobs require a target_language");
      return translate(job.input, *job.target_language, backend, options);
  }
  throw PreconditionError("unhandled synthesis kind");
}

std::vector<SynthesisJob> plan_jobs(std::span<const Example> inputs, const BatchPlan& plan) {
  if (plan.kind == SynthesisKind::HallucinateAnswer && plan.error_types.empty()) {
    throw PreconditionError("hallucinate plan needs at least one error type");
  }
  if (plan.kind == SynthesisKind::Translate && !plan.target_language) {
    throw PreconditionError("translate plan needs a target language");
  }
  const std::size_t variants = plan.kind == SynthesisKind::HallucinateAnswer ? plan.variants_per_example : 1;

  std::vector<SynthesisJob> jobs;
  std::size_t eligible = 0;
  for (const auto& e : inputs) {
    SynthesisJob probe{e, plan.kind, std::nullopt, std::nullopt, plan.backend};
    if (plan.kind == SynthesisKind::HallucinateAnswer) probe.error_type = plan.error_types.front();
    if (plan.kind == SynthesisKind::Translate) probe.target_language = plan.target_language;
    if (!validate_job(probe).empty()) continue;

    for (std::size_t v = 0; v < variants; ++v) {
      SynthesisJob job = probe;
      if (plan.kind == SynthesisKind::HallucinateAnswer) {
        job.error_type = plan.error_types[(eligible * variants + v) % plan.error_types.size()];
      }
      jobs.push_back(std::move(job));
    }
    ++eligible;
  }
  return jobs;
}

BatchResult run_batch(std::span<const SynthesisJob> jobs, llm::Backend& backend, const SynthesisOptions& options,
                      std::size_t workers) {
  std::vector<JobResult> results(jobs.size());
  util::parallel_for(jobs.size(), workers, [&](std::size_t i) { results[i] = run_job(jobs[i], backend, options); });

  BatchResult out;
  for (auto& r : results) {
    if (r.output) {
      out.outputs.push_back(std::move(*r.output));
    } else {
      out.failures.push_back(std::move(*r.failure));
    }
  }
  return out;
}

json to_json(const FailedJob& f) {
  json j = {{"id", f.id}, {"kind", to_string(f.kind)}, {"attempts", f.attempts}, {"last_error", f.last_error}};
  if (f.error_type) j["error_type"] = to_string(*f.error_type);
  return j;
}

void write_failed_jobs(const std::filesystem::path& path, std::span<const FailedJob> failures) {
  std::string buffer;
  for (const auto& f : failures) {
    buffer += to_json(f).dump();
    buffer += '\n';
  }
  util::atomic_write_file(path, buffer);
}

json job_to_json(const SynthesisJob& job) {
  json j = {{"id", job.input.id}, {"kind", to_string(job.kind)}};
  if (job.error_type) j["error_type"] = to_string(*job.error_type);
  if (job.target_language) j["target_language"] = to_string(*job.target_language);
  if (!job.backend.empty()) j["backend"] = job.backend;
  return j;
}

std::vector<SynthesisJob> read_job_file(const std::filesystem::path& path, std::span<const Example> inputs) {
  std::unordered_map<std::string, const Example*> by_id;
  for (const auto& e : inputs) by_id.emplace(e.id, &e);

  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open job file " + path.string());

  std::vector<SynthesisJob> jobs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (util::trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      const auto id = j.at("id").get<std::string>();
      auto it = by_id.find(id);
      if (it == by_id.end()) throw std::runtime_error(fmt::format("unknown example id '{}'", id));
      SynthesisJob job;
      job.input = *it->second;
      job.kind = parse_synthesis_kind(j.at("kind").get<std::string>());
      if (j.contains("error_type")) job.error_type = parse_error_type(j["error_type"].get<std::string>());
      if (j.contains("target_language")) {
        job.target_language = parse_language(j["target_language"].get<std::string>());
      }
      job.backend = j.value("backend", std::string{});
      jobs.push_back(std::move(job));
    } catch (const std::exception& e) {
      throw std::runtime_error(fmt::format("{}: line {}: {}", path.string(), line_no, e.what()));
    }
  }
  return jobs;
}

}  // namespace groundcheck::synthesis
