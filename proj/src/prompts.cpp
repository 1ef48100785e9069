#include "groundcheck/prompts.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "groundcheck/util.hpp"

namespace groundcheck::prompts {

namespace {

// Classifier inputs carry no trailing newline; chat instructions end with
// exactly one.

constexpr std::string_view kClassifierNli = "# Context:\n{{document}}\n\n# Claim:\nassistant: {{claim}}";

constexpr std::string_view kClassifierQa =
    "# Context:\n{{document}}\n\n# Claim:\nuser: {{question}}\nassistant: {{answer}}";

constexpr std::string_view kClassifierDialogue = "# Context:\n{{document}}\n\n# Claim:\n{{conversation}}";

constexpr std::string_view kClassifierSummary = "# Context:\n{{document}}\n\n# Summary:\nassistant: {{summary}}";

constexpr std::string_view kGenerativeNli = R"(You will classify whether the claim is supported by the given document or not.

Follow these steps:

1. Assess the claim against the document
2. Classify it is 0 (not supported) or 1 (supported)
3. Provide Rationale: Explain your classification decision with a brief rationale.
4. Finally, output the results as a JSON object with the fields "rationale" and "output" where "output" contains the classification (0 or 1)

# Document:
{{document}}

# Claim:
{{claim}}

Now, please output the following as a JSON object:
{
"rationale": <verbal feedback> (str datatype),
"output": <classification score (0 or 1)> (int datatype),
}
)";

constexpr std::string_view kGenerativeQa = R"(You will classify whether the answer is supported by the given document or not.

Follow these steps:

1. Assess the answer against the document
2. Classify it is 0 (not supported) or 1 (supported)
3. Provide Rationale: Explain your classification decision with a brief rationale.
4. Finally, output the results as a JSON object with the fields "rationale" and "output" where "output" contains the classification (0 or 1)

# Document:
{{document}}

# Question:
{{question}}

# Answer:
{{answer}}

Now, please output the following as a JSON object:
{
"rationale": <verbal feedback> (str datatype),
"output": <classification score (0 or 1)> (int datatype),
}
)";

constexpr std::string_view kGenerativeDialogue = R"(You will classify whether the last assistant response in the conversation is supported by the given document or not.

Follow these steps:

1. Assess the last assistant response in the conversation against the document
2. Classify it is 0 (not supported) or 1 (supported)
3. Provide Rationale: Explain your classification decision with a brief rationale.
4. Finally, output the results as a JSON object with the fields "rationale" and "output" where "output" contains the classification (0 or 1)

# Document:
{{document}}

# Conversation:
{{conversation}}

Now, please output the following as a JSON object:
{
"rationale": <verbal feedback> (str datatype),
"output": <classification score (0 or 1)> (int datatype),
}
)";

constexpr std::string_view kGenerativeSummary = R"(You will classify whether the given summary is supported by the given document or not.

Follow these steps:

1. Assess the summary against the document
2. Classify it is 0 (not supported) or 1 (supported)
3. Provide Rationale: Explain your classification decision with a brief rationale.
4. Finally, output the results as a JSON object with the fields "rationale" and "output" where "output" contains the classification (0 or 1)

# Document:
{{document}}

# Summary:
{{summary}}

Now, please output the following as a JSON object:
{
"rationale": <verbal feedback> (str datatype),
"output": <classification score (0 or 1)> (int datatype),
}
)";

constexpr std::string_view kSynthHallucinate = R"(You are generating evaluation data for hallucination detection.

Rewrite the answer below so that it is no longer faithful to the document by introducing this kind of error:
{{error_definition}}.

Keep the rewritten answer fluent, close to the original in length and style, and plausible at first glance.

# Document:
{{document}}

# Question:
{{question}}

# Original answer:
{{answer}}

Return only the rewritten answer text, with no explanation, labels or quotation marks.
)";

constexpr std::string_view kSynthUnfaithfulSummary = R"(You are generating evaluation data for hallucination detection.

Rewrite the summary below so that it states at least one thing that the document does not support or that contradicts the document. Keep it fluent and close to the original in length and style.

# Document:
{{document}}

# Original summary:
{{summary}}

Return only the rewritten summary text, with no explanation, labels or quotation marks.
)";

constexpr std::string_view kSynthDialogue = R"(Transform the question-answer pair below into a multi-turn conversation between a user and an assistant about the document.

Requirements:
1. The conversation starts with a user turn, alternates strictly between user and assistant, and ends with an assistant turn.
2. Use at least two turns.
3. Ensure that the factual information in the answer is preserved: the final assistant turn must state exactly the facts of the answer, without adding, dropping or correcting any of them.

# Document:
{{document}}

# Question:
{{question}}

# Answer:
{{answer}}

Return only a JSON array of turns, each an object with the fields "role" ("user" or "assistant") and "content".
)";

constexpr std::string_view kSynthTranslate = R"(Translate the following content from {{source_language}} to {{target_language}}.

Translate the document and every conversation turn. Keep the meaning, names, numbers and formatting. Do not merge, split, drop or add turns.

# Document:
{{document}}

# Turns:
{{turns}}

Return only a JSON object with the fields "document" (the translated document) and "turns" (an array of exactly {{turn_count}} translated strings in the original order). The output must preserve this structure.
)";

Template make_template(std::string id, std::string_view text) {
  return Template{std::move(id), std::string(text), template_version_of(text)};
}

std::string_view task_suffix(TaskFormat t) { return to_string(t); }

std::string role_lines(const std::vector<Turn>& turns) {
  std::string out;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    if (i > 0) out += '\n';
    out += fmt::format("{}: {}", to_string(turns[i].role), turns[i].content);
  }
  return out;
}

void require_valid(const Example& e) {
  if (auto v = validate_example(e); !v.empty()) {
    throw PromptError(fmt::format("cannot render invalid example '{}': {}", e.id, fmt::join(v, "; ")));
  }
}

std::map<std::string, std::string> slot_values(const Example& e) {
  std::map<std::string, std::string> values{{"document", e.document}};
  const auto& turns = e.conversation;
  switch (e.task) {
    case TaskFormat::Nli:
      values["claim"] = turns.back().content;
      break;
    case TaskFormat::Summarization:
      values["summary"] = turns.back().content;
      break;
    case TaskFormat::Qa:
      values["question"] = turns.front().content;
      values["answer"] = turns.back().content;
      break;
    case TaskFormat::Dialogue:
      values["conversation"] = role_lines(turns);
      break;
  }
  return values;
}

std::string language_name(Language l) { return l == Language::Es ? "Spanish" : "English"; }

std::string title_case(std::string_view s) {
  std::string out(s);
  if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

RenderedPrompt chat_prompt(const Template& t, const std::map<std::string, std::string>& values) {
  RenderedPrompt p;
  p.kind = PromptKind::GenerativeChat;
  p.messages = std::vector<llm::Message>{{"user", render_template(t.text, values)}};
  p.template_id = t.id;
  p.template_version = t.version;
  return p;
}

}  // namespace

std::string_view to_string(PromptKind k) {
  return k == PromptKind::ClassifierFlat ? "classifier" : "generative";
}

PromptKind parse_prompt_kind(std::string_view s) {
  if (s == "classifier") return PromptKind::ClassifierFlat;
  if (s == "generative") return PromptKind::GenerativeChat;
  throw std::invalid_argument(fmt::format("unknown template kind '{}' (expected classifier|generative)", s));
}

std::vector<llm::Message> RenderedPrompt::as_messages() const {
  if (messages) return *messages;
  return {{"user", flat_text.value_or("")}};
}

std::string template_version_of(std::string_view text) { return util::sha256_hex(text).substr(0, 12); }

const std::map<std::string, Template>& template_registry() {
  static const std::map<std::string, Template> registry = [] {
    std::map<std::string, Template> r;
    auto add = [&r](std::string id, std::string_view text) {
      auto t = make_template(id, text);
      r.emplace(std::move(id), std::move(t));
    };
    add("classifier/nli", kClassifierNli);
    add("classifier/qa", kClassifierQa);
    add("classifier/dialogue", kClassifierDialogue);
    add("classifier/summarization", kClassifierSummary);
    add("generative/nli", kGenerativeNli);
    add("generative/qa", kGenerativeQa);
    add("generative/dialogue", kGenerativeDialogue);
    add("generative/summarization", kGenerativeSummary);
    add("synthesis/hallucinate_answer", kSynthHallucinate);
    add("synthesis/unfaithful_summary", kSynthUnfaithfulSummary);
    add("synthesis/qa_to_dialogue", kSynthDialogue);
    add("synthesis/translate", kSynthTranslate);
    return r;
  }();
  return registry;
}

const Template& get_template(std::string_view id) {
  const auto& r = template_registry();
  auto it = r.find(std::string(id));
  if (it == r.end()) throw PromptError(fmt::format("no template '{}'", id));
  return it->second;
}

std::string render_template(std::string_view text, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(text.size() + 256);
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto open = text.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(text.substr(pos));
      break;
    }
    const auto close = text.find("}}", open + 2);
    if (close == std::string_view::npos) throw PromptError("unterminated placeholder in template");
    out.append(text.substr(pos, open - pos));
    const std::string name(util::trim(text.substr(open + 2, close - open - 2)));
    auto it = values.find(name);
    if (it == values.end()) throw PromptError(fmt::format("no value for placeholder '{}'", name));
    out.append(it->second);
    pos = close + 2;
  }
  return out;
}

RenderedPrompt render_classifier(const Example& e) {
  require_valid(e);
  const Template& t = get_template(fmt::format("classifier/{}", task_suffix(e.task)));
  RenderedPrompt p;
  p.kind = PromptKind::ClassifierFlat;
  p.flat_text = render_template(t.text, slot_values(e));
  p.template_id = t.id;
  p.template_version = t.version;
  return p;
}

RenderedPrompt render_generative(const Example& e) {
  require_valid(e);
  return chat_prompt(get_template(fmt::format("generative/{}", task_suffix(e.task))), slot_values(e));
}

RenderedPrompt render(const Example& e, PromptKind kind) {
  return kind == PromptKind::ClassifierFlat ? render_classifier(e) : render_generative(e);
}

std::string error_type_definition(HallucinationErrorType t) {
  std::string_view clause;
  switch (t) {
    case HallucinationErrorType::Entity:
      clause = "where an incorrect entity alters the factuality of a statement";
      break;
    case HallucinationErrorType::Relation:
      clause = "involving incorrect semantic relationships like verbs or prepositions";
      break;
    case HallucinationErrorType::Sentence:
      clause = "where the entire statement contradicts the evidence";
      break;
    case HallucinationErrorType::Invented:
      clause = "containing fabricated information not found in the context";
      break;
    case HallucinationErrorType::Subjective:
      clause = "based on personal opinions rather than facts";
      break;
    case HallucinationErrorType::Unverifiable:
      clause = "where the answer cannot be validated by the given evidence";
      break;
  }
  return fmt::format("{} errors, {}", title_case(to_string(t)), clause);
}

RenderedPrompt render_synthesis(const SynthesisJob& job) {
  if (auto v = validate_job(job); !v.empty()) {
    throw PromptError(fmt::format("invalid synthesis job for '{}': {}", job.input.id, fmt::join(v, "; ")));
  }
  const Example& e = job.input;
  switch (job.kind) {
    case SynthesisKind::HallucinateAnswer: {
      auto values = slot_values(e);
      values["error_definition"] = error_type_definition(*job.error_type);
      return chat_prompt(get_template("synthesis/hallucinate_answer"), values);
    }
    case SynthesisKind::UnfaithfulSummary:
      return chat_prompt(get_template("synthesis/unfaithful_summary"), slot_values(e));
    case SynthesisKind::QaToDialogue:
      return chat_prompt(get_template("synthesis/qa_to_dialogue"), slot_values(e));
    case SynthesisKind::Translate: {
      json turns = json::array();
      for (const auto& t : e.conversation) turns.push_back(t.content);
      return chat_prompt(get_template("synthesis/translate"),
                         {{"document", e.document},
                          {"turns", turns.dump(2)},
                          {"turn_count", std::to_string(e.conversation.size())},
                          {"source_language", language_name(e.language)},
                          {"target_language", language_name(*job.target_language)}});
    }
  }
  throw PromptError("unhandled synthesis kind");
}

}  // namespace groundcheck::prompts
