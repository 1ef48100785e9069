#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "groundcheck/llm.hpp"
#include "groundcheck/schema.hpp"
#include "groundcheck/synthesis_job.hpp"

namespace groundcheck::prompts {

enum class PromptKind { ClassifierFlat, GenerativeChat };

std::string_view to_string(PromptKind k);
PromptKind parse_prompt_kind(std::string_view s);  // "classifier" | "generative"

struct RenderedPrompt {
  PromptKind kind = PromptKind::GenerativeChat;
  std::optional<std::string> flat_text;
  std::optional<std::vector<llm::Message>> messages;
  std::string template_id;
  std::string template_version;

  /// What gets sent to a chat endpoint: the message list, or the flat text as
  /// a single user message.
  std::vector<llm::Message> as_messages() const;
};

class PromptError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Template {
  std::string id;
  std::string text;
  std::string version;  // derived from the text; changes iff the text changes
};

/// Every built-in template, keyed by id.
const std::map<std::string, Template>& template_registry();
const Template& get_template(std::string_view id);

/// Substitutes `{{name}}` placeholders in one pass. Substituted values are
/// never re-scanned. Unknown placeholders throw PromptError.
std::string render_template(std::string_view text, const std::map<std::string, std::string>& values);

std::string template_version_of(std::string_view text);

/// Flattened "# Context: / # Claim:" input for encoder classifiers.
RenderedPrompt render_classifier(const Example& e);

/// Single user message carrying the task-specific judging instruction.
RenderedPrompt render_generative(const Example& e);

RenderedPrompt render(const Example& e, PromptKind kind);

/// Artifact-defined generation prompts for the synthesis stage.
RenderedPrompt render_synthesis(const SynthesisJob& job);

/// Definition sentence for one taxonomy entry, e.g. "Entity errors, where ...".
std::string error_type_definition(HallucinationErrorType t);

}  // namespace groundcheck::prompts
