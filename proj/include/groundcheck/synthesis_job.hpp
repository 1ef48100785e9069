#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "groundcheck/schema.hpp"

namespace groundcheck {

enum class SynthesisKind { HallucinateAnswer, QaToDialogue, UnfaithfulSummary, Translate };

std::string_view to_string(SynthesisKind k);
SynthesisKind parse_synthesis_kind(std::string_view s);

struct SynthesisJob {
  Example input;
  SynthesisKind kind = SynthesisKind::HallucinateAnswer;
  std::optional<HallucinationErrorType> error_type;  // iff HallucinateAnswer
  std::optional<Language> target_language;           // iff Translate
  std::string backend;
};

/// Kind/field co-requirements and input task/label preconditions.
std::vector<std::string> validate_job(const SynthesisJob& job);

}  // namespace groundcheck
