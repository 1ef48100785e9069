#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "groundcheck/llm.hpp"
#include "groundcheck/schema.hpp"
#include "groundcheck/synthesis_job.hpp"

namespace groundcheck::synthesis {

class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct FailedJob {
  std::string id;
  SynthesisKind kind = SynthesisKind::HallucinateAnswer;
  std::optional<HallucinationErrorType> error_type;
  int attempts = 0;
  std::string last_error;
};

/// Exactly one of output / failure is set.
struct JobResult {
  std::optional<Example> output;
  std::optional<FailedJob> failure;

  bool ok() const { return output.has_value(); }
};

struct SynthesisOptions {
  int max_attempts = 3;  // generations per job before it is recorded as failed
};

// Each operation throws PreconditionError for ineligible input and lets
// PermanentBackendError propagate. Retry exhaustion and unusable model output
// become a FailedJob.

/// Same document and question, a rewritten answer, label 0.
JobResult hallucinate_answer(const Example& e, HallucinationErrorType type, llm::Backend& backend,
                             const SynthesisOptions& options = {});

/// QA pair to an alternating user/assistant dialogue; label carried over.
JobResult qa_to_dialogue(const Example& e, llm::Backend& backend, const SynthesisOptions& options = {});

/// Same document, a rewritten summary, label 0.
JobResult unfaithful_summary(const Example& e, llm::Backend& backend, const SynthesisOptions& options = {});

/// Document and every turn translated; structure and label unchanged.
JobResult translate(const Example& e, Language target, llm::Backend& backend, const SynthesisOptions& options = {});

JobResult run_job(const SynthesisJob& job, llm::Backend& backend, const SynthesisOptions& options = {});

/// Id the output of `job` will carry; stable across re-runs.
std::string output_id(const SynthesisJob& job);

struct BatchPlan {
  SynthesisKind kind = SynthesisKind::HallucinateAnswer;
  std::vector<HallucinationErrorType> error_types{kAllErrorTypes.begin(), kAllErrorTypes.end()};
  std::size_t variants_per_example = 1;
  std::optional<Language> target_language;
  std::string backend;
};

/// One job per eligible example (and per variant). Error types are assigned
/// round-robin over eligible examples in input order. Ineligible examples are
/// skipped.
std::vector<SynthesisJob> plan_jobs(std::span<const Example> inputs, const BatchPlan& plan);

struct BatchResult {
  std::vector<Example> outputs;  // in job order
  std::vector<FailedJob> failures;
};

BatchResult run_batch(std::span<const SynthesisJob> jobs, llm::Backend& backend, const SynthesisOptions& options,
                      std::size_t workers);

json to_json(const FailedJob& f);
void write_failed_jobs(const std::filesystem::path& path, std::span<const FailedJob> failures);

/// Job file lines: {"id", "kind", "error_type"?, "target_language"?, "backend"?}.
/// Ids are resolved against `inputs`.
json job_to_json(const SynthesisJob& job);
std::vector<SynthesisJob> read_job_file(const std::filesystem::path& path, std::span<const Example> inputs);

}  // namespace groundcheck::synthesis
