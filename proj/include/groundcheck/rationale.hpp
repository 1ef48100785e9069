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

namespace groundcheck::rationale {

struct RationaleSample {
  std::string rationale;
  int predicted_label = 0;
  std::size_t sample_index = 0;
};

enum class FilterDecision { Retain, Discard };

std::string_view to_string(FilterDecision d);

struct FilterOutcome {
  FilterDecision decision = FilterDecision::Discard;
  std::optional<std::string> retained_rationale;  // iff Retain
  std::optional<std::size_t> retained_index;      // sample_index of the retained rationale
  std::size_t agreement = 0;                      // samples whose label equals gold
  std::size_t total = 0;
};

/// Discard when no sample agrees with gold (or the agreeing fraction is below
/// `min_agreement_fraction`). Otherwise retain the rationale of the agreeing
/// sample with the lowest sample_index. Gold is never relabeled.
FilterOutcome consistency_filter(int gold, std::span<const RationaleSample> samples,
                                 double min_agreement_fraction = 0.0);

class RationaleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Draws k (rationale, label) samples using the generative judging prompt.
/// Each sample gets up to `max_attempts` generations to parse; otherwise
/// RationaleError. Backend errors propagate.
std::vector<RationaleSample> sample_rationales(const Example& e, llm::Backend& backend, std::size_t k,
                                               int max_attempts = 3);

struct RationaleOptions {
  std::size_t k = 3;
  int max_attempts = 3;
  double min_agreement_fraction = 0.0;
  std::size_t jobs = 4;
};

struct DecisionRecord {
  std::string id;
  int gold = 0;
  std::vector<int> predicted_labels;
  std::size_t agreement = 0;
  std::size_t total = 0;
  std::string decision;  // "retain" | "discard" | "failed"
  std::string error;
};

struct RationalizeResult {
  std::vector<Example> retained;          // input order, rationale set
  std::vector<DecisionRecord> discarded;  // decision == "discard"
  std::vector<DecisionRecord> failed;     // decision == "failed"
  std::vector<DecisionRecord> report;     // one record per input, input order
};

/// Every input ends up in exactly one of retained / discarded / failed.
RationalizeResult rationalize_dataset(std::span<const Example> examples, llm::Backend& backend,
                                      const RationaleOptions& options);

json to_json(const DecisionRecord& r);
void write_decision_report(const std::filesystem::path& path, std::span<const DecisionRecord> records);

}  // namespace groundcheck::rationale
