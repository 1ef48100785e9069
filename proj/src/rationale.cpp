#include "groundcheck/rationale.hpp"

#include <fmt/format.h>

#include "groundcheck/judge.hpp"
#include "groundcheck/prompts.hpp"
#include "groundcheck/util.hpp"

namespace groundcheck::rationale {

std::string_view to_string(FilterDecision d) { return d == FilterDecision::Retain ? "retain" : "discard"; }

FilterOutcome consistency_filter(int gold, std::span<const RationaleSample> samples, double min_agreement_fraction) {
  FilterOutcome out;
  out.total = samples.size();
  const RationaleSample* first_match = nullptr;
  for (const auto& s : samples) {
    if (s.predicted_label != gold) continue;
    ++out.agreement;
    if (!first_match || s.sample_index < first_match->sample_index) first_match = &s;
  }
  const bool enough = out.total > 0 && static_cast<double>(out.agreement) >=
                                           min_agreement_fraction * static_cast<double>(out.total);
  if (first_match && enough) {
    out.decision = FilterDecision::Retain;
    out.retained_rationale = first_match->rationale;
    out.retained_index = first_match->sample_index;
  }
  return out;
}

std::vector<RationaleSample> sample_rationales(const Example& e, llm::Backend& backend, std::size_t k,
                                               int max_attempts) {
  if (!e.label) throw std::invalid_argument(fmt::format("example '{}' has no gold label", e.id));
  if (k == 0) throw std::invalid_argument("k must be positive");

  const auto prompt = prompts::render_generative(e);
  const auto messages = prompt.as_messages();

  std::vector<RationaleSample> samples;
  samples.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    std::string last_error;
    for (int attempt = 1; attempt <= max_attempts; ++attempt) {
      const auto tag = fmt::format("rationale/{}@{}/sample-{}/attempt-{}", prompt.template_id,
                                   prompt.template_version, i, attempt);
      const auto reply = backend.complete(messages, tag).text;
      try {
        auto parsed = judge::parse_verdict(reply);
        if (!parsed.rationale || util::trim(*parsed.rationale).empty()) {
          last_error = "verdict has no rationale";
          continue;
        }
        samples.push_back({std::move(*parsed.rationale), parsed.label, i});
        break;
      } catch (const judge::VerdictParseError& ex) {
        last_error = ex.what();
      }
    }
    if (samples.size() != i + 1) {
      throw RationaleError(fmt::format("example '{}': sample {} unparseable after {} attempts: {}", e.id, i,
                                       max_attempts, last_error));
    }
  }
  return samples;
}

RationalizeResult rationalize_dataset(std::span<const Example> examples, llm::Backend& backend,
                                      const RationaleOptions& options) {
  for (const auto& e : examples) {
    if (!e.label) throw std::invalid_argument(fmt::format("example '{}' has no gold label", e.id));
  }

  struct Slot {
    DecisionRecord record;
    std::optional<Example> retained;
  };
  std::vector<Slot> slots(examples.size());

  util::parallel_for(examples.size(), options.jobs, [&](std::size_t i) {
    const Example& e = examples[i];
    Slot& slot = slots[i];
    slot.record.id = e.id;
    slot.record.gold = *e.label;
    try {
      const auto samples = sample_rationales(e, backend, options.k, options.max_attempts);
      for (const auto& s : samples) slot.record.predicted_labels.push_back(s.predicted_label);
      const auto outcome = consistency_filter(*e.label, samples, options.min_agreement_fraction);
      slot.record.agreement = outcome.agreement;
      slot.record.total = outcome.total;
      slot.record.decision = std::string(to_string(outcome.decision));
      if (outcome.decision == FilterDecision::Retain) {
        Example kept = e;
        kept.rationale = outcome.retained_rationale;
        slot.retained = std::move(kept);
      }
    } catch (const RationaleError& ex) {
      slot.record.decision = "failed";
      slot.record.error = ex.what();
    } catch (const llm::ExhaustedRetriesError& ex) {
      slot.record.decision = "failed";
      slot.record.error = ex.what();
    }
  });

  RationalizeResult result;
  for (auto& slot : slots) {
    if (slot.retained) {
      result.retained.push_back(std::move(*slot.retained));
    } else if (slot.record.decision == "discard") {
      result.discarded.push_back(slot.record);
    } else {
      result.failed.push_back(slot.record);
    }
    result.report.push_back(std::move(slot.record));
  }
  return result;
}

json to_json(const DecisionRecord& r) {
  json j = {{"id", r.id},
            {"gold", r.gold},
            {"predicted_labels", r.predicted_labels},
            {"agreement", fmt::format("{}/{}", r.agreement, r.total)},
            {"decision", r.decision}};
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

void write_decision_report(const std::filesystem::path& path, std::span<const DecisionRecord> records) {
  std::string buffer;
  for (const auto& r : records) {
    buffer += to_json(r).dump();
    buffer += '\n';
  }
  util::atomic_write_file(path, buffer);
}

}  // namespace groundcheck::rationale
