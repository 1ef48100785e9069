#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "groundcheck/judge.hpp"
#include "groundcheck/schema.hpp"

namespace groundcheck::metrics {

/// Positive class is label 1 (supported).
struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  void add(int gold, int predicted);
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  bool operator==(const ConfusionCounts&) const = default;
};

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pairs are (gold, predicted); both must be 0 or 1.
ConfusionCounts confusion(std::span<const std::pair<int, int>> pairs);

double accuracy(const ConfusionCounts& c);

/// Mean of true-positive and true-negative rates. Throws MetricError when a
/// gold class is absent.
double balanced_accuracy(const ConfusionCounts& c);

double unweighted_mean(std::span<const double> values);

enum class MetricKind { Accuracy, BalancedAccuracy };

std::string_view to_string(MetricKind k);
MetricKind parse_metric_kind(std::string_view s);
double score(MetricKind kind, const ConfusionCounts& c);

/// One report column. Examples belong to it when their source equals `name`
/// or starts with `name + "/"`.
struct DatasetSpec {
  std::string name;
  std::string group;
  MetricKind metric = MetricKind::Accuracy;
  // Score each distinct source separately and average them, instead of
  // pooling all examples.
  bool mean_over_subsets = false;
};

struct Grouping {
  std::vector<DatasetSpec> datasets;

  /// NLI / QA / Dialog columns with balanced accuracy for LLMAggreFact.
  static Grouping standard_bench();
};

json to_json(const Grouping& g);
Grouping grouping_from_json(const json& j);

struct SubsetRow {
  std::string name;
  double value = 0.0;
  std::size_t n = 0;
  std::size_t failed_count = 0;
  ConfusionCounts counts;
};

struct DatasetRow {
  std::string name;
  std::string group;
  MetricKind metric = MetricKind::Accuracy;
  double value = 0.0;
  std::size_t n = 0;
  std::size_t failed_count = 0;
  ConfusionCounts counts;
  std::vector<SubsetRow> subsets;
};

struct MetricsReport {
  std::vector<DatasetRow> rows;
  // Group means in column order, then the overall mean under "Average".
  std::vector<std::pair<std::string, double>> averages;
  json metadata = json::object();

  const DatasetRow* find(std::string_view dataset) const;
  double average(std::string_view group) const;
};

/// Scores verdicts against gold labels. Failed or missing verdicts are
/// excluded from n and counted in failed_count. Averages are unweighted means
/// over datasets.
MetricsReport build_report(std::span<const judge::JudgeOutcome> verdicts, std::span<const Example> gold,
                           const Grouping& grouping, json metadata = json::object());

json to_json(const MetricsReport& r);

/// Fixed-width text table: a group header line, a dataset header line, and
/// one row for `model_name`, values x100 with one decimal.
std::string render_table(const MetricsReport& r, std::string_view model_name);

std::string format_percent(double value);

}  // namespace groundcheck::metrics
