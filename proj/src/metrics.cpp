#include "groundcheck/metrics.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <unordered_map>

#include <fmt/format.h>

namespace groundcheck::metrics {

namespace {

void require_binary(int v, const char* what) {
  if (v != 0 && v != 1) throw MetricError(fmt::format("{} label must be 0 or 1, got {}", what, v));
}

bool belongs_to(std::string_view source, std::string_view dataset) {
  if (source == dataset) return true;
  return source.size() > dataset.size() && source.substr(0, dataset.size()) == dataset &&
         source[dataset.size()] == '/';
}

std::string group_for_task(TaskFormat t) {
  switch (t) {
    case TaskFormat::Nli: return "NLI";
    case TaskFormat::Qa: return "QA";
    case TaskFormat::Dialogue: return "Dialog";
    case TaskFormat::Summarization: return "Summarization";
  }
  return "Other";
}

struct Tally {
  ConfusionCounts counts;
  std::size_t failed = 0;
  std::size_t size = 0;
};

std::string pad_left(std::string_view s, std::size_t w) {
  return s.size() >= w ? std::string(s) : std::string(w - s.size(), ' ') + std::string(s);
}

std::string pad_right(std::string_view s, std::size_t w) {
  return s.size() >= w ? std::string(s) : std::string(s) + std::string(w - s.size(), ' ');
}

}  // namespace

void ConfusionCounts::add(int gold, int predicted) {
  require_binary(gold, "gold");
  require_binary(predicted, "predicted");
  if (gold == 1) {
    (predicted == 1 ? tp : fn) += 1;
  } else {
    (predicted == 1 ? fp : tn) += 1;
  }
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  tn += o.tn;
  fn += o.fn;
  return *this;
}

ConfusionCounts confusion(std::span<const std::pair<int, int>> pairs) {
  ConfusionCounts c;
  for (const auto& [gold, predicted] : pairs) c.add(gold, predicted);
  return c;
}

double accuracy(const ConfusionCounts& c) {
  if (c.total() == 0) throw MetricError("accuracy is undefined on zero examples");
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

double balanced_accuracy(const ConfusionCounts& c) {
  const auto positives = c.tp + c.fn;
  const auto negatives = c.tn + c.fp;
  if (positives == 0 || negatives == 0) {
    throw MetricError(fmt::format("balanced accuracy needs both classes (positives={}, negatives={}); "
                                  "use plain accuracy for single-class data",
                                  positives, negatives));
  }
  const double tpr = static_cast<double>(c.tp) / static_cast<double>(positives);
  const double tnr = static_cast<double>(c.tn) / static_cast<double>(negatives);
  return (tpr + tnr) / 2.0;
}

double unweighted_mean(std::span<const double> values) {
  if (values.empty()) throw MetricError("mean of no values");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

std::string_view to_string(MetricKind k) {
  return k == MetricKind::Accuracy ? "accuracy" : "balanced_accuracy";
}

MetricKind parse_metric_kind(std::string_view s) {
  if (s == "accuracy") return MetricKind::Accuracy;
  if (s == "balanced_accuracy") return MetricKind::BalancedAccuracy;
  throw std::invalid_argument(fmt::format("unknown metric '{}'", s));
}

double score(MetricKind kind, const ConfusionCounts& c) {
  return kind == MetricKind::Accuracy ? accuracy(c) : balanced_accuracy(c);
}

Grouping Grouping::standard_bench() {
  return Grouping{{
      {"LLMAggreFact", "NLI", MetricKind::BalancedAccuracy, true},
      {"PubMedQA", "QA", MetricKind::Accuracy, false},
      {"FinanceBench", "QA", MetricKind::Accuracy, false},
      {"HaluEvalQA", "QA", MetricKind::Accuracy, false},
      {"HalluDial", "Dialog", MetricKind::Accuracy, false},
      {"HaluEval Dialog", "Dialog", MetricKind::Accuracy, false},
  }};
}

json to_json(const Grouping& g) {
  json arr = json::array();
  for (const auto& d : g.datasets) {
    arr.push_back({{"name", d.name},
                   {"group", d.group},
                   {"metric", to_string(d.metric)},
                   {"mean_over_subsets", d.mean_over_subsets}});
  }
  return {{"datasets", arr}};
}

Grouping grouping_from_json(const json& j) {
  Grouping g;
  const json& arr = j.is_array() ? j : j.at("datasets");
  for (const auto& d : arr) {
    DatasetSpec s;
    s.name = d.at("name").get<std::string>();
    s.group = d.value("group", std::string("Other"));
    s.metric = parse_metric_kind(d.value("metric", std::string("accuracy")));
    s.mean_over_subsets = d.value("mean_over_subsets", false);
    g.datasets.push_back(std::move(s));
  }
  return g;
}

const DatasetRow* MetricsReport::find(std::string_view dataset) const {
  for (const auto& r : rows) {
    if (r.name == dataset) return &r;
  }
  return nullptr;
}

double MetricsReport::average(std::string_view group) const {
  for (const auto& [g, v] : averages) {
    if (g == group) return v;
  }
  throw MetricError(fmt::format("report has no average for '{}'", group));
}

MetricsReport build_report(std::span<const judge::JudgeOutcome> verdicts, std::span<const Example> gold,
                           const Grouping& grouping, json metadata) {
  std::unordered_map<std::string, const Example*> by_id;
  for (const auto& e : gold) {
    if (!e.label) throw MetricError(fmt::format("gold example '{}' has no label", e.id));
    by_id.emplace(e.id, &e);
  }
  std::unordered_map<std::string, const judge::JudgeOutcome*> verdict_by_id;
  for (const auto& v : verdicts) {
    if (!by_id.contains(v.id)) throw MetricError(fmt::format("verdict '{}' has no matching gold example", v.id));
    verdict_by_id[v.id] = &v;
  }

  // Column assignment: configured datasets first, then unmatched sources in
  // first-seen order.
  std::vector<DatasetSpec> specs = grouping.datasets;
  auto spec_for = [&](const Example& e) -> std::size_t {
    for (std::size_t i = 0; i < specs.size(); ++i) {
      if (belongs_to(e.source, specs[i].name)) return i;
    }
    specs.push_back({e.source, group_for_task(e.task), MetricKind::Accuracy, false});
    return specs.size() - 1;
  };

  std::vector<std::map<std::string, Tally>> per_source;  // spec index -> source -> tally
  for (const auto& e : gold) {
    const auto idx = spec_for(e);
    if (per_source.size() < specs.size()) per_source.resize(specs.size());
    Tally& t = per_source[idx][e.source];
    ++t.size;
    auto it = verdict_by_id.find(e.id);
    if (it == verdict_by_id.end() || !it->second->ok()) {
      ++t.failed;
      continue;
    }
    t.counts.add(*e.label, it->second->verdict->label);
  }
  per_source.resize(specs.size());

  MetricsReport report;
  report.metadata = std::move(metadata);
  report.metadata["average"] = "unweighted mean over datasets";
  report.metadata["failed_verdicts"] = "excluded from n, counted in failed_count";

  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (per_source[i].empty()) continue;
    const DatasetSpec& spec = specs[i];
    DatasetRow row{spec.name, spec.group, spec.metric, 0.0, 0, 0, {}, {}};
    for (const auto& [source, tally] : per_source[i]) {
      row.counts += tally.counts;
      row.n += tally.counts.total();
      row.failed_count += tally.failed;
      if (spec.mean_over_subsets) {
        if (tally.counts.total() == 0) {
          throw MetricError(fmt::format("subset '{}' has no scored examples after failures", source));
        }
        row.subsets.push_back(
            {source, score(spec.metric, tally.counts), tally.counts.total(), tally.failed, tally.counts});
      }
    }
    if (row.n == 0) {
      throw MetricError(fmt::format("dataset '{}' has no scored examples after failures", spec.name));
    }
    if (spec.mean_over_subsets) {
      std::vector<double> values;
      for (const auto& s : row.subsets) values.push_back(s.value);
      row.value = unweighted_mean(values);
    } else {
      row.value = score(spec.metric, row.counts);
    }
    report.rows.push_back(std::move(row));
  }

  std::vector<std::string> group_order;
  for (const auto& r : report.rows) {
    if (std::find(group_order.begin(), group_order.end(), r.group) == group_order.end()) {
      group_order.push_back(r.group);
    }
  }
  for (const auto& g : group_order) {
    std::vector<double> values;
    for (const auto& r : report.rows) {
      if (r.group == g) values.push_back(r.value);
    }
    report.averages.emplace_back(g, unweighted_mean(values));
  }
  if (!report.rows.empty()) {
    std::vector<double> all;
    for (const auto& r : report.rows) all.push_back(r.value);
    report.averages.emplace_back("Average", unweighted_mean(all));
  }
  return report;
}

namespace {

json counts_json(const ConfusionCounts& c) {
  return {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
}

}  // namespace

json to_json(const MetricsReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    json j = {{"dataset", row.name},      {"group", row.group}, {"metric", to_string(row.metric)},
              {"value", row.value},       {"n", row.n},         {"failed_count", row.failed_count},
              {"counts", counts_json(row.counts)}};
    if (!row.subsets.empty()) {
      json subs = json::array();
      for (const auto& s : row.subsets) {
        subs.push_back({{"dataset", s.name},
                        {"value", s.value},
                        {"n", s.n},
                        {"failed_count", s.failed_count},
                        {"counts", counts_json(s.counts)}});
      }
      j["subsets"] = std::move(subs);
    }
    rows.push_back(std::move(j));
  }
  json averages = json::array();
  for (const auto& [g, v] : r.averages) averages.push_back({{"group", g}, {"value", v}});
  return {{"per_dataset", rows}, {"averages", averages}, {"metadata", r.metadata}};
}

std::string format_percent(double value) { return fmt::format("{:.1f}", value * 100.0); }

std::string render_table(const MetricsReport& r, std::string_view model_name) {
  struct Column {
    std::string group;
    std::string header;
    std::string cell;
    std::size_t width;
  };
  std::vector<Column> cols;
  for (const auto& row : r.rows) {
    const auto cell = format_percent(row.value);
    cols.push_back({row.group, row.name, cell, std::max(row.name.size(), cell.size())});
  }

  std::string avg_cell = "-";
  for (const auto& [g, v] : r.averages) {
    if (g == "Average") avg_cell = format_percent(v);
  }
  const std::size_t model_w = std::max<std::size_t>(model_name.size(), 5);
  const std::size_t avg_w = std::max<std::size_t>(7, avg_cell.size());

  std::string group_line = pad_right("Model", model_w);
  std::string header_line = std::string(model_w, ' ');
  std::string rule = std::string(model_w, '-');
  std::string value_line = pad_right(model_name, model_w);

  for (std::size_t i = 0; i < cols.size();) {
    std::size_t j = i;
    std::size_t span_w = 0;
    while (j < cols.size() && cols[j].group == cols[i].group) {
      span_w += cols[j].width + (j > i ? 3 : 0);
      ++j;
    }
    group_line += " | " + pad_right(cols[i].group, span_w);
    for (std::size_t k = i; k < j; ++k) {
      header_line += " | " + pad_right(cols[k].header, cols[k].width);
      rule += "-+-" + std::string(cols[k].width, '-');
      value_line += " | " + pad_left(cols[k].cell, cols[k].width);
    }
    i = j;
  }
  group_line += " | " + pad_right("Average", avg_w);
  header_line += " | " + std::string(avg_w, ' ');
  rule += "-+-" + std::string(avg_w, '-');
  value_line += " | " + pad_left(avg_cell, avg_w);

  auto rstrip = [](std::string s) {
    while (!s.empty() && s.back() == ' ') s.pop_back();
    return s;
  };
  std::string out = rstrip(group_line) + "\n" + rstrip(header_line) + "\n" + rule + "\n" + value_line + "\n";

  // Per-subset breakdown for columns averaged over subsets.
  for (const auto& row : r.rows) {
    if (row.subsets.empty()) continue;
    out += "\n" + row.name + " (" + std::string(to_string(row.metric)) + ")\n";
    std::string head = pad_right("Model", model_w);
    std::string line = pad_right(model_name, model_w);
    std::string sub_rule = std::string(model_w, '-');
    for (const auto& s : row.subsets) {
      std::string label = s.name.substr(row.name.size() + (s.name.size() > row.name.size() ? 1 : 0));
      if (label.empty()) label = s.name;
      const auto cell = format_percent(s.value);
      const auto w = std::max(label.size(), cell.size());
      head += " | " + pad_right(label, w);
      sub_rule += "-+-" + std::string(w, '-');
      line += " | " + pad_left(cell, w);
    }
    const auto cell = format_percent(row.value);
    head += " | " + pad_right("Average", avg_w);
    sub_rule += "-+-" + std::string(avg_w, '-');
    line += " | " + pad_left(cell, avg_w);
    out += rstrip(head) + "\n" + sub_rule + "\n" + line + "\n";
  }
  return out;
}

}  // namespace groundcheck::metrics
