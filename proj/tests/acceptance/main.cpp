// One line per acceptance criterion: PASS / FAIL / SKIP, with wall time.
// Exit status is nonzero iff some criterion failed.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include <fmt/format.h>

#include "groundcheck/cli.hpp"
#include "groundcheck/ingest.hpp"
#include "groundcheck/judge.hpp"
#include "groundcheck/metrics.hpp"
#include "groundcheck/rationale.hpp"
#include "groundcheck/synthesis.hpp"
#include "groundcheck/util.hpp"
#include "support.hpp"

using namespace gc_test;
using llm::FailureKind;
using llm::MockBackend;
using llm::MockStep;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct Skipped : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename... Args>
void check(bool ok, fmt::format_string<Args...> f, Args&&... args) {
  if (!ok) throw Failure(fmt::format(f, std::forward<Args>(args)...));
}

// ---- 1. template goldens

void goldens() {
  const auto xs = bench24();
  const std::pair<const char*, const char*> cases[] = {
      {"nli", "fx-nli-1"}, {"qa", "fx-qa-1"}, {"dialogue", "fx-dlg-1"}, {"summarization", "fx-sum-1"}};
  int n = 0;
  for (const auto& [task, id] : cases) {
    const auto& e = by_id(xs, id);
    const auto cls = prompts::render_classifier(e);
    check(cls.flat_text.has_value(), "classifier/{} has no flat text", task);
    check(*cls.flat_text == util::read_file(golden(fmt::format("classifier_{}.txt", task))), "classifier/{} differs",
          task);
    const auto gen = prompts::render_generative(e);
    check(gen.messages.has_value() && gen.messages->size() == 1, "generative/{} is not one message", task);
    check(gen.messages->front().content == util::read_file(golden(fmt::format("generative_{}.txt", task))),
          "generative/{} differs", task);
    n += 2;
  }
  check(n == 8, "expected 8 goldens, got {}", n);
}

// ---- 2. metric oracle

void metric_oracle() {
  std::mt19937_64 rng(20240611);
  for (int round = 0; round < 1000; ++round) {
    std::vector<std::pair<int, int>> pairs(std::uniform_int_distribution<int>(2, 400)(rng));
    for (auto& [g, p] : pairs) {
      g = static_cast<int>(rng() & 1);
      p = static_cast<int>(rng() & 1);
    }
    // Make sure both gold classes exist so balanced accuracy is defined.
    pairs[0].first = 1;
    pairs[1].first = 0;

    double correct = 0, pos = 0, neg = 0, pos_hit = 0, neg_hit = 0;
    for (const auto& [g, p] : pairs) {
      correct += g == p;
      if (g == 1) {
        ++pos;
        pos_hit += p == 1;
      } else {
        ++neg;
        neg_hit += p == 0;
      }
    }
    const double acc = correct / static_cast<double>(pairs.size());
    const double bal = (pos_hit / pos + neg_hit / neg) / 2.0;
    const auto c = metrics::confusion(pairs);
    check(std::abs(metrics::accuracy(c) - acc) <= 1e-12, "round {}: accuracy {} vs {}", round, metrics::accuracy(c),
          acc);
    check(std::abs(metrics::balanced_accuracy(c) - bal) <= 1e-12, "round {}: balanced {} vs {}", round,
          metrics::balanced_accuracy(c), bal);

    // Class-balanced variant: equal positives and negatives.
    const std::size_t half = std::uniform_int_distribution<std::size_t>(1, 200)(rng);
    std::vector<std::pair<int, int>> balanced;
    for (std::size_t i = 0; i < 2 * half; ++i) balanced.emplace_back(i < half ? 1 : 0, static_cast<int>(rng() & 1));
    const auto cb = metrics::confusion(balanced);
    check(std::abs(metrics::balanced_accuracy(cb) - metrics::accuracy(cb)) <= 1e-12,
          "round {}: balanced fixture disagrees", round);
  }
}

// ---- 3. consistency filter, exhaustive

void consistency_filter_suite() {
  bool saw_all_disagree = false;
  for (int gold = 0; gold <= 1; ++gold) {
    for (int mask = 0; mask < 8; ++mask) {
      std::vector<rationale::RationaleSample> s;
      for (std::size_t i = 0; i < 3; ++i) {
        s.push_back({fmt::format("why-{}", i), (mask >> i) & 1, i});
      }
      std::optional<std::size_t> first;
      for (std::size_t i = 0; i < 3 && !first; ++i) {
        if (s[i].predicted_label == gold) first = i;
      }
      const auto o = rationale::consistency_filter(gold, s);
      if (!first) {
        saw_all_disagree = true;
        check(o.decision == rationale::FilterDecision::Discard, "gold {} mask {}: expected discard", gold, mask);
        check(!o.retained_rationale && !o.retained_index, "gold {} mask {}: discard kept a rationale", gold, mask);
      } else {
        check(o.decision == rationale::FilterDecision::Retain, "gold {} mask {}: expected retain", gold, mask);
        check(o.retained_index == *first, "gold {} mask {}: kept sample {} not {}", gold, mask,
              o.retained_index.value_or(99), *first);
        check(o.retained_rationale == fmt::format("why-{}", *first), "gold {} mask {}: wrong rationale", gold, mask);
      }
    }
  }
  check(saw_all_disagree, "all-disagree case never enumerated");

  // Gold disagrees with every sample: discarded, never relabeled.
  const std::vector<rationale::RationaleSample> all_one{{"a", 1, 0}, {"b", 1, 1}, {"c", 1, 2}};
  const auto o = rationale::consistency_filter(0, all_one);
  check(o.decision == rationale::FilterDecision::Discard && o.agreement == 0, "unanimous disagreement retained");
}

// ---- 4. chunking

std::string random_document(std::mt19937_64& rng, std::size_t len) {
  static const std::vector<std::string> pieces{"a", "b", " ", "word ", ".", "\n", "\n\n", "é", "€", "𝄞", "Zürich "};
  std::string d;
  std::uniform_int_distribution<std::size_t> pick(0, pieces.size() - 1);
  while (d.size() < len) d += pieces[pick(rng)];
  // Trim back to a code point boundary at or under len.
  while (d.size() > len) d.pop_back();
  while (!d.empty() && (static_cast<unsigned char>(d.back()) & 0xC0) == 0x80) d.pop_back();
  if (!d.empty() && (static_cast<unsigned char>(d.back()) & 0x80)) d.pop_back();
  if (d.empty()) d = "x";
  return d;
}

void chunking_suite() {
  std::mt19937_64 rng(99);
  std::size_t judged = 0;
  for (int round = 0; round < 200; ++round) {
    const auto len = static_cast<std::size_t>(std::exp(std::uniform_real_distribution<double>(0, std::log(100000.0))(rng)));
    const auto doc = random_document(rng, std::max<std::size_t>(len, 1));
    judge::ChunkingPolicy policy;
    policy.max_chars = static_cast<std::size_t>(std::exp(std::uniform_real_distribution<double>(std::log(16.0), std::log(40000.0))(rng)));
    policy.overlap_chars = std::uniform_int_distribution<std::size_t>(0, policy.max_chars / 2)(rng);

    const auto chunks = judge::chunk_document(doc, policy);
    check(!chunks.empty(), "round {}: no chunks", round);
    check(chunks.front().offset == 0, "round {}: first chunk offset", round);
    std::string rebuilt;
    std::size_t covered = 0;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      const auto& c = chunks[i];
      check(c.text.size() <= policy.max_chars, "round {}: chunk {} too long", round, i);
      check(doc.compare(c.offset, c.text.size(), c.text) == 0, "round {}: chunk {} text/offset mismatch", round, i);
      check(c.offset <= covered, "round {}: gap before chunk {}", round, i);
      check(covered - c.offset <= policy.overlap_chars, "round {}: chunk {} overlaps too much", round, i);
      check(c.offset + c.text.size() > covered, "round {}: chunk {} adds nothing", round, i);
      rebuilt += c.text.substr(covered - c.offset);
      covered = c.offset + c.text.size();
    }
    check(rebuilt == doc, "round {}: reassembly differs (len {}, policy {}/{})", round, doc.size(),
          policy.max_chars, policy.overlap_chars);

    // Scripted per-chunk labels through the real judge path; bound the call
    // count so the suite stays fast.
    if (chunks.size() > 300) continue;
    std::vector<int> labels(chunks.size());
    const int style = round % 3;  // all zero, all one, random
    for (auto& l : labels) l = style == 2 ? static_cast<int>(rng() & 1) : style;
    std::vector<MockStep> steps;
    for (int l : labels) steps.push_back(MockStep::respond(verdict_json(l, fmt::format("label {}", l))));
    auto mock = std::make_shared<MockBackend>(std::move(steps));
    auto backend = make_backend(mock);
    Example e = by_id(bench24(), "fx-nli-1");
    e.document = doc;
    const auto out = judge::judge_example(e, backend, prompts::PromptKind::GenerativeChat, policy);
    check(out.ok(), "round {}: judging failed: {}", round, out.error);
    const int brute = *std::max_element(labels.begin(), labels.end());
    check(out.verdict->label == brute, "round {}: aggregate {} vs max {}", round, out.verdict->label, brute);
    check(mock->call_count() == chunks.size(), "round {}: {} calls for {} chunks", round, mock->call_count(),
          chunks.size());
    if (chunks.size() > 1) {
      check(out.verdict->chunk_verdicts && out.verdict->chunk_verdicts->size() == chunks.size(),
            "round {}: chunk verdicts missing", round);
    }
    ++judged;
  }
  check(judged >= 100, "only {} documents went through the judge", judged);
}

// ---- 5. end-to-end mock run

void end_to_end() {
  const auto xs = bench24();
  std::map<std::string, int> predicted;
  for (const auto& e : xs) predicted[e.id] = *e.label;
  // ClaimVerify gold 1,0,1,0 -> predict 1,0,0,0
  predicted["fx-nli-3"] = 0;
  // CNN gold 1,0,1,0 -> 1,1,1,0; XSum gold 1,0 -> 1,1
  predicted["fx-sum-2"] = 1;
  predicted["fx-sum-6"] = 1;
  // FinanceBench 1/2, HalluDial 2/3, HaluEval Dialog 2/3
  predicted["fx-qa-3"] = 0;
  predicted["fx-dlg-2"] = 1;
  predicted["fx-dlg-5"] = 0;

  auto mock = std::make_shared<MockBackend>(scripted_judge(xs, predicted));
  auto backend = make_backend(mock);
  const auto verdicts = judge::judge_all(xs, backend, {});
  const auto report = metrics::build_report(verdicts, xs, metrics::Grouping::standard_bench());

  auto cell = [&](const char* name) {
    const auto* row = report.find(name);
    if (!row) throw Failure(fmt::format("no row {}", name));
    return row->value;
  };
  auto expect = [&](const char* what, double got, double want) {
    check(std::abs(got - want) <= 1e-12, "{}: {} vs {}", what, got, want);
  };
  const auto* agg = report.find("LLMAggreFact");
  check(agg && agg->subsets.size() == 4, "LLMAggreFact subsets");
  std::map<std::string, double> sub;
  for (const auto& s : agg->subsets) sub[s.name] = s.value;
  expect("ClaimVerify", sub.at("LLMAggreFact/ClaimVerify"), 0.75);
  expect("Wice", sub.at("LLMAggreFact/Wice"), 1.0);
  expect("AggreFact-CNN", sub.at("LLMAggreFact/AggreFact-CNN"), 0.75);
  expect("AggreFact-XSum", sub.at("LLMAggreFact/AggreFact-XSum"), 0.5);
  expect("LLMAggreFact", cell("LLMAggreFact"), 0.75);
  expect("PubMedQA", cell("PubMedQA"), 1.0);
  expect("FinanceBench", cell("FinanceBench"), 0.5);
  expect("HaluEvalQA", cell("HaluEvalQA"), 1.0);
  expect("HalluDial", cell("HalluDial"), 2.0 / 3.0);
  expect("HaluEval Dialog", cell("HaluEval Dialog"), 2.0 / 3.0);

  metrics::ConfusionCounts pooled;
  for (const auto& r : report.rows) {
    if (r.metric == metrics::MetricKind::Accuracy) pooled += r.counts;
  }
  check(pooled.total() == 12 && pooled.tp + pooled.tn == 9, "accuracy datasets: {} of {} correct",
        pooled.tp + pooled.tn, pooled.total());
  expect("pooled accuracy", metrics::accuracy(pooled), 0.75);

  expect("NLI", report.average("NLI"), 0.75);
  expect("QA", report.average("QA"), (1.0 + 0.5 + 1.0) / 3.0);
  expect("Dialog", report.average("Dialog"), 2.0 / 3.0);
  expect("Average", report.average("Average"), (0.75 + 1.0 + 0.5 + 1.0 + 2.0 / 3.0 + 2.0 / 3.0) / 6.0);

  const auto table = metrics::render_table(report, "mock-judge");
  std::vector<std::string> lines;
  std::istringstream in(table);
  for (std::string l; std::getline(in, l) && !l.empty();) lines.push_back(l);
  check(lines.size() == 4, "main table block has {} lines", lines.size());
  check(table.find("\nLLMAggreFact (balanced_accuracy)\n") != std::string::npos, "no subset breakdown");
  for (const char* g : {"NLI", "QA", "Dialog", "Average"}) {
    check(lines[0].find(g) != std::string::npos, "group header lacks {}", g);
  }
  for (const char* d : {"LLMAggreFact", "PubMedQA", "FinanceBench", "HaluEvalQA", "HalluDial", "HaluEval Dialog"}) {
    check(lines[1].find(d) != std::string::npos, "dataset header lacks {}", d);
  }
  check(lines[3].rfind("mock-judge", 0) == 0, "value row does not start with the model name");
  for (const char* v : {"75.0", "100.0", "50.0", "66.7", "76.4"}) {
    check(lines[3].find(v) != std::string::npos, "value row lacks {}", v);
  }
  check(mock->call_count() == 24, "{} judge calls", mock->call_count());
}

// ---- 6. synthesis contracts

std::string normalize(std::string s) {
  std::string out;
  for (char c : s) {
    if (!std::isspace(static_cast<unsigned char>(c))) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

void synthesis_contracts() {
  const auto xs = bench24();
  std::mt19937_64 rng(6);
  std::mutex mu;
  // Half the time the "rewrite" is the original content.
  auto flaky = [&](const std::string& changed) {
    return [&, changed](std::span<const llm::Message> m) {
      std::lock_guard lock(mu);
      if (rng() % 2 == 0) {
        for (const auto& e : xs) {
          const auto& content = e.assessed_turn().content;
          if (m.back().content.find(content) != std::string::npos) return MockStep::respond(content);
        }
      }
      return MockStep::respond(changed);
    };
  };

  std::set<HallucinationErrorType> types_seen;
  std::size_t outputs = 0, failures = 0;
  for (const auto type : kAllErrorTypes) {
    for (const auto& e : xs) {
      if (e.task != TaskFormat::Qa) continue;
      if (e.label != 1) {
        auto backend = make_backend(std::make_shared<MockBackend>(flaky("unused")));
        bool rejected = false;
        try {
          synthesis::hallucinate_answer(e, type, backend);
        } catch (const synthesis::PreconditionError&) {
          rejected = true;
        }
        check(rejected, "{}: label-0 input was perturbed", e.id);
        continue;
      }
      auto backend = make_backend(std::make_shared<MockBackend>(flaky("A fabricated answer.")));
      const auto r = synthesis::hallucinate_answer(e, type, backend);
      check(r.output.has_value() != r.failure.has_value(), "{}: not exactly one of output/failure", e.id);
      if (r.output) {
        check(r.output->label == 0, "{}: label {}", e.id, *r.output->label);
        check(normalize(r.output->assessed_turn().content) != normalize(e.assessed_turn().content),
              "{}: text unchanged", e.id);
        check(r.output->hallucination_type == type, "{}: error type not recorded", e.id);
        check(validate_example(*r.output).empty(), "{}: invalid output", e.id);
        types_seen.insert(type);
        ++outputs;
      } else {
        check(r.failure->attempts >= 1 && r.failure->error_type == type, "{}: bad failure record", e.id);
        ++failures;
      }
    }
  }
  check(types_seen.size() == 6, "only {} error types produced output", types_seen.size());

  for (const auto& e : xs) {
    if (e.task != TaskFormat::Summarization || e.label != 1) continue;
    auto backend = make_backend(std::make_shared<MockBackend>(flaky("The article claims the opposite.")));
    const auto r = synthesis::unfaithful_summary(e, backend);
    check(r.output.has_value() != r.failure.has_value(), "{}: not exactly one of output/failure", e.id);
    if (r.output) {
      check(r.output->label == 0, "{}: summary label", e.id);
      check(normalize(r.output->assessed_turn().content) != normalize(e.assessed_turn().content),
            "{}: summary unchanged", e.id);
      check(validate_example(*r.output).empty(), "{}: invalid summary", e.id);
    }
  }

  for (const auto& e : xs) {
    if (e.task != TaskFormat::Qa) continue;
    auto backend = make_backend(std::make_shared<MockBackend>(std::vector<MockStep>{MockStep::respond(
        R"([{"role":"user","content":"Quick question."},{"role":"assistant","content":"Go ahead."},)"
        R"({"role":"user","content":"The actual question?"},{"role":"assistant","content":"The answer."}])")}));
    const auto r = synthesis::qa_to_dialogue(e, backend);
    check(r.output.has_value(), "{}: dialogue failed", e.id);
    check(r.output->task == TaskFormat::Dialogue && r.output->label == e.label, "{}: dialogue task/label", e.id);
    const auto& conv = r.output->conversation;
    for (std::size_t i = 0; i < conv.size(); ++i) {
      check(conv[i].role == (i % 2 == 0 ? Role::User : Role::Assistant), "{}: turn {} out of order", e.id, i);
    }
    check(validate_example(*r.output).empty(), "{}: invalid dialogue", e.id);
  }

  for (const auto& e : xs) {
    json turns = json::array();
    for (std::size_t i = 0; i < e.conversation.size(); ++i) turns.push_back(fmt::format("turno {}", i));
    const json good{{"document", "documento traducido"}, {"turns", turns}};
    json short_turns = turns;
    short_turns.push_back("extra");
    const json bad{{"document", "documento"}, {"turns", short_turns}};
    auto backend = make_backend(std::make_shared<MockBackend>(
        std::vector<MockStep>{MockStep::respond(bad.dump()), MockStep::respond(good.dump())}));
    const auto r = synthesis::translate(e, Language::Es, backend);
    check(r.output.has_value(), "{}: translate failed", e.id);
    check(r.output->conversation.size() == e.conversation.size(), "{}: turn count changed", e.id);
    check(r.output->label == e.label && r.output->task == e.task, "{}: translate changed label/task", e.id);
    check(validate_example(*r.output).empty(), "{}: invalid translation", e.id);
  }
  check(outputs > 0 && failures > 0, "flaky backend did not exercise both paths ({} / {})", outputs, failures);
}

// ---- 7. assembly determinism

void write_nli_source(const fs::path& path, std::size_t n) {
  std::string text;
  text.reserve(n * 64);
  for (std::size_t i = 0; i < n; ++i) {
    text += json{{"premise", fmt::format("p{}", i)}, {"hypothesis", fmt::format("h{}", i)}, {"label", i % 2}}.dump();
    text += '\n';
  }
  util::atomic_write_file(path, text);
}

std::set<std::string> ids_of(const std::vector<Example>& xs) {
  std::set<std::string> s;
  for (const auto& e : xs) s.insert(e.id);
  return s;
}

void assembly_determinism() {
  TempDir dir;
  write_nli_source(dir / "halludial.jsonl", 50'000);
  auto manifest = [&](std::uint64_t seed) {
    ingest::DatasetManifest m;
    m.name = "HalluDial";
    m.path = dir / "halludial.jsonl";
    m.adapter = ingest::Adapter::NliTriple;
    m.split = "train";
    m.sample = ingest::SampleRule{10'000, seed};
    return std::vector<ingest::DatasetManifest>{m};
  };
  const auto a = ingest::assemble_bench(manifest(7));
  const auto b = ingest::assemble_bench(manifest(7));
  const auto c = ingest::assemble_bench(manifest(8));
  check(a.examples.size() == 10'000, "yielded {}", a.examples.size());
  check(ids_of(a.examples).size() == 10'000, "duplicate ids");
  check(ids_of(a.examples) == ids_of(b.examples), "same seed, different sets");
  check(ids_of(a.examples) != ids_of(c.examples), "different seed, same set");
  const auto& r = a.report.entries.at(0);
  check(r.requested == 10'000 && r.available == 50'000 && r.yielded == 10'000 && r.status == "ok",
        "HalluDial entry {}/{}/{}", r.requested, r.available, r.yielded);
  check(json(to_json(a.report))["sampling_algorithm"] == std::string(ingest::kSamplingAlgorithm),
        "algorithm not recorded");

  // Full standard bench: six complete sources plus two proprietary splits.
  struct Row {
    const char* name;
    std::size_t source_n;
    std::optional<std::size_t> sample;
  };
  const Row rows[] = {{"LLMAggreFact", 29'320, {}}, {"HaluEvalQA", 20'000, {}}, {"HaluEval Dialog", 20'000, {}},
                      {"HalluDial", 50'000, 10'000}, {"PubMedQA", 1'000, {}},    {"FinanceBench", 1'000, {}}};
  std::vector<ingest::DatasetManifest> ms;
  for (const auto& row : rows) {
    ingest::DatasetManifest m;
    m.name = row.name;
    m.path = dir / (std::string(row.name) + ".jsonl");
    if (!fs::exists(m.path)) write_nli_source(m.path, row.source_n);
    m.adapter = ingest::Adapter::NliTriple;
    if (row.sample) m.sample = ingest::SampleRule{*row.sample, 7};
    ms.push_back(m);
  }
  for (auto [name, n] : {std::pair{"Real Estate QA", std::size_t{108}}, std::pair{"Persona Chatbot Dialog", std::size_t{92}}}) {
    ingest::DatasetManifest m;
    m.name = name;
    m.skip_reason = "proprietary";
    m.expected_count = n;
    ms.push_back(m);
  }
  const auto bench = ingest::assemble_bench(ms);
  const auto& rep = bench.report;
  std::size_t req = 0, yielded = 0, skipped = 0;
  for (const auto& e : rep.entries) {
    req += e.requested;
    yielded += e.yielded;
    if (e.status == "skipped") {
      ++skipped;
      check(e.yielded == 0, "{}: skipped entry yielded rows", e.name);
    } else {
      check(e.yielded == std::min(e.requested, e.available - e.excluded) || e.yielded == e.requested,
            "{}: yielded {} of {}", e.name, e.yielded, e.requested);
    }
  }
  check(rep.requested_total() == req && rep.yielded_total() == yielded, "totals do not add up");
  check(rep.requested_total() == 81'520, "requested total {}", rep.requested_total());
  check(rep.yielded_total() == 81'320, "yielded total {}", rep.yielded_total());
  check(bench.examples.size() == rep.yielded_total(), "{} examples vs yielded {}", bench.examples.size(),
        rep.yielded_total());
  check(skipped == 2, "{} skipped entries", skipped);
}

// ---- 8. backend robustness

void backend_robustness() {
  // Throttle, timeout, then success: three attempts, two sleeps.
  {
    auto mock = std::make_shared<MockBackend>(std::vector<MockStep>{
        MockStep::fail(FailureKind::Throttle), MockStep::fail(FailureKind::Timeout), MockStep::respond("ok")});
    std::vector<std::chrono::milliseconds> sleeps;
    llm::Client client(mock_profile("m", 4, 3), mock, [&](auto d) { sleeps.push_back(d); });
    const llm::Message msg{"user", "hi"};
    const auto c = client.complete(std::span(&msg, 1));
    check(c.text == "ok" && c.usage.attempts == 3, "recovered completion: '{}' after {}", c.text, c.usage.attempts);
    check(sleeps.size() == 2, "{} sleeps", sleeps.size());
  }
  // Budget exhausted: exactly max_attempts calls, then ExhaustedRetriesError.
  for (int budget : {1, 2, 5}) {
    auto mock = std::make_shared<MockBackend>(
        [](std::span<const llm::Message>) { return MockStep::fail(FailureKind::Throttle); });
    llm::Client client(mock_profile("m", 4, budget), mock, no_sleep);
    const llm::Message msg{"user", "hi"};
    bool threw = false;
    try {
      client.complete(std::span(&msg, 1));
    } catch (const llm::ExhaustedRetriesError& e) {
      threw = e.attempts() == budget;
    }
    check(threw, "budget {}: no ExhaustedRetriesError with matching attempts", budget);
    check(mock->call_count() == static_cast<std::size_t>(budget), "budget {}: {} calls", budget, mock->call_count());
  }
  // Permanent errors are not retried.
  {
    auto mock = std::make_shared<MockBackend>(std::vector<MockStep>{MockStep::fail(FailureKind::Auth)});
    llm::Client client(mock_profile("m", 4, 5), mock, no_sleep);
    const llm::Message msg{"user", "hi"};
    bool threw = false;
    try {
      client.complete(std::span(&msg, 1));
    } catch (const llm::PermanentBackendError&) {
      threw = true;
    }
    check(threw && mock->call_count() == 1, "auth failure retried");
  }
  // In-flight bound from mock timestamps.
  for (int limit : {1, 3}) {
    auto mock = std::make_shared<MockBackend>([](std::span<const llm::Message>) {
      return MockStep::respond("x", std::chrono::milliseconds(15));
    });
    llm::Client client(mock_profile("m", limit), mock, no_sleep);
    std::vector<std::thread> threads;
    for (int i = 0; i < 16; ++i) {
      threads.emplace_back([&] {
        const llm::Message msg{"user", "hi"};
        client.complete(std::span(&msg, 1));
      });
    }
    for (auto& t : threads) t.join();
    const auto log = mock->requests();
    const auto overlap = llm::max_overlap(log);
    check(overlap <= static_cast<std::size_t>(limit), "limit {}: {} in flight", limit, overlap);
    check(overlap >= 1 && log.size() == 16, "limit {}: {} requests logged", limit, log.size());
  }
  // Single-flight cache.
  {
    TempDir dir;
    auto mock = std::make_shared<MockBackend>([](std::span<const llm::Message>) {
      return MockStep::respond(verdict_json(1), std::chrono::milliseconds(50));
    });
    auto cache = std::make_shared<llm::ResponseCache>(dir.path());
    auto backend = make_backend(mock, mock_profile("m", 8), cache);
    std::atomic<int> hits{0}, same{0};
    std::vector<std::thread> threads;
    for (int i = 0; i < 100; ++i) {
      threads.emplace_back([&] {
        const llm::Message msg{"user", "identical"};
        const auto r = backend.complete(std::span(&msg, 1), "tag");
        hits += r.hit;
        same += r.text == verdict_json(1);
      });
    }
    for (auto& t : threads) t.join();
    check(mock->call_count() == 1, "{} backend calls for 100 identical requests", mock->call_count());
    check(same == 100, "{} callers got the shared text", same.load());
  }
}

// ---- 9. live smoke

void live_smoke() {
  const char* base = std::getenv("GROUNDCHECK_LIVE_BASE_URL");
  const char* model = std::getenv("GROUNDCHECK_LIVE_MODEL");
  if (!base || !model || !*base || !*model) {
    throw Skipped("GROUNDCHECK_LIVE_BASE_URL / GROUNDCHECK_LIVE_MODEL not set");
  }
  TempDir dir;
  // The key, if any, comes from LIVE_API_KEY via the profile name.
  const json cfg{{"backends",
                  {{"live",
                    {{"base_address", base},
                     {"model", model},
                     {"max_in_flight", 4},
                     {"timeout_ms", 60'000},
                     {"retry", {{"max_attempts", 3}, {"base_backoff_ms", 1000}}}}}}},
                 {"output_dir", (dir / "out").string()}};
  util::atomic_write_file(dir / "run.json", cfg.dump());
  std::ostringstream out, err;
  cli::Environment env;
  env.out = &out;
  env.err = &err;
  const int code = cli::run({"--config", (dir / "run.json").string(), "eval", "--judge", "live", "--in",
                             fixture("bench24.records").string(), "--out-dir", (dir / "eval").string()},
                            env);
  check(fs::exists(dir / "eval" / "verdicts.jsonl"), "no verdicts written (exit {}): {}", code, err.str());
  std::size_t parsed = 0;
  for (const auto& o : judge::read_verdicts(dir / "eval" / "verdicts.jsonl")) parsed += o.ok();
  check(parsed >= 20, "{} parseable verdicts", parsed);
  const auto report = json::parse(util::read_file(dir / "eval" / "report.json"));
  check(report.contains("per_dataset") && report.contains("averages"), "malformed report");
}

struct Criterion {
  int number;
  const char* name;
  double budget_s;  // 0: no runtime bound
  std::function<void()> body;
};

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const std::vector<Criterion> criteria{
      {1, "template goldens", 1.0, goldens},
      {2, "metric oracle", 5.0, metric_oracle},
      {3, "consistency filter", 0.0, consistency_filter_suite},
      {4, "chunking", 10.0, chunking_suite},
      {5, "end-to-end mock run", 5.0, end_to_end},
      {6, "synthesis contracts", 0.0, synthesis_contracts},
      {7, "assembly determinism", 0.0, assembly_determinism},
      {8, "backend robustness", 0.0, backend_robustness},
      {9, "live smoke", 120.0, live_smoke},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    std::string status = "PASS";
    std::string detail;
    try {
      c.body();
    } catch (const Skipped& s) {
      status = "SKIP";
      detail = s.what();
    } catch (const std::exception& e) {
      status = "FAIL";
      detail = e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (status == "PASS" && c.budget_s > 0 && secs > c.budget_s) {
      status = "FAIL";
      detail = fmt::format("over the {:.0f}s budget", c.budget_s);
    }
    failed += status == "FAIL";
    std::cout << fmt::format("[{}] {} {:<22} {:8.3f}s{}{}\n", status, c.number, c.name, secs,
                             detail.empty() ? "" : "  ", detail)
              << std::flush;
  }
  std::cout << (failed ? fmt::format("{} criteria failed\n", failed) : "all criteria passed\n");
  return failed ? 1 : 0;
}
