#include "groundcheck/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/chrono.h>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include "groundcheck/config.hpp"
#include "groundcheck/ingest.hpp"
#include "groundcheck/judge.hpp"
#include "groundcheck/metrics.hpp"
#include "groundcheck/prompts.hpp"
#include "groundcheck/rationale.hpp"
#include "groundcheck/synthesis.hpp"
#include "groundcheck/util.hpp"

namespace groundcheck::cli {

namespace {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::string config_path;
  std::size_t jobs = 0;
  std::uint64_t seed = 0;
  std::string cache_dir;
  bool dry_run = false;
  bool resume = false;
  std::string log_level = "info";
  CLI::Option* jobs_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(t));
}

fs::path with_suffix(const fs::path& p, std::string_view suffix) { return fs::path(p.string() + std::string(suffix)); }

/// Everything one subcommand invocation needs; records what goes into the
/// run manifest.
class Run {
 public:
  Run(std::string command, const std::vector<std::string>& args, const Globals& g, const Environment& env)
      : command_(std::move(command)), args_(args), env_(env), started_(utc_now()) {
    if (!g.config_path.empty()) {
      config_ = read_config(g.config_path);
    } else {
      config_.output_dir = "out";
    }
    if (g.jobs_opt && g.jobs_opt->count() > 0) {
      if (g.jobs == 0) throw UsageError("--jobs must be positive");
      config_.jobs = g.jobs;
    }
    if (g.seed_opt && g.seed_opt->count() > 0) config_.seed = g.seed;
    if (!g.cache_dir.empty()) config_.cache_dir = fs::path(g.cache_dir);
    apply_default_seed(config_);
    dry_run_ = g.dry_run;
    resume_ = g.resume;
  }

  RunConfig& config() { return config_; }
  bool dry_run() const { return dry_run_; }
  bool resume() const { return resume_; }
  std::ostream& out() const { return *env_.out; }

  /// Resolves the name before anything is sent.
  llm::Backend backend(const std::string& name) {
    const auto& profile = config_.backend(name);
    auto transport = env_.transport_factory ? env_.transport_factory(profile)
                                            : std::make_shared<llm::HttpTransport>();
    auto client = std::make_shared<llm::Client>(profile, std::move(transport), env_.sleep);
    std::shared_ptr<llm::ResponseCache> cache;
    if (config_.cache_dir) cache = std::make_shared<llm::ResponseCache>(*config_.cache_dir);
    backends_used_.push_back(name);
    return llm::Backend(std::move(client), std::move(cache));
  }

  void output(const fs::path& p) { outputs_.push_back(p.string()); }
  void note(const std::string& key, json value) { notes_[key] = std::move(value); }

  void write_manifest(const fs::path& path, int exit_code) {
    json versions = json::object();
    for (const auto& [id, t] : prompts::template_registry()) versions[id] = t.version;
    json j = {{"command", command_},
              {"args", args_},
              {"config", to_json(config_)},
              {"template_versions", versions},
              {"backends_used", backends_used_},
              {"started_at", started_},
              {"finished_at", utc_now()},
              {"dry_run", dry_run_},
              {"resume", resume_},
              {"exit_code", exit_code},
              {"outputs", outputs_},
              {"summary", notes_}};
    util::atomic_write_file(path, j.dump(2) + "\n");
  }

 private:
  std::string command_;
  std::vector<std::string> args_;
  const Environment& env_;
  std::string started_;
  RunConfig config_;
  bool dry_run_ = false;
  bool resume_ = false;
  std::vector<std::string> backends_used_;
  std::vector<std::string> outputs_;
  json notes_ = json::object();
};

std::string pick_backend(const std::string& flag, const std::optional<std::string>& configured,
                         std::string_view what) {
  if (!flag.empty()) return flag;
  if (configured) return *configured;
  throw UsageError(fmt::format("no {} backend: pass --{} or set it in the config", what,
                               what == "judge" ? "judge" : "backend"));
}

std::vector<Example> load_records(const std::string& path) {
  if (path.empty()) throw UsageError("--in is required");
  return read_records(path);
}

// ---- ingest ----

struct IngestArgs {
  std::string manifest;
  std::string out;
  std::string report;
};

int cmd_ingest(Run& run, const IngestArgs& a) {
  auto& cfg = run.config();
  if (!a.manifest.empty()) {
    cfg.manifests = ingest::read_manifest_file(a.manifest);
    apply_default_seed(cfg);
  }
  if (cfg.manifests.empty()) throw UsageError("no manifests: pass --manifest or list them in the config");
  if (a.out.empty() && !run.dry_run()) throw UsageError("--out is required unless --dry-run");

  auto result = ingest::assemble_bench(cfg.manifests, {.fail_fast = false});
  const json report = ingest::to_json(result.report);
  for (const auto& e : result.report.entries) {
    if (e.status == "failed") spdlog::error("manifest '{}' failed: {}", e.name, e.reason);
    if (e.status == "skipped") spdlog::info("manifest '{}' skipped: {}", e.name, e.reason);
  }
  const int code = result.report.ok() ? kExitOk : kExitPartial;
  run.note("requested", result.report.requested_total());
  run.note("yielded", result.report.yielded_total());

  if (run.dry_run()) {
    run.out() << report.dump(2) << "\n";
    if (!a.report.empty()) util::atomic_write_file(a.report, report.dump(2) + "\n");
    return code;
  }
  const fs::path out = a.out;
  write_records(out, result.examples);
  run.output(out);
  const fs::path report_path = a.report.empty() ? with_suffix(out, ".assembly.json") : fs::path(a.report);
  util::atomic_write_file(report_path, report.dump(2) + "\n");
  run.output(report_path);
  spdlog::info("wrote {} records to {}", result.examples.size(), out.string());
  run.write_manifest(with_suffix(out, ".run.json"), code);
  return code;
}

// ---- synth ----

struct SynthArgs {
  std::string kind;
  std::string backend;
  std::string in;
  std::string out;
  std::vector<std::string> error_types;
  std::size_t variants = 1;
  std::string target_lang;
  int max_attempts = 3;
};

int cmd_synth(Run& run, const SynthArgs& a) {
  synthesis::BatchPlan plan;
  try {
    plan.kind = parse_synthesis_kind(a.kind);
  } catch (const std::invalid_argument&) {
    throw UsageError(fmt::format("unknown --kind '{}' (hallucinate, dialogue, unfaithful-summary, translate)", a.kind));
  }
  if (!a.error_types.empty()) {
    plan.error_types.clear();
    for (const auto& t : a.error_types) {
      try {
        plan.error_types.push_back(parse_error_type(t));
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
    }
  }
  if (a.variants == 0) throw UsageError("--variants must be positive");
  plan.variants_per_example = a.variants;
  if (plan.kind == SynthesisKind::Translate) {
    if (a.target_lang.empty()) throw UsageError("translate needs --target-lang");
    plan.target_language = parse_language(a.target_lang);
  }
  plan.backend = pick_backend(a.backend, run.config().synth_backend, "synth");
  auto backend = run.backend(plan.backend);
  if (a.out.empty() && !run.dry_run()) throw UsageError("--out is required unless --dry-run");

  const auto inputs = load_records(a.in);
  auto jobs = synthesis::plan_jobs(inputs, plan);
  std::stable_sort(jobs.begin(), jobs.end(),
                   [](const SynthesisJob& x, const SynthesisJob& y) { return x.input.id < y.input.id; });
  run.note("planned_jobs", jobs.size());
  if (run.dry_run()) {
    run.out() << fmt::format("{} jobs planned from {} inputs ({} skipped as ineligible)\n", jobs.size(), inputs.size(),
                             inputs.size() * plan.variants_per_example - jobs.size());
    return kExitOk;
  }

  const auto result = synthesis::run_batch(jobs, backend, {.max_attempts = a.max_attempts}, run.config().jobs);
  const fs::path out = a.out;
  write_records(out, result.outputs);
  run.output(out);
  const auto failed_path = with_suffix(out, ".failed.jsonl");
  synthesis::write_failed_jobs(failed_path, result.failures);
  run.output(failed_path);
  run.note("outputs", result.outputs.size());
  run.note("failed_jobs", result.failures.size());
  spdlog::info("{} outputs, {} failed jobs", result.outputs.size(), result.failures.size());
  const int code = result.failures.empty() ? kExitOk : kExitPartial;
  run.write_manifest(with_suffix(out, ".run.json"), code);
  return code;
}

// ---- rationalize ----

struct RationalizeArgs {
  std::string backend;
  std::string in;
  std::string out;
  std::size_t k = 0;
  double min_agreement = 0.0;
  int max_attempts = 3;
};

int cmd_rationalize(Run& run, const RationalizeArgs& a) {
  rationale::RationaleOptions opts;
  opts.k = a.k > 0 ? a.k : run.config().rationale_k;
  opts.min_agreement_fraction = a.min_agreement;
  opts.max_attempts = a.max_attempts;
  opts.jobs = run.config().jobs;
  if (opts.min_agreement_fraction < 0.0 || opts.min_agreement_fraction > 1.0) {
    throw UsageError("--min-agreement must be within [0, 1]");
  }
  auto backend = run.backend(pick_backend(a.backend, run.config().rationale_backend, "rationale"));
  if (a.out.empty() && !run.dry_run()) throw UsageError("--out is required unless --dry-run");

  const auto inputs = load_records(a.in);
  for (const auto& e : inputs) {
    if (!e.label) throw UsageError(fmt::format("example '{}' has no gold label", e.id));
  }
  run.note("k", opts.k);
  if (run.dry_run()) {
    run.out() << fmt::format("{} examples, {} samples each\n", inputs.size(), opts.k);
    return kExitOk;
  }

  const auto result = rationale::rationalize_dataset(inputs, backend, opts);
  const fs::path out = a.out;
  write_records(out, result.retained);
  run.output(out);
  const auto decisions = with_suffix(out, ".decisions.jsonl");
  rationale::write_decision_report(decisions, result.report);
  run.output(decisions);
  run.note("retained", result.retained.size());
  run.note("discarded", result.discarded.size());
  run.note("failed", result.failed.size());
  spdlog::info("retained {}, discarded {}, failed {}", result.retained.size(), result.discarded.size(),
               result.failed.size());
  const int code = result.failed.empty() ? kExitOk : kExitPartial;
  run.write_manifest(with_suffix(out, ".run.json"), code);
  return code;
}

// ---- eval / report ----

json report_metadata(const std::string& judge_name, const std::string& model, prompts::PromptKind kind,
                     const judge::ChunkingPolicy& policy, std::span<const judge::JudgeOutcome> outcomes) {
  json templates = json::object();
  for (const auto& o : outcomes) {
    if (!o.template_id.empty()) templates[o.template_id] = o.template_version;
  }
  return {{"judge", judge_name},
          {"model", model},
          {"template_kind", prompts::to_string(kind)},
          {"templates", templates},
          {"chunking", judge::to_json(policy)}};
}

int write_report(Run& run, std::span<const judge::JudgeOutcome> outcomes, std::span<const Example> gold,
                 const fs::path& dir, const std::string& model_name, json metadata) {
  const auto report = metrics::build_report(outcomes, gold, run.config().grouping, std::move(metadata));
  const auto table = metrics::render_table(report, model_name);
  util::atomic_write_file(dir / "report.json", metrics::to_json(report).dump(2) + "\n");
  util::atomic_write_file(dir / "report.txt", table);
  run.output(dir / "report.json");
  run.output(dir / "report.txt");
  run.out() << table;
  return kExitOk;
}

struct EvalArgs {
  std::string judge;
  std::string template_kind = "generative";
  std::string in;
  std::string out_dir;
  std::string model_name;
};

int cmd_eval(Run& run, const EvalArgs& a) {
  prompts::PromptKind kind;
  try {
    kind = prompts::parse_prompt_kind(a.template_kind);
  } catch (const std::invalid_argument&) {
    throw UsageError(fmt::format("unknown --template '{}' (generative, classifier)", a.template_kind));
  }
  const auto judge_name = pick_backend(a.judge, run.config().judge_backend, "judge");
  auto backend = run.backend(judge_name);
  const auto gold = load_records(a.in);
  const fs::path dir = a.out_dir.empty() ? run.config().output_dir : fs::path(a.out_dir);
  const auto verdict_path = dir / "verdicts.jsonl";

  if (run.dry_run()) {
    std::size_t chunked = 0;
    for (const auto& e : gold) {
      (void)prompts::render(e, kind);  // surfaces template errors without sending anything
      if (judge::chunk_document(e.document, run.config().chunking).size() > 1) ++chunked;
    }
    run.out() << fmt::format("{} examples would be judged by '{}' ({} chunked)\n", gold.size(), judge_name, chunked);
    return kExitOk;
  }

  std::vector<judge::JudgeOutcome> reuse;
  if (run.resume() && fs::exists(verdict_path)) {
    reuse = judge::read_verdicts(verdict_path);
    spdlog::info("resuming with {} cached verdicts", reuse.size());
  }
  const judge::JudgeBatchOptions opts{kind, run.config().chunking, run.config().jobs};
  const auto outcomes = judge::judge_all(gold, backend, opts, reuse);
  fs::create_directories(dir);
  judge::write_verdicts(verdict_path, outcomes);
  run.output(verdict_path);

  const auto failed = std::count_if(outcomes.begin(), outcomes.end(), [](const auto& o) { return !o.ok(); });
  run.note("judged", outcomes.size());
  run.note("failed", failed);
  int code = failed == 0 ? kExitOk : kExitPartial;
  try {
    const auto& model = backend.profile().model_id;
    write_report(run, outcomes, gold, dir, a.model_name.empty() ? judge_name : a.model_name,
                 report_metadata(judge_name, model, kind, run.config().chunking, outcomes));
  } catch (const metrics::MetricError& e) {
    spdlog::error("report not written: {}", e.what());
    code = kExitPartial;
  }
  run.write_manifest(dir / "run.json", code);
  return code;
}

struct ReportArgs {
  std::string in;
  std::string verdicts;
  std::string out_dir;
  std::string model_name;
};

int cmd_report(Run& run, const ReportArgs& a) {
  if (a.verdicts.empty()) throw UsageError("--verdicts is required");
  const auto gold = load_records(a.in);
  const auto outcomes = judge::read_verdicts(a.verdicts);
  const fs::path dir = a.out_dir.empty() ? fs::path(a.verdicts).parent_path() : fs::path(a.out_dir);
  std::string model = a.model_name;
  for (const auto& o : outcomes) {
    if (model.empty() && !o.model_id.empty()) model = o.model_id;
  }
  json metadata = {{"model", model}, {"verdicts", a.verdicts}};
  if (run.dry_run()) {
    const auto report = metrics::build_report(outcomes, gold, run.config().grouping, metadata);
    run.out() << metrics::render_table(report, model.empty() ? "judge" : model);
    return kExitOk;
  }
  fs::create_directories(dir.empty() ? fs::path(".") : dir);
  write_report(run, outcomes, gold, dir, model.empty() ? "judge" : model, std::move(metadata));
  run.write_manifest(dir / "report.run.json", kExitOk);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, const Environment& env_in) {
  Environment env = env_in;
  if (!env.out) env.out = &std::cout;
  if (!env.err) env.err = &std::cerr;

  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(*env.err);
  auto logger = std::make_shared<spdlog::logger>("groundcheck", sink);
  logger->set_pattern("[%l] %v");
  auto previous = spdlog::default_logger();
  spdlog::set_default_logger(logger);
  struct Restore {
    std::shared_ptr<spdlog::logger> prev;
    ~Restore() { spdlog::set_default_logger(prev); }
  } restore{previous};

  CLI::App app{"Grounded hallucination judging: ingest, synthesize, rationalize, evaluate, report", "groundcheck"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Run config (JSON)");
  g.jobs_opt = app.add_option("--jobs", g.jobs, "Worker cap for every stage");
  g.seed_opt = app.add_option("--seed", g.seed, "Seed for sample rules that do not set one");
  app.add_option("--cache-dir", g.cache_dir, "Response cache directory");
  app.add_flag("--dry-run", g.dry_run, "Plan and validate only; write no outputs");
  app.add_flag("--resume", g.resume, "Reuse existing verdicts; judge only missing ids");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error"}));

  IngestArgs ingest_args;
  auto* ingest_cmd = app.add_subcommand("ingest", "Assemble a record file from dataset manifests")->fallthrough();
  ingest_cmd->add_option("--manifest", ingest_args.manifest, "Manifest file (overrides the config's list)");
  ingest_cmd->add_option("--out", ingest_args.out, "Record file to write");
  ingest_cmd->add_option("--report", ingest_args.report, "Assembly report path (default <out>.assembly.json)");

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic examples")->fallthrough();
  synth_cmd->add_option("--kind", synth_args.kind, "hallucinate | dialogue | unfaithful-summary | translate")
      ->required();
  synth_cmd->add_option("--backend", synth_args.backend, "Backend name from the config");
  synth_cmd->add_option("--in", synth_args.in, "Input record file")->required();
  synth_cmd->add_option("--out", synth_args.out, "Output record file");
  synth_cmd->add_option("--error-types", synth_args.error_types, "Error types to cycle through")->delimiter(',');
  synth_cmd->add_option("--variants", synth_args.variants, "Variants per input example");
  synth_cmd->add_option("--target-lang", synth_args.target_lang, "Target language for translate (en, es)");
  synth_cmd->add_option("--max-attempts", synth_args.max_attempts, "Generations per job before it fails")
      ->check(CLI::PositiveNumber);

  RationalizeArgs rat_args;
  auto* rat_cmd = app.add_subcommand("rationalize", "Attach rationales and drop inconsistent examples")->fallthrough();
  rat_cmd->add_option("--backend", rat_args.backend, "Backend name from the config");
  rat_cmd->add_option("--in", rat_args.in, "Input record file")->required();
  rat_cmd->add_option("--out", rat_args.out, "Retained record file");
  rat_cmd->add_option("--k", rat_args.k, "Samples per example (default: config rationale_k)");
  rat_cmd->add_option("--min-agreement", rat_args.min_agreement, "Minimum agreeing fraction to retain");
  rat_cmd->add_option("--max-attempts", rat_args.max_attempts, "Generations per sample before it fails")
      ->check(CLI::PositiveNumber);

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Judge a record file and score it")->fallthrough();
  eval_cmd->add_option("--judge", eval_args.judge, "Judge backend name from the config");
  eval_cmd->add_option("--template", eval_args.template_kind, "generative | classifier");
  eval_cmd->add_option("--in", eval_args.in, "Gold record file")->required();
  eval_cmd->add_option("--out-dir", eval_args.out_dir, "Output directory (default: config output_dir)");
  eval_cmd->add_option("--model-name", eval_args.model_name, "Row label in the report table");

  ReportArgs report_args;
  auto* report_cmd = app.add_subcommand("report", "Score an existing verdict file")->fallthrough();
  report_cmd->add_option("--in", report_args.in, "Gold record file")->required();
  report_cmd->add_option("--verdicts", report_args.verdicts, "Verdict file")->required();
  report_cmd->add_option("--out-dir", report_args.out_dir, "Output directory (default: next to the verdicts)");
  report_cmd->add_option("--model-name", report_args.model_name, "Row label in the report table");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());  // CLI11 consumes from the back
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, *env.out, *env.err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  spdlog::set_level(spdlog::level::from_str(g.log_level));

  try {
    if (ingest_cmd->parsed()) {
      Run run("ingest", args, g, env);
      return cmd_ingest(run, ingest_args);
    }
    if (synth_cmd->parsed()) {
      Run run("synth", args, g, env);
      return cmd_synth(run, synth_args);
    }
    if (rat_cmd->parsed()) {
      Run run("rationalize", args, g, env);
      return cmd_rationalize(run, rat_args);
    }
    if (eval_cmd->parsed()) {
      Run run("eval", args, g, env);
      return cmd_eval(run, eval_args);
    }
    Run run("report", args, g, env);
    return cmd_report(run, report_args);
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const ConfigError& e) {
    spdlog::error("config: {}", e.what());
    return kExitUsage;
  } catch (const ingest::IngestError& e) {
    // Only manifest-file problems reach here; per-manifest failures are in the report.
    spdlog::error("{}", e.what());
    return kExitUsage;
  } catch (const llm::PermanentBackendError& e) {
    spdlog::error("halted on a non-retryable backend error: {}", e.what());
    return kExitPartial;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitPartial;
  }
}

}  // namespace groundcheck::cli
