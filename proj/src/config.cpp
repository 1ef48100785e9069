#include "groundcheck/config.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "groundcheck/util.hpp"

namespace groundcheck {

namespace {

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  return p.is_relative() && !base.empty() ? base / p : p;
}

}  // namespace

std::vector<std::string> RunConfig::validate() const {
  std::vector<std::string> v;
  for (const auto& [name, profile] : backends) {
    for (const auto& problem : profile.validate()) v.push_back(fmt::format("backend '{}': {}", name, problem));
  }
  for (const auto& m : manifests) {
    for (const auto& problem : m.validate()) v.push_back(problem);
  }
  if (auto problems = chunking.validate(); !problems.empty()) {
    for (const auto& p : problems) v.push_back("chunking: " + p);
  }
  if (rationale_k == 0) v.emplace_back("rationale_k must be positive");
  if (jobs == 0) v.emplace_back("jobs must be positive");
  if (output_dir.empty()) v.emplace_back("output_dir must be set");
  for (const auto* ref : {&judge_backend, &synth_backend, &rationale_backend}) {
    if (*ref && !backends.contains(**ref)) v.push_back(fmt::format("unknown backend '{}'", **ref));
  }
  return v;
}

const llm::BackendProfile& RunConfig::backend(const std::string& name) const {
  auto it = backends.find(name);
  if (it == backends.end()) {
    std::vector<std::string> known;
    for (const auto& [n, _] : backends) known.push_back(n);
    throw ConfigError(fmt::format("unknown backend '{}' (configured: {})", name,
                                  known.empty() ? std::string("none") : fmt::format("{}", fmt::join(known, ", "))));
  }
  return it->second;
}

RunConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  try {
    if (auto it = j.find("backends"); it != j.end()) {
      for (const auto& [name, body] : it->items()) c.backends.emplace(name, llm::profile_from_json(name, body));
    }
    if (auto it = j.find("manifests"); it != j.end()) {
      if (it->is_string()) {
        c.manifests = ingest::read_manifest_file(resolve(it->get<std::string>(), base_dir));
      } else {
        for (const auto& m : *it) c.manifests.push_back(ingest::manifest_from_json(m, base_dir));
      }
    }
    if (auto it = j.find("chunking"); it != j.end()) c.chunking = judge::chunking_from_json(*it);
    c.rationale_k = j.value("rationale_k", c.rationale_k);
    c.seed = j.value("seed", c.seed);
    if (auto it = j.find("output_dir"); it != j.end()) c.output_dir = resolve(it->get<std::string>(), base_dir);
    if (auto it = j.find("cache_dir"); it != j.end() && !it->is_null()) {
      c.cache_dir = resolve(it->get<std::string>(), base_dir);
    }
    c.jobs = j.value("jobs", c.jobs);
    if (auto it = j.find("grouping"); it != j.end()) c.grouping = metrics::grouping_from_json(*it);
    if (auto it = j.find("judge_backend"); it != j.end()) c.judge_backend = it->get<std::string>();
    if (auto it = j.find("synth_backend"); it != j.end()) c.synth_backend = it->get<std::string>();
    if (auto it = j.find("rationale_backend"); it != j.end()) c.rationale_backend = it->get<std::string>();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (auto v = c.validate(); !v.empty()) throw ConfigError(v.front());
  return c;
}

RunConfig read_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = util::read_file(path);
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("cannot read config file '{}'", path.string()));
  }
  json j;
  try {
    j = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
  try {
    return config_from_json(j, path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

json to_json(const RunConfig& c) {
  json backends = json::object();
  for (const auto& [name, p] : c.backends) backends[name] = llm::to_json(p);
  json manifests = json::array();
  for (const auto& m : c.manifests) manifests.push_back(ingest::to_json(m));
  json j = {{"backends", backends},
            {"manifests", manifests},
            {"chunking", judge::to_json(c.chunking)},
            {"rationale_k", c.rationale_k},
            {"seed", c.seed},
            {"output_dir", c.output_dir.string()},
            {"jobs", c.jobs},
            {"grouping", metrics::to_json(c.grouping)}};
  if (c.cache_dir) j["cache_dir"] = c.cache_dir->string();
  if (c.judge_backend) j["judge_backend"] = *c.judge_backend;
  if (c.synth_backend) j["synth_backend"] = *c.synth_backend;
  if (c.rationale_backend) j["rationale_backend"] = *c.rationale_backend;
  return j;
}

void apply_default_seed(RunConfig& c) {
  for (auto& m : c.manifests) {
    if (m.sample && !m.sample->seed) m.sample->seed = c.seed;
  }
}

}  // namespace groundcheck
