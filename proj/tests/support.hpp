#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "groundcheck/llm.hpp"
#include "groundcheck/prompts.hpp"
#include "groundcheck/schema.hpp"

namespace gc_test {

using namespace groundcheck;
namespace fs = std::filesystem;

inline fs::path data_dir() { return fs::path(GC_TEST_DATA_DIR); }
inline fs::path fixture(const std::string& name) { return data_dir() / "fixtures" / name; }
inline fs::path golden(const std::string& name) { return data_dir() / "golden" / name; }

inline std::vector<Example> bench24() { return read_records(fixture("bench24.records")); }

inline const Example& by_id(const std::vector<Example>& xs, const std::string& id) {
  for (const auto& e : xs) {
    if (e.id == id) return e;
  }
  throw std::runtime_error("no fixture example " + id);
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("groundcheck-test-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline llm::BackendProfile mock_profile(std::string name = "mock", int max_in_flight = 4, int max_attempts = 3) {
  llm::BackendProfile p;
  p.name = std::move(name);
  p.base_address = "http://127.0.0.1:9";
  p.model_id = "mock-model";
  p.max_in_flight = max_in_flight;
  p.retry.max_attempts = max_attempts;
  p.retry.base_backoff = std::chrono::milliseconds(1);
  return p;
}

inline void no_sleep(std::chrono::milliseconds) {}

inline llm::Backend make_backend(std::shared_ptr<llm::Transport> transport, llm::BackendProfile profile = mock_profile(),
                                 std::shared_ptr<llm::ResponseCache> cache = nullptr) {
  auto client = std::make_shared<llm::Client>(std::move(profile), std::move(transport), no_sleep);
  return llm::Backend(std::move(client), std::move(cache));
}

inline std::string verdict_json(int label, const std::string& rationale = "Checked against the document.") {
  return json{{"rationale", rationale}, {"output", label}}.dump();
}

/// A judge that answers each example with a fixed label, keyed by the text
/// of the prompt that example renders to.
inline llm::MockBackend::Handler scripted_judge(const std::vector<Example>& examples,
                                                const std::map<std::string, int>& label_by_id,
                                                prompts::PromptKind kind = prompts::PromptKind::GenerativeChat) {
  auto by_prompt = std::make_shared<std::map<std::string, int>>();
  for (const auto& e : examples) {
    const auto msgs = prompts::render(e, kind).as_messages();
    (*by_prompt)[msgs.back().content] = label_by_id.at(e.id);
  }
  return [by_prompt](std::span<const llm::Message> msgs) {
    auto it = by_prompt->find(msgs.back().content);
    if (it == by_prompt->end()) return llm::MockStep::respond("I cannot tell.");
    return llm::MockStep::respond(verdict_json(it->second));
  };
}

}  // namespace gc_test
