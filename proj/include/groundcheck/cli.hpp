#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "groundcheck/llm.hpp"

namespace groundcheck::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 1;  // some manifests, jobs or verdicts failed
inline constexpr int kExitUsage = 2;    // configuration or usage error

using TransportFactory = std::function<std::shared_ptr<llm::Transport>(const llm::BackendProfile&)>;

struct Environment {
  std::ostream* out = nullptr;  // default std::cout
  std::ostream* err = nullptr;  // default std::cerr
  // Tests swap in a mock; the default talks HTTP.
  TransportFactory transport_factory;
  llm::Client::SleepFn sleep;
};

/// `args` excludes the program name.
int run(const std::vector<std::string>& args, const Environment& env = {});

}  // namespace groundcheck::cli
