#pragma once

#include <iostream>
#include <string>
#include <vector>

#include "ltcse/fetch.hpp"

namespace ltcse {

/// Redirectable surroundings for one CLI invocation, so tests can run
/// commands in-process with a scratch cache, a stubbed network, and
/// captured streams. The real main() uses the defaults.
struct CliEnv {
  std::string cache_root;  // "" -> LTCSE_CACHE or the platform default
  HttpGet http;            // null -> real HTTPS
  std::ostream* out = &std::cout;
  std::ostream* err = &std::cerr;
};

/// Exit codes: 0 success, 2 configuration error, 3 data/fetch error,
/// 4 numeric failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

/// Dispatch one command line (without argv[0]). Never throws; every
/// failure is mapped to a documented exit code with a message on err.
int run_cli(const std::vector<std::string>& args, CliEnv& env);

/// Entry point used by the binary: forwards argv[1..] with a default env.
int run_cli(int argc, const char* const* argv);

}  // namespace ltcse
