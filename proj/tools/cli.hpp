#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "pipnet/kv_config.hpp"

namespace pipnet::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Every key a config file may set, with its default value. Keys live under
// data., model., train. and debug.; anything else is rejected.
KeyValueConfig default_config();

// Validates `overrides` against default_config() and returns the merged
// result. Throws InvalidArgument naming the first unknown key or bad value.
KeyValueConfig resolve_config(const KeyValueConfig& overrides);

// Runs one subcommand. `args` excludes the program name. Failures print one
// JSON line {"error": kind, "message": ...} on `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pipnet::cli
