#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lavpr::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kDataDirEnv = "LAVPR_DATA_DIR";
inline constexpr const char* kResolvedConfigName = "config.json";

/// Entry point behind the `lavpr` binary. `args` excludes the program name.
/// Tables go to `out`; logs, usage text and the `error: code=... message=...`
/// line go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace lavpr::cli
