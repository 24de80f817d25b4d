#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace spotkit::cli {

/// Process exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 2;
inline constexpr int kTrainingFailure = 3;
inline constexpr int kMismatch = 4;

/// Runs `spotkit <subcommand> ...`; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace spotkit::cli
