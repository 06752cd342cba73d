#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace flowfill::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsageError = 1;
inline constexpr int kDataError = 2;
inline constexpr int kNumericError = 3;

// Runs `flowfill <subcommand> ...`; args exclude the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace flowfill::cli
