#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace lnas {

inline constexpr int exit_ok = 0;
inline constexpr int exit_failure = 1;
inline constexpr int exit_usage = 2;

// Entry point of the lambda_nas tool. args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace lnas
