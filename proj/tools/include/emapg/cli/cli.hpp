#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace emapg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitAuditFailure = 1;
inline constexpr int kExitUsage = 2;

// Runs `emapg <subcommand> [--config PATH] [--seed U64] [--out DIR] [--key value ...]`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Names of the subcommands, in help order.
std::vector<std::string> subcommands();

// Documented keys of one subcommand as `key = default  # help` lines.
std::string describe_keys(const std::string& subcommand);

}  // namespace emapg::cli
