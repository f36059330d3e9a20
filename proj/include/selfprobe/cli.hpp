#pragma once

// Command-line front end. Every pipeline phase, the simulations and the
// analyzer are subcommands of one entry point.

#include <iosfwd>
#include <string>
#include <vector>

namespace selfprobe::cli {

inline constexpr int kExitUsage = 64;

/// Parses and runs one command line (without the program name). Returns
/// 0 ok, 2 partial, 3 fatal or 64 usage. Flags are validated before any file
/// is written; file-writing commands record manifest.json in the output root.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Process entry: installs the Ctrl-C handler and forwards to dispatch.
int main_entry(int argc, char** argv);

}  // namespace selfprobe::cli
