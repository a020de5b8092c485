#pragma once

#include <string>
#include <vector>

namespace slf::app {

/// Exit codes of the command-line tool.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitInternal = 3 };

/// Runs one `slf` subcommand: build-prior, fit, synth, eval, harness, serve
/// or stub-segmenter. Usage errors print the synopsis to stderr.
int cli_dispatch(int argc, const char* const* argv);
int cli_dispatch(const std::vector<std::string>& args);  // args[0] is the program name

}  // namespace slf::app
