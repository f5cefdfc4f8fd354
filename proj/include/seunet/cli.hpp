#pragma once

#include <iosfwd>

namespace seunet {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitValidation = 2,  // a check ran and failed
  kExitIo = 3,
};

/// Entry point of the `seunet` tool: subcommands train, eval, predict, gradcheck, synth.
/// A `--config FILE` of key=value lines supplies defaults for the subcommand's flags;
/// flags given on the command line take precedence.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace seunet
