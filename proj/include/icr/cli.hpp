#pragma once

// `icr` command-line front end.
//
//   icr <command> [flags]
//
// Commands: synth, validate, compute, train, eval, layerwise,
// ablate-components, ablate-layers, gen-matrix, token-detect, baselines.
// Exit status: 0 success, 1 domain error, 2 usage error.

#include <iosfwd>
#include <span>
#include <string>

namespace icr {

/// Runs one subcommand. `args` excludes the program name.
int dispatch(std::span<const std::string> args, std::ostream& out, std::ostream& err);

int dispatch(int argc, const char* const* argv);

}  // namespace icr
