#pragma once

namespace sqa {

// Entry point behind the `sqa` binary; returns the process exit code.
// Subcommands: gen-data, train, eval, infer, diff-masks, gradcheck, count.
int cli_dispatch(int argc, const char* const* argv);

}  // namespace sqa
