#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tsvr {

// Exit codes of every subcommand.
enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,
  kExitInputError = 2,
  kExitNumericAbort = 3,
};

// args excludes the program name. Machine-readable results go to files;
// `out` gets the human-readable summary, `err` the progress log and errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

// Keeps the per-iteration temporaries on the heap instead of fresh mmaps.
// Training allocates and frees the same few sizes thousands of times, and
// glibc's default threshold turns each into a page-faulting syscall pair.
void tune_allocator();

}  // namespace tsvr
