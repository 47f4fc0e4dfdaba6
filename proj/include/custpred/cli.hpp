#pragma once

// Command-line driver: one binary, subcommands simulate, featurize, graph,
// train, eval, report and pipeline.
//
// Exit codes: 0 success, 1 usage error, 2 data or config error, 3 internal
// error. Diagnostics go to `err`, summaries and fingerprints to `out`.

#include <iosfwd>
#include <string>
#include <vector>

namespace custpred {

inline constexpr const char* kOutDirEnv = "CUSTPRED_OUT_DIR";

// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace custpred
