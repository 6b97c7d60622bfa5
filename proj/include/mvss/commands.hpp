#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mvss::cli {

// Front end for the four subcommands (gen | train | eval | infer).
// Returns the process exit code: 0 success, 1 runtime error (I/O, parse,
// integrity, domain), 2 configuration error (bad flags, bad config file,
// semantically invalid settings). Normal output goes to `out`, error
// messages to `err`, so tests can drive it in-process.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

// argv adapter for main()
int run_cli(int argc, const char* const* argv);

std::string usage_text();

}  // namespace mvss::cli
