#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mvss::cli {

enum class OptType { Int, Real, Uint, Str };

struct OptionSpec {
  std::string key;
  OptType type;
  std::string default_value;  // ignored when required
  bool required = false;
  std::string help;
};

// Values merged with precedence flag > config file > schema default.
class ParsedOptions {
 public:
  bool has(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_real(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  const std::string& get_str(const std::string& key) const;

  std::map<std::string, std::string> values;
};

// `args` are the tokens after the subcommand, as --key value or --key=value.
// A --config PATH flag (always accepted) loads "key=value" lines first
// ('#' starts a comment; blank lines are skipped). Every key — from the
// file or the command line — must appear in the schema with a well-typed
// value, otherwise ConfigError. Missing required keys are ConfigError too.
ParsedOptions parse_options(const std::vector<OptionSpec>& schema,
                            const std::vector<std::string>& args);

// one "--key  (type, default ...)  help" line per option
std::string describe_options(const std::vector<OptionSpec>& schema);

}  // namespace mvss::cli
