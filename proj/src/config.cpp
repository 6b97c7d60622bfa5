#include "mvss/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mvss/error.hpp"

namespace mvss::cli {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

const OptionSpec* find_spec(const std::vector<OptionSpec>& schema, const std::string& key) {
  for (const auto& spec : schema) {
    if (spec.key == key) return &spec;
  }
  return nullptr;
}

const char* type_name(OptType t) {
  switch (t) {
    case OptType::Int: return "int";
    case OptType::Real: return "real";
    case OptType::Uint: return "uint";
    case OptType::Str: return "string";
  }
  return "?";
}

void check_typed(const OptionSpec& spec, const std::string& value, const std::string& origin) {
  const std::string where = "option '" + spec.key + "' (" + origin + ")";
  switch (spec.type) {
    case OptType::Str:
      return;
    case OptType::Int: {
      std::size_t pos = 0;
      try {
        (void)std::stoll(value, &pos);
      } catch (const std::exception&) {
        throw ConfigError(where + ": '" + value + "' is not an integer");
      }
      if (pos != value.size()) throw ConfigError(where + ": '" + value + "' is not an integer");
      return;
    }
    case OptType::Uint: {
      if (!value.empty() && (value[0] == '-' || value[0] == '+')) {
        throw ConfigError(where + ": '" + value + "' is not a non-negative integer");
      }
      std::size_t pos = 0;
      try {
        (void)std::stoull(value, &pos);
      } catch (const std::exception&) {
        throw ConfigError(where + ": '" + value + "' is not a non-negative integer");
      }
      if (pos != value.size()) {
        throw ConfigError(where + ": '" + value + "' is not a non-negative integer");
      }
      return;
    }
    case OptType::Real: {
      std::size_t pos = 0;
      try {
        (void)std::stod(value, &pos);
      } catch (const std::exception&) {
        throw ConfigError(where + ": '" + value + "' is not a number");
      }
      if (pos != value.size()) throw ConfigError(where + ": '" + value + "' is not a number");
      return;
    }
  }
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::map<std::string, std::string> pairs;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::string stripped = trim(line);
    if (stripped.empty()) continue;
    std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config file '" + path + "' line " + std::to_string(lineno) +
                        ": expected key=value, got '" + stripped + "'");
    }
    std::string key = trim(stripped.substr(0, eq));
    std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config file '" + path + "' line " + std::to_string(lineno) +
                        ": empty key");
    }
    if (pairs.count(key) != 0) {
      throw ConfigError("config file '" + path + "' line " + std::to_string(lineno) +
                        ": duplicate key '" + key + "'");
    }
    pairs[key] = value;
  }
  return pairs;
}

}  // namespace

bool ParsedOptions::has(const std::string& key) const { return values.count(key) != 0; }

int ParsedOptions::get_int(const std::string& key) const {
  auto it = values.find(key);
  if (it == values.end()) throw UsageError("option '" + key + "' was not provided");
  return static_cast<int>(std::stoll(it->second));
}

double ParsedOptions::get_real(const std::string& key) const {
  auto it = values.find(key);
  if (it == values.end()) throw UsageError("option '" + key + "' was not provided");
  return std::stod(it->second);
}

std::uint64_t ParsedOptions::get_uint(const std::string& key) const {
  auto it = values.find(key);
  if (it == values.end()) throw UsageError("option '" + key + "' was not provided");
  return std::stoull(it->second);
}

const std::string& ParsedOptions::get_str(const std::string& key) const {
  auto it = values.find(key);
  if (it == values.end()) throw UsageError("option '" + key + "' was not provided");
  return it->second;
}

ParsedOptions parse_options(const std::vector<OptionSpec>& schema,
                            const std::vector<std::string>& args) {
  // Command-line tokens -> key/value pairs.
  std::map<std::string, std::string> flag_pairs;
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& tok = args[i];
    if (tok.size() < 3 || tok.substr(0, 2) != "--") {
      throw ConfigError("expected --key or --key=value, got '" + tok + "'");
    }
    std::string key;
    std::string value;
    std::size_t eq = tok.find('=');
    if (eq != std::string::npos) {
      key = tok.substr(2, eq - 2);
      value = tok.substr(eq + 1);
    } else {
      key = tok.substr(2);
      if (i + 1 >= args.size()) throw ConfigError("option '--" + key + "' is missing a value");
      value = args[++i];
    }
    if (key.empty()) throw ConfigError("empty option name in '" + tok + "'");
    if (key == "config") {
      if (!config_path.empty()) throw ConfigError("--config given more than once");
      config_path = value;
      continue;
    }
    if (flag_pairs.count(key) != 0) throw ConfigError("option '--" + key + "' given more than once");
    flag_pairs[key] = value;
  }

  ParsedOptions out;
  // Lowest precedence: schema defaults.
  for (const auto& spec : schema) {
    if (!spec.required) out.values[spec.key] = spec.default_value;
  }
  // Then the config file, then flags; each occurrence type-checked.
  if (!config_path.empty()) {
    for (const auto& [key, value] : read_config_file(config_path)) {
      const OptionSpec* spec = find_spec(schema, key);
      if (spec == nullptr) {
        throw ConfigError("unknown key '" + key + "' in config file '" + config_path + "'");
      }
      check_typed(*spec, value, "config file");
      out.values[key] = value;
    }
  }
  for (const auto& [key, value] : flag_pairs) {
    const OptionSpec* spec = find_spec(schema, key);
    if (spec == nullptr) throw ConfigError("unknown option '--" + key + "'");
    check_typed(*spec, value, "command line");
    out.values[key] = value;
  }
  for (const auto& spec : schema) {
    if (spec.required && out.values.count(spec.key) == 0) {
      throw ConfigError("missing required option '--" + spec.key + "'");
    }
  }
  return out;
}

std::string describe_options(const std::vector<OptionSpec>& schema) {
  std::ostringstream os;
  os << "  --config PATH  (string) read key=value defaults from PATH\n";
  for (const auto& spec : schema) {
    os << "  --" << spec.key << "  (" << type_name(spec.type);
    if (spec.required) {
      os << ", required";
    } else if (!spec.default_value.empty()) {
      os << ", default " << spec.default_value;
    }
    os << ") " << spec.help << "\n";
  }
  return os.str();
}

}  // namespace mvss::cli
