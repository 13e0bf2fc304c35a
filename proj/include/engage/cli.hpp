#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "engage/error.hpp"
#include "engage/gateway.hpp"
#include "engage/json_io.hpp"

namespace engage::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kInvalidInput = 3, kRuntime = 4 };

/// 2 for usage and configuration, 4 for backend and model failures, 3 otherwise.
int exit_code_for(ErrorKind kind);

const std::vector<std::string>& commands();

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
EnvLookup process_env();

/// Replaces every ${NAME}; "$$" is a literal dollar. ConfigInvalid naming
/// `field` when a variable is unset or a brace is unterminated.
std::string interpolate(std::string_view text, const std::string& field, const EnvLookup& env);

/// Declarative pipeline configuration. `raw` is kept uninterpolated so
/// manifests never capture credentials.
struct Config {
  json raw = json::object();
  json resolved = json::object();
  std::filesystem::path base_dir;  // relative paths in the file resolve here

  static Config load(const std::filesystem::path& path, const EnvLookup& env = process_env());
  static Config from_json(const json& raw, std::filesystem::path base_dir, const EnvLookup& env = process_env());

  /// Dotted lookup such as "paths.images"; nullptr when absent.
  const json* find(const std::string& dotted) const;
  std::optional<std::filesystem::path> path(const std::string& dotted) const;
};

/// Field-level ConfigInvalid for unknown keys, wrong types and missing files.
void validate_config(const Config& cfg);

/// Gateway node under gateways.<role>.
gateway::BackendConfig backend_config(const json& node, const std::string& role,
                                      const std::filesystem::path& base_dir);

/// Runs one stage. Never throws; errors are written to `err` and mapped to
/// an exit code.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace engage::cli
