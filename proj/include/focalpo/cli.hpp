#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace focalpo::cli {

inline constexpr std::string_view kVersion = "focalpo 0.1.0";

/// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kUsageError = 2;

/// Bad flag values; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything needed to reproduce one command invocation. Written to
/// manifest.json before any data file.
struct RunManifest {
  std::string command;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  nlohmann::ordered_json seeds = nlohmann::ordered_json::object();
  std::vector<std::string> outputs;

  nlohmann::ordered_json to_json() const;
};

void write_manifest(const std::filesystem::path& dir, const RunManifest& manifest);

/// Evenly spaced values from a `min:max:step` spec (inclusive of max when it
/// lands on the grid). Throws UsageError naming the offending token.
std::vector<double> parse_grid(std::string_view spec);

/// Runs one command line; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace focalpo::cli
