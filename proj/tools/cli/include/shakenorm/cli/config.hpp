#ifndef SHAKENORM_CLI_CONFIG_HPP_
#define SHAKENORM_CLI_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "shakenorm/blocks.hpp"
#include "shakenorm/data_io.hpp"
#include "shakenorm/training.hpp"

namespace shakenorm::cli {

/// Bad key, bad value or unreadable config. Maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat key=value run configuration. Every key has a default; unknown keys are rejected.
///
/// File syntax: one `key = value` per line, `#` starts a comment, blank lines ignored.
class RunConfig {
 public:
  RunConfig();

  static RunConfig parse(const std::string& text, const std::string& origin = "<string>");
  static RunConfig from_file(const std::filesystem::path& path);

  /// Validates the key and the value's syntax. Throws ConfigError.
  void set(const std::string& key, const std::string& value);
  /// Applies every `key = value` line of `text` on top of the current values.
  void merge(const std::string& text, const std::string& origin);

  const std::string& get(const std::string& key) const;
  long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_switch(const std::string& key) const;
  std::vector<std::uint64_t> seeds() const;

  /// Sorted `key = value` lines; parse(to_string()) reproduces the config.
  std::string to_string() const;
  void write(const std::filesystem::path& path) const;

  /// Cross-key checks (e.g. depth arithmetic). Throws ConfigError.
  void validate() const;

  ShakeConfig shake_config() const;
  NetworkSpec network_spec(std::size_t classes, std::size_t in_channels) const;
  TrainConfig train_config(std::uint64_t seed) const;
  AddingTaskConfig adding_config(std::uint64_t seed) const;

  static const std::vector<std::string>& keys();

 private:
  std::map<std::string, std::string> values_;
};

struct DataSplits {
  Dataset train;
  Dataset test;
};

/// Loads the configured dataset and standardizes both splits with training-split statistics.
/// Throws ConfigError when files are missing.
DataSplits load_data(const RunConfig& cfg);

}  // namespace shakenorm::cli

#endif  // SHAKENORM_CLI_CONFIG_HPP_
