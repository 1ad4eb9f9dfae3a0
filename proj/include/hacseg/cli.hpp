#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "hacseg/augment.hpp"
#include "hacseg/error.hpp"
#include "hacseg/hacnet.hpp"
#include "hacseg/profiler.hpp"
#include "hacseg/trainer.hpp"

namespace hacseg::cli {

enum class KeyType { Int, Real, Bool, Text, IntList };

struct ConfigKey {
  std::string name;
  KeyType type;
  std::string default_value;
  std::string help;
};

/// Every recognised configuration key, in help/echo order.
const std::vector<ConfigKey>& config_schema();

/// Plain-text `key = value` configuration with schema defaults. Values are
/// kept verbatim so they can be echoed into outputs.
class RunConfig {
 public:
  RunConfig();

  /// Reads `key = value` lines; '#' starts a comment. Unknown or repeated
  /// keys and malformed values raise Error{Config}.
  void load_file(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);
  /// Parses `key=value`.
  void set_assignment(const std::string& assignment);

  const std::string& text(const std::string& key) const;
  long integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool boolean(const std::string& key) const;
  std::vector<int> int_list(const std::string& key) const;

  /// `key = value` lines in schema order.
  std::string dump() const;
  nlohmann::json to_json() const;

 private:
  std::map<std::string, std::string> values_;
};

HacConfig model_config(const RunConfig& c);
TrainPlan train_plan(const RunConfig& c, int stage, std::uint64_t seed);
CorruptionSpec corruption_spec(const RunConfig& c, std::uint64_t seed);
ProfileOptions profile_options(const RunConfig& c);

/// Config keys with their defaults, one per line.
std::string config_help();

int exit_code(ErrorKind kind);

/// Entry point; returns the process exit code. Errors are reported on `err`
/// as one line: `hacseg: error[<kind>]: <message>`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace hacseg::cli
