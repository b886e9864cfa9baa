#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "mrbd/model.hpp"
#include "mrbd/trainer.hpp"

namespace mrbd::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kRuntime = 3 };

enum class Kind { integer, real, boolean, text, real_list, size_list };

struct KeySpec {
  const char* name;
  Kind kind;
  const char* fallback;
  const char* commands;  // space separated; the commands that read this key
  const char* help;

  bool used_by(const std::string& command) const;
};

/// Every accepted configuration key, in documentation order.
const std::vector<KeySpec>& schema();
const std::vector<std::string>& commands();

/// Flat key=value settings validated against the schema. Unset keys read
/// their documented defaults. Keys a command does not use are ignored, so one
/// file can serve every command.
class RunConfig {
 public:
  static RunConfig from_file(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string text(const std::string& key) const;
  std::uint64_t integer(const std::string& key) const;
  std::size_t count(const std::string& key) const { return static_cast<std::size_t>(integer(key)); }
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;
  std::vector<std::size_t> counts(const std::string& key) const;

  /// Effective value of every key `command` reads, except out_dir, so a
  /// report does not depend on where the run was written.
  std::map<std::string, std::string> snapshot(const std::string& command) const;

  ModelConfig model(std::size_t vocab_size) const;
  TrainConfig training() const;

 private:
  std::map<std::string, std::string> values_;
};

/// Runs one command on an already merged configuration.
int execute(const std::string& command, const RunConfig& cfg, std::ostream& out, std::ostream& err);

/// Parses argv (argv[0] is the program name) and runs one command.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mrbd::cli
