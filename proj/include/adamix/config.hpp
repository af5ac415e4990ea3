#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "adamix/data.hpp"
#include "adamix/model.hpp"
#include "adamix/tensor.hpp"
#include "adamix/trainer.hpp"

namespace adamix {

/// Options of the export-mixed command.
struct ExportOptions {
  std::size_t sets = 4;
  std::size_t per_set = 2;
  std::vector<double> ratios;  // empty: Dirichlet draws per set
  std::uint64_t seed = 0;
};

struct RunOptions {
  std::size_t checkpoint_every = 0;  // epochs between checkpoints; 0: final only
  std::size_t eval_batch_size = 100;
  int threads = 0;  // 0: OpenMP default
};

struct RunConfig {
  DatasetSpec data{};
  ArchDescriptor arch{};
  TrainConfig train{};
  ExportOptions export_options{};
  RunOptions run{};

  /// Cross-field checks: shapes, classes, trainer invariants.
  void validate() const;
};

/// Bad configuration text or value; `line` is 0 when not tied to a line.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& field, std::size_t line, const std::string& message);
  const std::string& field() const { return field_; }
  std::size_t line() const { return line_; }

 private:
  std::string field_;
  std::size_t line_;
};

/// Sections [data] [model] [train] [export] [run] holding `key = value`
/// lines; `#` starts a comment. Unset keys keep their defaults.
RunConfig parse_config(const std::string& text);

/// Every key of every section, fully resolved; parses back to the same config.
std::string serialize_config(const RunConfig& config);

/// Applies `section.key=value` on top of a parsed config.
void apply_override(RunConfig& config, const std::string& assignment);
/// Applies several overrides in order, validating once at the end.
void apply_overrides(RunConfig& config, const std::vector<std::string>& assignments);

/// Names of every known key as `section.key`.
std::vector<std::string> config_keys();

}  // namespace adamix
