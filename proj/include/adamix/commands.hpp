#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "adamix/config.hpp"

namespace adamix {

namespace exit_code {
constexpr int ok = 0;
constexpr int failed = 1;  // selftest checks failed
constexpr int config = 2;
constexpr int divergence = 3;
constexpr int io = 4;
}  // namespace exit_code

/// Environment variable naming the root for run directories when --out is absent.
inline constexpr const char* kOutputRootEnv = "ADAMIX_OUTPUT_ROOT";

/// Config file (empty: defaults), then overrides in order, then the seed.
struct ConfigSource {
  std::string path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

/// Throws ConfigError or IoError.
RunConfig resolve_config(const ConfigSource& source);

/// First 12 hex digits of the FNV-1a digest of the serialized config and command.
std::string run_id(const RunConfig& config, const std::string& command);

/// `out` when given, else $ADAMIX_OUTPUT_ROOT/<run id>, else runs/<run id>.
std::string resolve_output_dir(const std::string& out, const std::string& id);

/// Comment header with run id, command and output directory, followed by
/// the serialized config; a valid config file that reproduces the run.
std::string manifest_text(const RunConfig& config, const std::string& id,
                          const std::string& command, const std::string& out_dir);

struct TrainRequest {
  ConfigSource config;
  std::string out;
};

/// Writes manifest.ini, train_log.csv, summary.csv and checkpoint.aamx (plus
/// checkpoint_epoch_<e>.aamx every run.checkpoint_every epochs).
int cmd_train(const TrainRequest& request, std::ostream& log, std::ostream& err);

struct EvalRequest {
  std::string checkpoint;
  ConfigSource config;  // dataset to evaluate on
  std::string out;
  std::string split = "test";
  std::vector<std::string> metrics{"top1", "ece", "fgsm", "occlusion"};
  std::vector<double> eps{8.0 / 255.0};
  std::vector<double> ratios{0.0, 0.25, 0.5, 0.75, 1.0};
  std::size_t patch = 16;
  std::size_t ece_bins = 15;
  std::uint64_t occlusion_seed = 0;
};

/// Writes metrics.csv with one column per requested metric value.
int cmd_eval(const EvalRequest& request, std::ostream& log, std::ostream& err);

struct ExportRequest {
  std::string checkpoint;
  ConfigSource config;  // dataset and [export] options
  std::string out;
};

/// Per set k: set<k>_source<n>.png, set<k>_mask<n>.png (grayscale) and
/// set<k>_mixed.png, with export.txt listing members, ratios and mixed labels.
int cmd_export_mixed(const ExportRequest& request, std::ostream& log, std::ostream& err);

/// Runs the property suites; one PASS/FAIL line per check.
int cmd_selftest(std::ostream& log);

/// CSV column name of a metric value, e.g. fgsm@0.031372549.
std::string metric_column(const std::string& metric, double parameter);

}  // namespace adamix
