#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "adamix/commands.hpp"

using namespace adamix;

namespace {

// Accepts plain numbers and fractions such as 8/255.
double parse_number(const std::string& text) {
  const auto slash = text.find('/');
  std::size_t used = 0;
  if (slash == std::string::npos) {
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  }
  const double num = std::stod(text.substr(0, slash), &used);
  if (used != slash) throw std::invalid_argument(text);
  const std::string den_text = text.substr(slash + 1);
  const double den = std::stod(den_text, &used);
  if (used != den_text.size() || den == 0.0) throw std::invalid_argument(text);
  return num / den;
}

std::vector<double> parse_numbers(const std::vector<std::string>& items, const char* flag) {
  std::vector<double> out;
  for (const auto& item : items) {
    try {
      out.push_back(parse_number(item));
    } catch (const std::exception&) {
      throw CLI::ValidationError(flag, "not a number: " + item);
    }
  }
  return out;
}

void add_config_flags(CLI::App* cmd, ConfigSource& source) {
  cmd->add_option("--config", source.path, "Config file (INI sections; defaults when absent)");
  cmd->add_option("--override", source.overrides, "section.key=value, applied after the file")
      ->take_all();
  cmd->add_option("--seed", source.seed, "Training seed (train.seed)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial automatic mixup: train, evaluate and export mixed samples"};
  app.require_subcommand(1);
  std::string out_help = std::string("Output directory (default: $") + kOutputRootEnv +
                         "/<run id>, else runs/<run id>)";

  TrainRequest train;
  auto* train_cmd = app.add_subcommand("train", "Train a classifier and generator");
  add_config_flags(train_cmd, train.config);
  train_cmd->add_option("--out", train.out, out_help);

  EvalRequest eval;
  std::vector<std::string> eps_text{"8/255"}, ratio_text{"0", "0.25", "0.5", "0.75", "1"};
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  add_config_flags(eval_cmd, eval.config);
  eval_cmd->add_option("--out", eval.out, out_help);
  eval_cmd->add_option("--split", eval.split, "test or train")->capture_default_str();
  eval_cmd->add_option("--metrics", eval.metrics, "top1, top5, ece, fgsm, occlusion")
      ->delimiter(',')
      ->capture_default_str();
  eval_cmd->add_option("--eps", eps_text, "FGSM budgets; fractions allowed")
      ->delimiter(',')
      ->capture_default_str();
  eval_cmd->add_option("--ratios", ratio_text, "Occlusion ratios")
      ->delimiter(',')
      ->capture_default_str();
  eval_cmd->add_option("--patch", eval.patch, "Occlusion patch side")->capture_default_str();
  eval_cmd->add_option("--ece-bins", eval.ece_bins, "Calibration bins")->capture_default_str();
  eval_cmd->add_option("--occlusion-seed", eval.occlusion_seed, "Patch selection seed")
      ->capture_default_str();

  ExportRequest exp;
  auto* export_cmd = app.add_subcommand("export-mixed", "Write sources, masks and mixed images");
  export_cmd->add_option("--checkpoint", exp.checkpoint, "Checkpoint file")->required();
  add_config_flags(export_cmd, exp.config);
  export_cmd->add_option("--out", exp.out, out_help);

  auto* selftest_cmd = app.add_subcommand("selftest", "Run the property suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_code::config;
  }

  if (*train_cmd) return cmd_train(train, std::cout, std::cerr);
  if (*eval_cmd) {
    try {
      eval.eps = parse_numbers(eps_text, "--eps");
      eval.ratios = parse_numbers(ratio_text, "--ratios");
    } catch (const CLI::ValidationError& e) {
      std::cerr << e.what() << "\n";
      return exit_code::config;
    }
    return cmd_eval(eval, std::cout, std::cerr);
  }
  if (*export_cmd) return cmd_export_mixed(exp, std::cout, std::cerr);
  if (*selftest_cmd) return cmd_selftest(std::cout);
  return exit_code::config;
}
