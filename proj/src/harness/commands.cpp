#include "adamix/commands.hpp"

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "adamix/checkpoint.hpp"
#include "adamix/metrics.hpp"
#include "adamix/mixblock.hpp"
#include "adamix/png_io.hpp"
#include "adamix/property_suite.hpp"

namespace adamix {

namespace fs = std::filesystem;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

fs::path prepare_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  return fs::path(dir);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// Maps exceptions onto the exit-code scheme.
template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return exit_code::config;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << "\n";
    return exit_code::config;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << "\n";
    return exit_code::divergence;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return exit_code::io;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::failed;
  }
}

void apply_threads(const RunConfig& config) {
  if (config.run.threads > 0) omp_set_num_threads(config.run.threads);
}

std::pair<Dataset, Dataset> load_data(const RunConfig& config) {
  try {
    return load_dataset(config.data);
  } catch (const IoError&) {
    throw;
  } catch (const Error& e) {
    throw IoError(e.what());
  }
}

const char* kLogHeader =
    "epoch,step,l_amce,l_mce,l_ace,l_amce_teacher,l_cosine,classifier_total,generator_total,xi,"
    "lr,generator_lr,wall_seconds,skipped\n";

std::string log_line(const TrainLogRow& r) {
  std::ostringstream s;
  s << r.epoch << "," << r.step << "," << fmt(r.report.l_amce) << "," << fmt(r.report.l_mce)
    << "," << fmt(r.report.l_ace) << "," << fmt(r.report.l_amce_teacher) << ","
    << fmt(r.report.l_cosine) << "," << fmt(r.report.classifier_total) << ","
    << fmt(r.report.generator_total) << "," << fmt(r.xi) << "," << fmt(r.lr) << ","
    << fmt(r.generator_lr) << "," << fmt(r.wall_seconds) << "," << (r.skipped ? 1 : 0) << "\n";
  return s.str();
}

// Model state shaped by a checkpoint, with its values restored.
std::unique_ptr<ModelState> state_from(const Checkpoint& checkpoint, const RunConfig& config) {
  TrainConfig train = config.train;
  train.layer = checkpoint.layer;
  try {
    auto state = std::make_unique<ModelState>(checkpoint.arch, train);
    restore(*state, checkpoint);
    return state;
  } catch (const ShapeError&) {
    throw;
  } catch (const Error& e) {
    throw ShapeError(e.what());
  }
}

void require_compatible(const ArchDescriptor& arch, const Dataset& data) {
  if (!(arch.input == data.shape)) {
    throw ShapeError("checkpoint expects " + std::to_string(arch.input.channels) + "x" +
                     std::to_string(arch.input.height) + "x" + std::to_string(arch.input.width) +
                     " images, dataset has " + std::to_string(data.shape.channels) + "x" +
                     std::to_string(data.shape.height) + "x" + std::to_string(data.shape.width));
  }
  if (arch.num_classes != data.num_classes) {
    throw ShapeError("checkpoint has " + std::to_string(arch.num_classes) +
                     " classes, dataset has " + std::to_string(data.num_classes));
  }
}

}  // namespace

RunConfig resolve_config(const ConfigSource& source) {
  RunConfig config = parse_config(source.path.empty() ? std::string() : read_text(source.path));
  apply_overrides(config, source.overrides);
  if (source.seed) {
    config.train.seed = *source.seed;
    config.validate();
  }
  return config;
}

std::string run_id(const RunConfig& config, const std::string& command) {
  const std::string text = command + "\n" + serialize_config(config);
  return hex_digest(fnv1a64(std::vector<unsigned char>(text.begin(), text.end()))).substr(0, 12);
}

std::string resolve_output_dir(const std::string& out, const std::string& id) {
  if (!out.empty()) return out;
  const char* root = std::getenv(kOutputRootEnv);
  return (fs::path(root && *root ? root : "runs") / id).string();
}

std::string manifest_text(const RunConfig& config, const std::string& id,
                          const std::string& command, const std::string& out_dir) {
  return "# run_id = " + id + "\n# command = " + command + "\n# output_dir = " + out_dir +
         "\n\n" + serialize_config(config);
}

std::string metric_column(const std::string& metric, double parameter) {
  return metric + "@" + fmt(parameter);
}

int cmd_train(const TrainRequest& request, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig config = resolve_config(request.config);
    apply_threads(config);
    const std::string id = run_id(config, "train");
    const std::string out_dir = resolve_output_dir(request.out, id);
    const fs::path dir = prepare_dir(out_dir);
    write_text(dir / "manifest.ini", manifest_text(config, id, "train", out_dir));
    auto [train, test] = load_data(config);

    ArchDescriptor arch = config.arch;
    ModelState state(arch, config.train);
    BatchIterator batches(train, config.train.batch_options(), config.train.seed);
    const std::size_t total_steps = batches.batches_per_epoch() * config.train.epochs;

    std::ofstream csv(dir / "train_log.csv");
    if (!csv) throw IoError("cannot write " + (dir / "train_log.csv").string());
    csv << kLogHeader;
    log << "run " << id << " -> " << out_dir << "\n";
    const auto start = std::chrono::steady_clock::now();
    for (std::size_t epoch = 0; epoch < config.train.epochs; ++epoch) {
      std::vector<TrainLogRow> rows;
      try {
        rows = train_epoch(state, batches, train.num_classes, config.train, epoch, total_steps);
      } catch (const DivergenceError&) {
        csv.flush();
        throw;
      }
      for (const auto& row : rows) csv << log_line(row);
      csv.flush();
      if (!csv) throw IoError("write failed: train_log.csv");
      const std::size_t every = config.run.checkpoint_every;
      if (every > 0 && (epoch + 1) % every == 0 && epoch + 1 < config.train.epochs) {
        char name[48];
        std::snprintf(name, sizeof name, "checkpoint_epoch_%04zu.aamx", epoch + 1);
        save_checkpoint((dir / name).string(), state, config.train.layer);
      }
      if (!rows.empty()) {
        log << "epoch " << epoch + 1 << "/" << config.train.epochs
            << " classifier " << fmt(rows.back().report.classifier_total) << " generator "
            << fmt(rows.back().report.generator_total) << "\n";
      }
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const std::string checkpoint = (dir / "checkpoint.aamx").string();
    save_checkpoint(checkpoint, state, config.train.layer);

    const std::size_t eval_batch = config.run.eval_batch_size;
    const double train_top1 = top_k_accuracy(predict(state.net, train, eval_batch), 1);
    const double test_top1 =
        test.size() ? top_k_accuracy(predict(state.net, test, eval_batch), 1) : 0.0;
    const std::string digest = file_digest(checkpoint);
    write_text(dir / "summary.csv", "mode,train_top1,test_top1,train_seconds,checkpoint_digest\n" +
                                        mode_name(config.train.mode) + "," + fmt(train_top1) +
                                        "," + fmt(test_top1) + "," + fmt(seconds) + "," + digest +
                                        "\n");
    log << "== summary ==\n"
        << "mode        " << mode_name(config.train.mode) << "\n"
        << "train top-1 " << fmt(train_top1) << "\n"
        << "test top-1  " << fmt(test_top1) << "\n"
        << "seconds     " << fmt(seconds) << "\n"
        << "digest      " << digest << "\n";
    return exit_code::ok;
  });
}

int cmd_eval(const EvalRequest& request, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig config = resolve_config(request.config);
    apply_threads(config);
    if (request.split != "test" && request.split != "train") {
      throw ConfigError("split", 0, "expected test or train, got '" + request.split + "'");
    }
    for (const auto& m : request.metrics) {
      static const char* known[] = {"top1", "top5", "ece", "fgsm", "occlusion"};
      if (std::find(std::begin(known), std::end(known), m) == std::end(known)) {
        throw ConfigError("metrics", 0, "unknown metric '" + m + "'");
      }
    }
    for (double e : request.eps)
      if (!(e >= 0.0)) throw ConfigError("eps", 0, "must be nonnegative");
    for (double r : request.ratios)
      if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("ratios", 0, "must lie in [0, 1]");
    if (request.patch == 0) throw ConfigError("patch", 0, "must be positive");

    const Checkpoint checkpoint = load_checkpoint(request.checkpoint);
    auto [train, test] = load_data(config);
    const Dataset& data = request.split == "train" ? train : test;
    require_compatible(checkpoint.arch, data);
    if (data.size() == 0) throw ConfigError("data", 0, "evaluation split is empty");
    auto state = state_from(checkpoint, config);
    Classifier& net = state->net;
    const std::size_t batch = config.run.eval_batch_size;

    std::vector<std::string> columns;
    std::vector<double> values;
    const PredictionSet preds = predict(net, data, batch);
    for (const auto& m : request.metrics) {
      if (m == "top1") {
        columns.push_back("top1");
        values.push_back(top_k_accuracy(preds, 1));
      } else if (m == "top5") {
        if (preds.num_classes < 5) throw ConfigError("metrics", 0, "top5 needs at least 5 classes");
        columns.push_back("top5");
        values.push_back(top_k_accuracy(preds, 5));
      } else if (m == "ece") {
        columns.push_back("ece");
        values.push_back(ece(preds, EceConfig{request.ece_bins}));
      } else if (m == "fgsm") {
        for (double e : request.eps) {
          columns.push_back(metric_column("fgsm", e));
          values.push_back(fgsm_accuracy(net, data, e, batch));
        }
      } else {
        const auto acc = occlusion_eval(net, data, PatchSize{request.patch, request.patch},
                                        request.ratios, request.occlusion_seed, batch);
        for (std::size_t i = 0; i < acc.size(); ++i) {
          columns.push_back(metric_column("occlusion", request.ratios[i]));
          values.push_back(acc[i]);
        }
      }
    }
    std::string header, row;
    for (std::size_t i = 0; i < columns.size(); ++i) {
      header += (i ? "," : "") + columns[i];
      row += (i ? "," : "") + fmt(values[i]);
    }
    const std::string out_dir = resolve_output_dir(request.out, run_id(config, "eval"));
    const fs::path dir = prepare_dir(out_dir);
    write_text(dir / "metrics.csv", header + "\n" + row + "\n");
    log << "== metrics (" << request.split << ", " << data.size() << " images) ==\n";
    for (std::size_t i = 0; i < columns.size(); ++i) log << columns[i] << " " << fmt(values[i]) << "\n";
    return exit_code::ok;
  });
}

int cmd_export_mixed(const ExportRequest& request, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig config = resolve_config(request.config);
    apply_threads(config);
    const Checkpoint checkpoint = load_checkpoint(request.checkpoint);
    auto [train, test] = load_data(config);
    const Dataset& data = test.size() ? test : train;
    require_compatible(checkpoint.arch, data);
    const ImageShape shape = data.shape;
    if (shape.channels != 1 && shape.channels != 3) {
      throw ConfigError("data.channels", 0, "export supports 1 or 3 channels");
    }
    const ExportOptions& opts = config.export_options;
    if (opts.sets * opts.per_set > data.size()) {
      throw ConfigError("export.sets", 0, "needs more images than the dataset holds");
    }
    auto state = state_from(checkpoint, config);

    // Distinct images for all sets, drawn once from the export seed.
    std::mt19937_64 rng(opts.seed);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(opts.sets * opts.per_set);
    std::vector<MixSet> sets;
    std::vector<std::size_t> labels;
    for (std::size_t k = 0; k < opts.sets; ++k) {
      MixSet set;
      for (std::size_t n = 0; n < opts.per_set; ++n) set.members.push_back(k * opts.per_set + n);
      set.ratios = opts.ratios.empty()
                       ? sample_mix_ratios(opts.per_set, config.train.concentration, rng)
                       : opts.ratios;
      sets.push_back(std::move(set));
    }
    for (auto i : order) labels.push_back(data.images[i].label);
    const Tensor images = data.stack(order);
    Generated g;
    {
      NoGradGuard no_grad;
      g = generate(images, sets, state->theta, state->encoder, checkpoint.layer);
    }

    const std::string out_dir = resolve_output_dir(request.out, run_id(config, "export-mixed"));
    const fs::path dir = prepare_dir(out_dir);
    const std::size_t plane = shape.height * shape.width;
    const std::size_t pixels = shape.size();
    const auto slice = [](const Tensor& t, std::size_t offset, std::size_t count) {
      return std::vector<double>(t.data().begin() + long(offset),
                                 t.data().begin() + long(offset + count));
    };
    std::ostringstream manifest;
    manifest << "# set members ratios labels mixed_label\n";
    for (std::size_t k = 0; k < sets.size(); ++k) {
      const auto prefix = "set" + std::to_string(k);
      std::vector<std::size_t> set_labels;
      for (std::size_t n = 0; n < opts.per_set; ++n) {
        const std::size_t row = sets[k].members[n];
        set_labels.push_back(labels[row]);
        write_png((dir / (prefix + "_source" + std::to_string(n) + ".png")).string(),
                  to_image8(slice(images, row * pixels, pixels), shape.channels, shape.height,
                            shape.width));
        write_png((dir / (prefix + "_mask" + std::to_string(n) + ".png")).string(),
                  to_image8(slice(g.masks, (k * opts.per_set + n) * plane, plane), 1,
                            shape.height, shape.width));
      }
      write_png((dir / (prefix + "_mixed.png")).string(),
                to_image8(slice(g.mixed, k * pixels, pixels), shape.channels, shape.height,
                          shape.width));
      const auto mixed_label = mix_labels(set_labels, sets[k].ratios, data.num_classes);
      manifest << "set " << k << " members";
      for (std::size_t n = 0; n < opts.per_set; ++n) manifest << (n ? "," : " ") << order[sets[k].members[n]];
      manifest << " ratios";
      for (std::size_t n = 0; n < opts.per_set; ++n) manifest << (n ? "," : " ") << fmt(sets[k].ratios[n]);
      manifest << " labels";
      for (std::size_t n = 0; n < opts.per_set; ++n) manifest << (n ? "," : " ") << set_labels[n];
      manifest << " mixed_label";
      for (std::size_t c = 0; c < mixed_label.size(); ++c) manifest << (c ? "," : " ") << fmt(mixed_label[c]);
      manifest << "\n";
    }
    write_text(dir / "export.txt", manifest.str());
    log << "exported " << sets.size() << " sets of " << opts.per_set << " to " << out_dir << "\n";
    return exit_code::ok;
  });
}

int cmd_selftest(std::ostream& log) {
  bool all = true;
  for (const auto& r : property_suites()) {
    all &= r.passed;
    log << (r.passed ? "PASS " : "FAIL ") << r.name << " value=" << fmt(r.value)
        << " threshold=" << fmt(r.threshold);
    if (!r.detail.empty()) log << " (" << r.detail << ")";
    log << "\n";
  }
  return all ? exit_code::ok : exit_code::failed;
}

}  // namespace adamix
