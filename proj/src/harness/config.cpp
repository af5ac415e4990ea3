#include "adamix/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>

namespace adamix {

namespace {

struct Field {
  const char* section;
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

// Value errors carry no field name; the caller attaches it.
struct ValueError {
  std::string message;
};

template <typename T>
T parse_integer(const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ValueError{"expected a nonnegative integer, got '" + v + "'"};
  }
  return out;
}

double parse_double(const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty() || !std::isfinite(out)) {
    throw ValueError{"expected a finite number, got '" + v + "'"};
  }
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ValueError{"expected true or false, got '" + v + "'"};
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> parts;
  if (trim(v).empty()) return parts;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(trim(item));
  return parts;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
std::string format_list(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(values[i]);
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ValueError{message};
}

#define SIZE_FIELD(section, key, member)                                                   \
  Field {                                                                                  \
    section, key, [](RunConfig& c, const std::string& v) {                                 \
      c.member = parse_integer<std::size_t>(v);                                            \
    },                                                                                     \
        [](const RunConfig& c) { return std::to_string(c.member); }                        \
  }
#define U64_FIELD(section, key, member)                                                    \
  Field {                                                                                  \
    section, key, [](RunConfig& c, const std::string& v) {                                 \
      c.member = parse_integer<std::uint64_t>(v);                                          \
    },                                                                                     \
        [](const RunConfig& c) { return std::to_string(c.member); }                        \
  }
#define DOUBLE_FIELD(section, key, member)                                                 \
  Field {                                                                                  \
    section, key, [](RunConfig& c, const std::string& v) { c.member = parse_double(v); }, \
        [](const RunConfig& c) { return format_double(c.member); }                         \
  }
#define BOOL_FIELD(section, key, member)                                                   \
  Field {                                                                                  \
    section, key, [](RunConfig& c, const std::string& v) { c.member = parse_bool(v); },   \
        [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }        \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"data", "source",
       [](RunConfig& c, const std::string& v) {
         if (v == "synthetic") {
           c.data.source = DataSource::Synthetic;
         } else if (v == "cifar") {
           c.data.source = DataSource::CifarBinary;
         } else {
           throw ValueError{"expected synthetic or cifar, got '" + v + "'"};
         }
       },
       [](const RunConfig& c) {
         return std::string(c.data.source == DataSource::Synthetic ? "synthetic" : "cifar");
       }},
      {"data", "train_path", [](RunConfig& c, const std::string& v) { c.data.train_path = v; },
       [](const RunConfig& c) { return c.data.train_path; }},
      {"data", "test_path", [](RunConfig& c, const std::string& v) { c.data.test_path = v; },
       [](const RunConfig& c) { return c.data.test_path; }},
      BOOL_FIELD("data", "coarse_label_byte", data.coarse_label_byte),
      SIZE_FIELD("data", "num_classes", data.num_classes),
      SIZE_FIELD("data", "channels", data.shape.channels),
      SIZE_FIELD("data", "height", data.shape.height),
      SIZE_FIELD("data", "width", data.shape.width),
      SIZE_FIELD("data", "train_size", data.train_size),
      SIZE_FIELD("data", "test_size", data.test_size),
      U64_FIELD("data", "seed", data.seed),
      DOUBLE_FIELD("data", "noise", data.noise),

      {"model", "widths",
       [](RunConfig& c, const std::string& v) {
         c.arch.widths.clear();
         for (const auto& w : split_list(v)) c.arch.widths.push_back(parse_integer<std::size_t>(w));
       },
       [](const RunConfig& c) { return format_list(c.arch.widths); }},
      SIZE_FIELD("model", "blocks_per_stage", arch.blocks_per_stage),

      {"train", "mode", [](RunConfig& c, const std::string& v) {
         try {
           c.train.mode = parse_mode(v);
         } catch (const Error& e) {
           throw ValueError{e.what()};
         }
       },
       [](const RunConfig& c) { return mode_name(c.train.mode); }},
      DOUBLE_FIELD("train", "alpha", train.weights.alpha),
      DOUBLE_FIELD("train", "beta", train.weights.beta),
      DOUBLE_FIELD("train", "cosine_sign", train.weights.cosine_sign),
      DOUBLE_FIELD("train", "concentration", train.concentration),
      SIZE_FIELD("train", "per_set", train.per_set),
      SIZE_FIELD("train", "sets_per_batch", train.sets_per_batch),
      SIZE_FIELD("train", "batch_size", train.batch_size),
      DOUBLE_FIELD("train", "lr", train.lr),
      DOUBLE_FIELD("train", "generator_lr", train.generator_lr),
      DOUBLE_FIELD("train", "momentum", train.momentum),
      DOUBLE_FIELD("train", "weight_decay", train.weight_decay),
      SIZE_FIELD("train", "classifier_steps", train.classifier_steps),
      SIZE_FIELD("train", "generator_steps", train.generator_steps),
      SIZE_FIELD("train", "epochs", train.epochs),
      DOUBLE_FIELD("train", "xi_start", train.xi_start),
      SIZE_FIELD("train", "layer", train.layer),
      U64_FIELD("train", "seed", train.seed),
      SIZE_FIELD("train", "max_skips", train.max_skips),
      BOOL_FIELD("train", "flip", train.augment.flip),
      BOOL_FIELD("train", "crop", train.augment.crop),
      SIZE_FIELD("train", "crop_pad", train.augment.crop_pad),

      SIZE_FIELD("export", "sets", export_options.sets),
      SIZE_FIELD("export", "per_set", export_options.per_set),
      {"export", "ratios",
       [](RunConfig& c, const std::string& v) {
         c.export_options.ratios.clear();
         for (const auto& r : split_list(v)) c.export_options.ratios.push_back(parse_double(r));
       },
       [](const RunConfig& c) { return format_list(c.export_options.ratios); }},
      U64_FIELD("export", "seed", export_options.seed),

      SIZE_FIELD("run", "checkpoint_every", run.checkpoint_every),
      SIZE_FIELD("run", "eval_batch_size", run.eval_batch_size),
      {"run", "threads",
       [](RunConfig& c, const std::string& v) { c.run.threads = parse_integer<int>(v); },
       [](const RunConfig& c) { return std::to_string(c.run.threads); }},
  };
  return table;
}

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields())
    if (section == f.section && key == f.key) return &f;
  return nullptr;
}

void set_field(RunConfig& config, const std::string& section, const std::string& key,
               const std::string& value, std::size_t line) {
  const std::string name = section + "." + key;
  const Field* field = find_field(section, key);
  if (!field) throw ConfigError(name, line, "unknown key");
  try {
    field->set(config, value);
  } catch (const ValueError& e) {
    throw ConfigError(name, line, e.message);
  }
}

// Range checks that name a single field.
void validate_fields(const RunConfig& c) {
  const auto check = [](bool ok, const char* field, const std::string& message) {
    if (!ok) throw ConfigError(field, 0, message);
  };
  const auto unit = [&](double v, const char* field) {
    check(v >= 0.0 && v <= 1.0, field, "must lie in [0, 1], got " + format_double(v));
  };
  unit(c.train.weights.alpha, "train.alpha");
  unit(c.train.weights.beta, "train.beta");
  check(c.train.weights.cosine_sign == 1.0 || c.train.weights.cosine_sign == -1.0,
        "train.cosine_sign", "must be 1 or -1");
  check(c.train.concentration > 0.0, "train.concentration", "must be positive");
  check(c.train.lr > 0.0, "train.lr", "must be positive");
  check(c.train.generator_lr > 0.0, "train.generator_lr", "must be positive");
  check(c.train.momentum >= 0.0 && c.train.momentum < 1.0, "train.momentum",
        "must lie in [0, 1)");
  check(c.train.weight_decay >= 0.0, "train.weight_decay", "must be nonnegative");
  unit(c.train.xi_start, "train.xi_start");
  check(c.train.epochs >= 1, "train.epochs", "must be at least 1");
  check(c.train.classifier_steps >= 1, "train.classifier_steps", "must be at least 1");
  check(c.train.batch_size >= 1, "train.batch_size", "must be at least 1");
  check(c.train.per_set >= 2 || c.train.mode == TrainMode::Vanilla, "train.per_set",
        "must be at least 2 for mixing modes");
  check(c.train.mode != TrainMode::InputMixup || c.train.per_set == 2, "train.per_set",
        "input-mixup needs 2");
  check(c.train.layer >= 1 && c.train.layer <= c.arch.widths.size(), "train.layer",
        "must lie in [1, " + std::to_string(c.arch.widths.size()) + "]");
  check(c.arch.widths.size() >= 4, "model.widths", "needs at least 4 stages");
  for (auto w : c.arch.widths) check(w >= 1, "model.widths", "widths must be positive");
  check(c.arch.blocks_per_stage >= 1, "model.blocks_per_stage", "must be at least 1");
  check(c.data.num_classes >= 2, "data.num_classes", "must be at least 2");
  check(c.data.shape.channels >= 1, "data.channels", "must be positive");
  check(c.data.shape.height >= 1, "data.height", "must be positive");
  check(c.data.shape.width >= 1, "data.width", "must be positive");
  check(c.data.train_size >= 1, "data.train_size", "must be positive");
  check(c.data.noise >= 0.0, "data.noise", "must be nonnegative");
  check(c.data.source == DataSource::Synthetic || !c.data.train_path.empty(), "data.train_path",
        "required for cifar");
  check(c.data.source == DataSource::Synthetic || !c.data.test_path.empty(), "data.test_path",
        "required for cifar");
  check(c.export_options.per_set >= 2, "export.per_set", "must be at least 2");
  check(c.export_options.sets >= 1, "export.sets", "must be at least 1");
  if (!c.export_options.ratios.empty()) {
    check(c.export_options.ratios.size() == c.export_options.per_set, "export.ratios",
          "needs one ratio per set member");
    double total = 0.0;
    for (double r : c.export_options.ratios) {
      check(r >= 0.0, "export.ratios", "ratios must be nonnegative");
      total += r;
    }
    check(std::abs(total - 1.0) <= 1e-6, "export.ratios", "ratios must sum to 1");
  }
  check(c.run.eval_batch_size >= 1, "run.eval_batch_size", "must be positive");
  check(c.run.threads >= 0, "run.threads", "must be nonnegative");
}

}  // namespace

ConfigError::ConfigError(const std::string& field, std::size_t line, const std::string& message)
    : Error((line ? "line " + std::to_string(line) + ": " : std::string()) + field + ": " +
            message),
      field_(field),
      line_(line) {}

void RunConfig::validate() const {
  validate_fields(*this);
  ArchDescriptor a = arch;
  a.input = data.shape;
  a.num_classes = data.num_classes;
  try {
    a.validate();
    train.validate(a);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("config", 0, e.what());
  }
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string raw, section;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string s = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(s, line, "malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      static const char* known[] = {"data", "model", "train", "export", "run"};
      if (std::find(std::begin(known), std::end(known), section) == std::end(known)) {
        throw ConfigError(section, line, "unknown section");
      }
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(s, line, "expected key = value");
    const std::string key = trim(s.substr(0, eq));
    if (section.empty()) throw ConfigError(key, line, "key outside a section");
    set_field(config, section, key, trim(s.substr(eq + 1)), line);
  }
  config.arch.input = config.data.shape;
  config.arch.num_classes = config.data.num_classes;
  config.validate();
  return config;
}

std::string serialize_config(const RunConfig& config) {
  std::string out, section;
  for (const auto& f : fields()) {
    if (section != f.section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += std::string(f.key) + " = " + f.get(config) + "\n";
  }
  return out;
}

namespace {
void set_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const std::string name = trim(assignment.substr(0, eq));
  const auto dot = name.find('.');
  if (eq == std::string::npos || dot == std::string::npos) {
    throw ConfigError(assignment, 0, "override must look like section.key=value");
  }
  set_field(config, name.substr(0, dot), name.substr(dot + 1), trim(assignment.substr(eq + 1)),
            0);
  config.arch.input = config.data.shape;
  config.arch.num_classes = config.data.num_classes;
}
}  // namespace

void apply_override(RunConfig& config, const std::string& assignment) {
  apply_overrides(config, {assignment});
}

void apply_overrides(RunConfig& config, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) set_override(config, a);
  config.validate();
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(std::string(f.section) + "." + f.key);
  return keys;
}

}  // namespace adamix
