#include "cigl/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <vector>

#include "cigl/error.hpp"

namespace cigl {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty()) {
    throw ConfigError(key, "cannot parse '" + value + "' as a number");
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(out)) throw ConfigError(key, "must be finite");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw ConfigError(key, "expected 'true' or 'false', got '" + value + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
  std::vector<T> out;
  if (trim(value).empty()) return out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, trim(item)));
  return out;
}

template <typename T>
std::string format_number(T v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
std::string format_list(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ",";
    out += format_number(values[i]);
  }
  return out;
}

std::string format_bool(bool b) { return b ? "true" : "false"; }

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define CIGL_NUM_FIELD(KEY, MEMBER, TYPE)                                                                  \
  Field {                                                                                                  \
    KEY, [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_number<TYPE>(KEY, v); },        \
        [](const ExperimentConfig& c) { return format_number(c.MEMBER); }                                  \
  }
#define CIGL_BOOL_FIELD(KEY, MEMBER)                                                                       \
  Field {                                                                                                  \
    KEY, [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_bool(KEY, v); },                \
        [](const ExperimentConfig& c) { return format_bool(c.MEMBER); }                                    \
  }
#define CIGL_STR_FIELD(KEY, MEMBER)                                                                        \
  Field {                                                                                                  \
    KEY, [](ExperimentConfig& c, const std::string& v) { c.MEMBER = v; },                                 \
        [](const ExperimentConfig& c) { return c.MEMBER; }                                                 \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      Field{"train.method", [](ExperimentConfig& c, const std::string& v) { c.train.method = parse_method(v); },
            [](const ExperimentConfig& c) { return std::string(to_string(c.train.method)); }},
      CIGL_NUM_FIELD("train.epochs", train.epochs, int),
      CIGL_NUM_FIELD("train.batch_size", train.batch_size, std::size_t),
      CIGL_NUM_FIELD("train.seed", train.seed, std::uint64_t),
      CIGL_NUM_FIELD("train.sparsity", train.sparsity, double),
      Field{"train.sparsity_mode",
            [](ExperimentConfig& c, const std::string& v) { c.train.sparsity_mode = parse_allocation_mode(v); },
            [](const ExperimentConfig& c) { return std::string(to_string(c.train.sparsity_mode)); }},
      Field{"train.dense_layers",
            [](ExperimentConfig& c, const std::string& v) {
              c.train.dense_layers = parse_list<std::size_t>("train.dense_layers", v);
            },
            [](const ExperimentConfig& c) { return format_list(c.train.dense_layers); }},
      CIGL_NUM_FIELD("train.update_interval", train.update_interval, long long),
      CIGL_NUM_FIELD("train.update_fraction", train.update_fraction, double),
      CIGL_NUM_FIELD("train.update_end", train.update_end, double),
      CIGL_NUM_FIELD("train.keep_prob", train.keep_prob, double),
      CIGL_BOOL_FIELD("train.wma", train.wma),
      CIGL_NUM_FIELD("train.wma_start_epoch", train.wma_start_epoch, int),
      CIGL_NUM_FIELD("train.wma_period", train.wma_period, int),
      CIGL_NUM_FIELD("train.lr", train.lr.base_lr, double),
      Field{"train.lr_milestones",
            [](ExperimentConfig& c, const std::string& v) {
              c.train.lr.milestones = parse_list<int>("train.lr_milestones", v);
            },
            [](const ExperimentConfig& c) { return format_list(c.train.lr.milestones); }},
      CIGL_NUM_FIELD("train.lr_decay", train.lr.decay_factor, double),
      CIGL_NUM_FIELD("train.momentum", train.momentum, float),
      CIGL_NUM_FIELD("train.weight_decay", train.weight_decay, float),
      CIGL_NUM_FIELD("train.mc_samples", train.mc_samples, std::size_t),
      Field{"model.hidden",
            [](ExperimentConfig& c, const std::string& v) {
              c.train.hidden = parse_list<std::size_t>("model.hidden", v);
            },
            [](const ExperimentConfig& c) { return format_list(c.train.hidden); }},
      CIGL_STR_FIELD("data.source", data.source),
      CIGL_NUM_FIELD("data.n", data.n, std::size_t),
      CIGL_NUM_FIELD("data.noise_sd", data.noise_sd, double),
      CIGL_NUM_FIELD("data.label_noise", data.label_noise, double),
      CIGL_STR_FIELD("data.path", data.path),
      CIGL_STR_FIELD("data.label_column", data.label_column),
      CIGL_STR_FIELD("data.images_path", data.images_path),
      CIGL_STR_FIELD("data.labels_path", data.labels_path),
      CIGL_NUM_FIELD("data.test_fraction", data.test_fraction, double),
      CIGL_BOOL_FIELD("data.standardize", data.standardize),
      CIGL_NUM_FIELD("calib.n_bins", train.n_bins, std::size_t),
      CIGL_BOOL_FIELD("calib.temperature", calib.temperature),
      CIGL_NUM_FIELD("calib.val_fraction", calib.val_fraction, double),
      CIGL_BOOL_FIELD("calib.mixup", calib.mixup),
      CIGL_NUM_FIELD("calib.mixup_alpha", calib.mixup_alpha, double),
      CIGL_NUM_FIELD("calib.label_smoothing", train.label_smoothing, double),
      CIGL_STR_FIELD("output.dir", out_dir),
      CIGL_STR_FIELD("run.id", run_id),
  };
  return table;
}

#undef CIGL_NUM_FIELD
#undef CIGL_BOOL_FIELD
#undef CIGL_STR_FIELD

}  // namespace

void ExperimentConfig::validate() const {
  train.validate();
  if (calib.mixup && !(calib.mixup_alpha > 0.0)) throw ConfigError("calib.mixup_alpha", "must be positive");
  if (!(data.test_fraction > 0.0 && data.test_fraction < 1.0)) {
    throw ConfigError("data.test_fraction", "must lie in (0, 1)");
  }
  if (!(calib.val_fraction > 0.0 && calib.val_fraction < 1.0)) {
    throw ConfigError("calib.val_fraction", "must lie in (0, 1)");
  }
  if (!(data.label_noise >= 0.0 && data.label_noise <= 1.0)) {
    throw ConfigError("data.label_noise", "must lie in [0, 1]");
  }
  if (calib.temperature && (train.method == Method::rigl_mcdp || train.method == Method::cigl_no_wma)) {
    throw ConfigError("calib.temperature", "temperature scaling needs a single-model method");
  }
  if (run_id.empty() || run_id.find('/') != std::string::npos) {
    throw ConfigError("run.id", "must be a non-empty name without '/'");
  }
  namespace fs = std::filesystem;
  auto require_file = [](const std::string& key, const std::string& value) {
    if (value.empty()) throw ConfigError(key, "required for this data source");
    if (!fs::is_regular_file(value)) throw ConfigError(key, "file not found: " + value);
  };
  if (data.source == "two_moons") {
    if (data.n < 2) throw ConfigError("data.n", "need at least two samples");
    if (!(data.noise_sd >= 0.0)) throw ConfigError("data.noise_sd", "must be non-negative");
  } else if (data.source == "csv") {
    require_file("data.path", data.path);
  } else if (data.source == "idx") {
    require_file("data.images_path", data.images_path);
    require_file("data.labels_path", data.labels_path);
  } else {
    throw ConfigError("data.source", "expected two_moons, csv or idx, got '" + data.source + "'");
  }
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::map<std::string, const Field*> by_key;
  for (const auto& f : fields()) by_key[f.key] = &f;

  std::set<std::string> seen;
  std::stringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no), "expected 'key = value'");
    }
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    const auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError(key, "unknown key");
    if (!seen.insert(key).second) throw ConfigError(key, "duplicate key");
    it->second->set(cfg, value);
  }

  if (cfg.train.epochs < 1) throw ConfigError("train.epochs", "must be at least 1");
  if (!seen.contains("train.wma_start_epoch")) {
    cfg.train.wma_start_epoch = static_cast<int>(std::floor(0.8 * cfg.train.epochs));
  }
  if (!seen.contains("train.lr_milestones")) {
    cfg.train.lr.milestones.clear();
    const int half = cfg.train.epochs / 2;
    const int three_q = (3 * cfg.train.epochs) / 4;
    if (half > 0) cfg.train.lr.milestones.push_back(half);
    if (three_q > half) cfg.train.lr.milestones.push_back(three_q);
  }
  cfg.train.mixup_alpha = cfg.calib.mixup ? cfg.calib.mixup_alpha : 0.0;
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& config) {
  std::string out;
  std::string section;
  for (const auto& f : fields()) {
    const std::string prefix = f.key.substr(0, f.key.find('.'));
    if (prefix != section) {
      if (!section.empty()) out += "\n";
      section = prefix;
    }
    out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

}  // namespace cigl
