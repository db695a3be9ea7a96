#include "cigl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "cigl/error.hpp"

namespace cigl {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

json report_to_json(const CalibrationReport& r) {
  json j{{"ece", r.ece}, {"nll", r.nll}, {"accuracy", r.accuracy}};
  j["temperature"] = r.temperature ? json(*r.temperature) : json(nullptr);
  return j;
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& config) {
  const auto seed = config.train.seed;
  Dataset all;
  if (config.data.source == "two_moons") {
    Rng rng = Rng::derive(seed, "data.synth");
    all = synth_two_moons(config.data.n, config.data.noise_sd, rng);
  } else if (config.data.source == "csv") {
    if (config.data.path.empty()) throw ConfigError("data.path", "required for data.source = csv");
    all = load_csv(config.data.path, config.data.label_column);
  } else if (config.data.source == "idx") {
    all = load_idx(config.data.images_path, config.data.labels_path);
  } else {
    throw ConfigError("data.source", "expected two_moons, csv or idx");
  }
  if (config.data.label_noise > 0.0) {
    Rng rng = Rng::derive(seed, "data.noise");
    all = inject_label_noise(all, config.data.label_noise, rng).data;
  }
  PreparedData out;
  {
    Rng rng = Rng::derive(seed, "data.split");
    const double fractions[] = {1.0 - config.data.test_fraction, config.data.test_fraction};
    auto parts = split(all, fractions, rng);
    out.train = std::move(parts[0]);
    out.test = std::move(parts[1]);
  }
  if (config.calib.temperature) {
    Rng rng = Rng::derive(seed, "data.validation_split");
    const double fractions[] = {1.0 - config.calib.val_fraction, config.calib.val_fraction};
    auto parts = split(out.train, fractions, rng);
    out.train = std::move(parts[0]);
    out.validation = std::move(parts[1]);
  }
  if (config.data.standardize) {
    const auto s = Standardizer::fit(out.train);
    s.apply(out.train);
    s.apply(out.test);
    if (out.validation.size() > 0) s.apply(out.validation);
  }
  if (out.train.size() == 0 || out.test.size() == 0) throw ConfigError("data.test_fraction", "a split is empty");
  return out;
}

fs::path run_directory(const ExperimentConfig& config) { return fs::path(config.out_dir) / config.run_id; }

Checkpoint make_checkpoint(const TrainResult& result, std::uint64_t seed) {
  Checkpoint c;
  c.method = result.method;
  c.seed = seed;
  c.model = result.model;
  c.masks = result.mask.layers;
  c.n_models = static_cast<std::uint32_t>(result.n_models);
  return c;
}

std::string history_jsonl(const TrainHistory& history) {
  std::string out;
  for (const auto& r : history) {
    json j{{"epoch", r.epoch},
           {"train_loss", r.train_loss},
           {"test_accuracy", r.test_accuracy},
           {"test_ece", r.test_ece},
           {"test_nll", r.test_nll},
           {"lr", r.lr},
           {"sparsity", r.sparsity},
           {"n_models", r.n_models}};
    out += j.dump() + "\n";
  }
  return out;
}

std::string report_json(const CalibrationReport& report, const CalibrationReport& uncalibrated) {
  json j = report_to_json(report);
  j["uncalibrated"] = report_to_json(uncalibrated);
  return j.dump(2) + "\n";
}

RunOutcome run_experiment(const ExperimentConfig& config, const fs::path& run_dir, bool force) {
  config.validate();
  if (fs::exists(run_dir) && !force) {
    throw Error("run directory " + run_dir.string() + " already exists (use --force to overwrite)");
  }
  const PreparedData data = prepare_data(config);
  fs::create_directories(run_dir);
  spdlog::info("run {}: method {} sparsity {} seed {} ({} train / {} test)", run_dir.string(),
               to_string(config.train.method), config.train.sparsity, config.train.seed, data.train.size(),
               data.test.size());

  RunOutcome out;
  out.dir = run_dir;
  out.result = train(config.train, data.train, data.test);

  Rng eval_rng = Rng::derive(config.train.seed, "eval.mc_dropout",
                             static_cast<std::uint64_t>(config.train.epochs - 1));
  const auto probs = predict_method(out.result, config.train, data.test.features, eval_rng);
  out.uncalibrated = calibration_report(probs, data.test.labels, config.train.n_bins);
  out.report = out.uncalibrated;
  if (config.calib.temperature) {
    const auto val_logits = predict_logits(out.result.model, data.validation.features);
    const double t = fit_temperature(val_logits, data.validation.labels);
    const auto scaled = softmax(predict_logits(out.result.model, data.test.features), t);
    out.report = calibration_report(scaled, data.test.labels, config.train.n_bins);
    out.report.temperature = t;
  }

  save_checkpoint(make_checkpoint(out.result, config.train.seed), run_dir / "model.ckpt");
  write_file_atomic(run_dir / "metrics.jsonl", history_jsonl(out.result.history));
  write_file_atomic(run_dir / "calibration.csv", reliability_csv(out.report.bins));
  write_file_atomic(run_dir / "report.json", report_json(out.report, out.uncalibrated));
  write_file_atomic(run_dir / "config.resolved", serialize_config(config));
  const auto& last = out.result.history.back();
  spdlog::info("run {}: test accuracy {:.4f} ece {:.4f} nll {:.4f}", run_dir.string(), last.test_accuracy,
               last.test_ece, last.test_nll);
  return out;
}

std::vector<SweepRow> sweep(const ExperimentConfig& config, std::span<const double> sparsities,
                            std::span<const std::uint64_t> seeds, const fs::path& out_dir, std::size_t jobs,
                            bool force) {
  if (sparsities.empty()) throw ConfigError("--sparsities", "need at least one sparsity");
  if (seeds.empty()) throw ConfigError("--seeds", "need at least one seed");
  for (double s : sparsities) {
    if (!(s >= 0.0 && s < 1.0)) throw ConfigError("--sparsities", "values must lie in [0, 1)");
  }
  struct Task {
    double sparsity;
    std::uint64_t seed;
    ExperimentConfig config;
  };
  std::vector<Task> tasks;
  for (double s : sparsities) {
    for (auto seed : seeds) {
      ExperimentConfig c = config;
      c.train.sparsity = s;
      c.train.seed = seed;
      c.out_dir = out_dir.string();
      c.run_id = "sparsity_" + format_double(s) + "_seed_" + std::to_string(seed);
      c.validate();
      tasks.push_back({s, seed, std::move(c)});
    }
  }
  fs::create_directories(out_dir);

  std::vector<SweepRow> rows(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        const auto& task = tasks[i];
        const auto outcome = run_experiment(task.config, run_directory(task.config), force);
        const auto& last = outcome.result.history.back();
        rows[i] = {task.sparsity, last.test_accuracy, last.test_ece, last.test_nll, task.seed};
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(jobs, 1, tasks.size());
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);

  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return a.sparsity < b.sparsity || (a.sparsity == b.sparsity && a.seed < b.seed);
  });
  write_file_atomic(out_dir / "sweep.csv", sweep_csv(rows));
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "sparsity,test_accuracy,ece,nll,seed\n";
  for (const auto& r : rows) {
    out += format_double(r.sparsity) + "," + format_double(r.test_accuracy) + "," + format_double(r.ece) + "," +
           format_double(r.nll) + "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

DeterministicMask mask_from_checkpoint(const Checkpoint& ckpt) {
  DeterministicMask m;
  m.layers = ckpt.masks;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    m.target_nnz.push_back(m.nnz(l));
    m.maskable.push_back(true);
  }
  return m;
}

CorrelationReport correlate(const MlpModel& weights, const DeterministicMask& mask, const Dataset& data,
                            double keep_prob, std::size_t draws, Rng& rng) {
  if (draws < 1) throw ConfigError("--draws", "must be at least 1");
  if (!(keep_prob >= 0.0 && keep_prob <= 1.0)) throw ConfigError("--p", "must lie in [0, 1]");
  CorrelationReport r;
  r.base_accuracy = evaluate(apply_masks(weights, mask), data).accuracy;
  double sum = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    const RandomMask z = sample_random_mask(mask, keep_prob, rng);
    const double acc = evaluate(apply_masks(weights, mask, &z), data).accuracy;
    r.draw_accuracies.push_back(acc);
    sum += acc;
  }
  r.mean_masked_accuracy = sum / static_cast<double>(draws);
  r.accuracy_drop = r.base_accuracy - r.mean_masked_accuracy;
  return r;
}

CorrelationReport correlate(const Checkpoint& ckpt, const Dataset& data, double keep_prob, std::size_t draws,
                            Rng& rng) {
  return correlate(ckpt.model, mask_from_checkpoint(ckpt), data, keep_prob, draws, rng);
}

std::string reliability_csv(const ReliabilityBins& bins) {
  std::string out = "bin_lower,bin_upper,count,mean_confidence,mean_accuracy\n";
  for (const auto& b : bins.bins) {
    out += format_double(b.lower) + "," + format_double(b.upper) + "," + std::to_string(b.count) + ",";
    out += b.mean_confidence ? format_double(*b.mean_confidence) : "";
    out += ",";
    out += b.mean_accuracy ? format_double(*b.mean_accuracy) : "";
    out += "\n";
  }
  return out;
}

ReliabilityBins parse_reliability_csv(std::string_view text) {
  std::stringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != "bin_lower,bin_upper,count,mean_confidence,mean_accuracy") {
    throw FormatError("reliability CSV: unexpected header");
  }
  auto num = [](const std::string& s) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw FormatError("reliability CSV: bad number '" + s + "'");
    return v;
  };
  ReliabilityBins bins;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() == 4 && line.back() == ',') cells.emplace_back();
    if (cells.size() != 5) throw FormatError("reliability CSV: expected 5 columns");
    ReliabilityBin b;
    b.lower = num(cells[0]);
    b.upper = num(cells[1]);
    b.count = static_cast<std::size_t>(num(cells[2]));
    if (!cells[3].empty()) b.mean_confidence = num(cells[3]);
    if (!cells[4].empty()) b.mean_accuracy = num(cells[4]);
    bins.n_samples += b.count;
    bins.bins.push_back(b);
  }
  return bins;
}

ReliabilityBins export_reliability(const Checkpoint& ckpt, const Dataset& data, std::size_t n_bins,
                                   const fs::path& csv_path) {
  const auto eval = evaluate(ckpt.model, data);
  auto bins = reliability_bins(eval.probs, data.labels, n_bins);
  write_file_atomic(csv_path, reliability_csv(bins));
  return bins;
}

}  // namespace cigl
