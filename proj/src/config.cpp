// SPDX-License-Identifier: Apache-2.0
#include "increg/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace increg {
namespace {

using nlohmann::json;

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "layers", "group_type", "prune_ratio", "ratio_rule", "layer_groups", "speedup",
      "weight_decay", "max_increment", "learning_rate", "pretrain_learning_rate",
      "retrain_learning_rate", "retrain_lr_step", "retrain_lr_gamma", "batch_size", "seed",
      "pretrain_iters", "prune_iter_cap", "retrain_iters", "scheduler", "constant_lambda",
      "threshold", "update_interval", "dataset", "data_dir", "synthetic_classes",
      "synthetic_samples_per_class", "synthetic_image", "synthetic_noise", "synthetic_jitter",
      "data_seed", "test_fraction", "mean_subtract", "train_limit", "output_dir",
      "bench_shapes", "bench_sparsities", "bench_reps", "bench_batch", "gradcheck_batch",
      "gradcheck_step", "gradcheck_tolerance"};
  return keys;
}

const json& require(const json& j, const std::string& key) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(key + ": required key is missing");
  return *it;
}

double get_number(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError(key + ": expected a number");
  return v.get<double>();
}

std::size_t get_count(const json& v, const std::string& key) {
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError(key + ": expected a non-negative integer");
  }
  return v.get<std::size_t>();
}

std::string get_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError(key + ": expected a string");
  return v.get<std::string>();
}

double number_or(const json& j, const std::string& key, double fallback) {
  auto it = j.find(key);
  return it == j.end() ? fallback : get_number(*it, key);
}

std::size_t count_or(const json& j, const std::string& key, std::size_t fallback) {
  auto it = j.find(key);
  return it == j.end() ? fallback : get_count(*it, key);
}

std::vector<std::size_t> parse_dims(std::string_view text, const std::string& key) {
  std::vector<std::size_t> dims;
  std::string token;
  std::istringstream in{std::string(text)};
  while (std::getline(in, token, 'x')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(token, &used);
      if (used != token.size() || v <= 0) throw std::invalid_argument(token);
      dims.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError(key + ": bad dimension list \"" + std::string(text) + "\"");
    }
  }
  return dims;
}

}  // namespace

LayerSpec parse_layer(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string kind;
  in >> kind;
  std::vector<long long> args;
  long long v;
  while (in >> v) args.push_back(v);
  if (!in.eof()) throw ConfigError("layers: cannot parse \"" + std::string(text) + "\"");
  for (long long a : args) {
    if (a < 0) throw ConfigError("layers: negative value in \"" + std::string(text) + "\"");
  }
  auto arg = [&](std::size_t i, std::size_t fallback) {
    return i < args.size() ? static_cast<std::size_t>(args[i]) : fallback;
  };
  if (kind == "conv" && args.size() >= 2 && args.size() <= 4) {
    return ConvSpec{arg(0, 0), arg(1, 0), arg(2, 1), arg(3, 0), std::nullopt};
  }
  if (kind == "fc" && args.size() == 1) return FcSpec{arg(0, 0)};
  if (kind == "relu" && args.empty()) return ReluSpec{};
  if (kind == "pool" && !args.empty() && args.size() <= 2) {
    return MaxPoolSpec{arg(0, 2), arg(1, arg(0, 2))};
  }
  throw ConfigError("layers: cannot parse \"" + std::string(text) + "\"");
}

std::string format_layer(const LayerSpec& layer) {
  if (const auto* c = std::get_if<ConvSpec>(&layer)) {
    return "conv " + std::to_string(c->out_channels) + " " + std::to_string(c->kernel) + " " +
           std::to_string(c->stride) + " " + std::to_string(c->pad);
  }
  if (const auto* f = std::get_if<FcSpec>(&layer)) return "fc " + std::to_string(f->out_features);
  if (std::holds_alternative<ReluSpec>(layer)) return "relu";
  const auto& p = std::get<MaxPoolSpec>(layer);
  return "pool " + std::to_string(p.kernel) + " " + std::to_string(p.stride);
}

std::vector<double> allocate_ratios(std::string_view rule,
                                    const std::vector<std::size_t>& layer_groups,
                                    const std::vector<double>& conv_flops, double speedup) {
  std::vector<double> proportions;
  {
    std::istringstream in{std::string(rule)};
    std::string token;
    while (std::getline(in, token, ':')) {
      try {
        std::size_t used = 0;
        const double p = std::stod(token, &used);
        if (used != token.size() || !(p > 0.0)) throw std::invalid_argument(token);
        proportions.push_back(p);
      } catch (const std::exception&) {
        throw ConfigError("ratio_rule: bad proportion list \"" + std::string(rule) + "\"");
      }
    }
  }
  if (proportions.empty()) throw ConfigError("ratio_rule: empty");
  if (layer_groups.size() != conv_flops.size()) {
    throw ConfigError("layer_groups: expected one group index per conv layer (" +
                      std::to_string(conv_flops.size()) + ")");
  }
  if (!(speedup > 1.0)) throw ConfigError("speedup: must be > 1");
  double total = 0.0, weighted = 0.0;
  for (std::size_t l = 0; l < conv_flops.size(); ++l) {
    if (layer_groups[l] >= proportions.size()) {
      throw ConfigError("layer_groups[" + std::to_string(l) + "]: group " +
                        std::to_string(layer_groups[l]) + " has no proportion in ratio_rule");
    }
    total += conv_flops[l];
    weighted += conv_flops[l] * proportions[layer_groups[l]];
  }
  const double scale = total / (speedup * weighted);
  std::vector<double> ratios;
  for (std::size_t l = 0; l < conv_flops.size(); ++l) {
    const double r = 1.0 - scale * proportions[layer_groups[l]];
    if (!(r > 0.0 && r < 1.0)) {
      throw ConfigError("ratio_rule: conv layer " + std::to_string(l) + " gets ratio " +
                        std::to_string(r) + ", outside (0, 1)");
    }
    ratios.push_back(r);
  }
  return ratios;
}

ExperimentConfig parse_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known_keys().contains(key)) throw ConfigError(key + ": unknown key");
  }
  ExperimentConfig cfg;

  // Dataset first: it fixes the network input and class count.
  const std::string source = j.contains("dataset") ? get_string(j["dataset"], "dataset")
                                                   : std::string("synthetic");
  if (source == "synthetic") {
    cfg.dataset = DatasetSource::kSynthetic;
    cfg.synthetic.classes = count_or(j, "synthetic_classes", cfg.synthetic.classes);
    cfg.synthetic.samples_per_class =
        count_or(j, "synthetic_samples_per_class", cfg.synthetic.samples_per_class);
    if (j.contains("synthetic_image")) {
      const auto dims = parse_dims(get_string(j["synthetic_image"], "synthetic_image"),
                                   "synthetic_image");
      if (dims.size() != 3) throw ConfigError("synthetic_image: expected CxHxW");
      cfg.synthetic.image = Shape3{dims[0], dims[1], dims[2]};
    }
    cfg.synthetic.noise = number_or(j, "synthetic_noise", cfg.synthetic.noise);
    cfg.synthetic.jitter = number_or(j, "synthetic_jitter", cfg.synthetic.jitter);
    if (cfg.synthetic.classes < 2) throw ConfigError("synthetic_classes: need at least 2");
    if (cfg.synthetic.samples_per_class == 0) {
      throw ConfigError("synthetic_samples_per_class: must be positive");
    }
    cfg.network.input = cfg.synthetic.image;
    cfg.network.num_classes = cfg.synthetic.classes;
  } else if (source == "cifar10") {
    cfg.dataset = DatasetSource::kCifar10;
    cfg.data_dir = get_string(require(j, "data_dir"), "data_dir");
    cfg.network.input = Shape3{3, 32, 32};
    cfg.network.num_classes = 10;
  } else {
    throw ConfigError("dataset: expected \"synthetic\" or \"cifar10\", got \"" + source + "\"");
  }
  cfg.test_fraction = number_or(j, "test_fraction", cfg.test_fraction);
  if (!(cfg.test_fraction >= 0.0 && cfg.test_fraction < 1.0)) {
    throw ConfigError("test_fraction: must be in [0, 1)");
  }
  if (j.contains("mean_subtract")) {
    if (!j["mean_subtract"].is_boolean()) throw ConfigError("mean_subtract: expected a boolean");
    cfg.mean_subtract = j["mean_subtract"].get<bool>();
  }
  cfg.train_limit = count_or(j, "train_limit", 0);

  const json& layers = require(j, "layers");
  if (!layers.is_array() || layers.empty()) {
    throw ConfigError("layers: expected a non-empty array of layer strings");
  }
  for (const auto& l : layers) cfg.network.layers.push_back(parse_layer(get_string(l, "layers")));
  try {
    cfg.network.output_shapes();
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("layers: ") + e.what());
  }
  const std::size_t convs = cfg.network.conv_layers().size();

  if (j.contains("group_type")) {
    cfg.group_type = parse_group_type(get_string(j["group_type"], "group_type"));
  }

  if (j.contains("prune_ratio") && j.contains("ratio_rule")) {
    throw ConfigError("prune_ratio: give either prune_ratio or ratio_rule, not both");
  }
  if (j.contains("ratio_rule")) {
    const auto& groups_json = require(j, "layer_groups");
    if (!groups_json.is_array()) throw ConfigError("layer_groups: expected an array");
    std::vector<std::size_t> groups;
    for (const auto& g : groups_json) groups.push_back(get_count(g, "layer_groups"));
    const double speedup = get_number(require(j, "speedup"), "speedup");
    cfg.network.prune_ratios = allocate_ratios(get_string(j["ratio_rule"], "ratio_rule"), groups,
                                               cfg.network.conv_flops(), speedup);
  } else {
    const json& pr = require(j, "prune_ratio");
    if (pr.is_number()) {
      cfg.network.prune_ratios.assign(convs, get_number(pr, "prune_ratio"));
    } else if (pr.is_array()) {
      for (const auto& v : pr) cfg.network.prune_ratios.push_back(get_number(v, "prune_ratio"));
      if (cfg.network.prune_ratios.size() != convs) {
        throw ConfigError("prune_ratio: expected " + std::to_string(convs) + " values, got " +
                          std::to_string(cfg.network.prune_ratios.size()));
      }
    } else {
      throw ConfigError("prune_ratio: expected a number or an array");
    }
  }
  for (std::size_t i = 0; i < cfg.network.prune_ratios.size(); ++i) {
    const double r = cfg.network.prune_ratios[i];
    if (!(r > 0.0 && r < 1.0)) {
      throw ConfigError("prune_ratio[" + std::to_string(i) + "]: " + std::to_string(r) +
                        " outside (0, 1)");
    }
  }
  try {
    cfg.network.validate();
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("layers: ") + e.what());
  }

  cfg.sgd.weight_decay = get_number(require(j, "weight_decay"), "weight_decay");
  cfg.sgd.learning_rate = get_number(require(j, "learning_rate"), "learning_rate");
  cfg.sgd.batch_size = get_count(require(j, "batch_size"), "batch_size");
  cfg.sgd.validate();
  cfg.pretrain_learning_rate = number_or(j, "pretrain_learning_rate", cfg.sgd.learning_rate);
  cfg.retrain_learning_rate = number_or(j, "retrain_learning_rate", cfg.sgd.learning_rate);
  if (!(cfg.pretrain_learning_rate > 0.0)) throw ConfigError("pretrain_learning_rate: must be > 0");
  if (!(cfg.retrain_learning_rate > 0.0)) throw ConfigError("retrain_learning_rate: must be > 0");
  cfg.retrain_lr_step = count_or(j, "retrain_lr_step", 0);
  cfg.retrain_lr_gamma = number_or(j, "retrain_lr_gamma", cfg.retrain_lr_gamma);
  if (!(cfg.retrain_lr_gamma > 0.0)) throw ConfigError("retrain_lr_gamma: must be > 0");

  const json& seed = require(j, "seed");
  cfg.seed = get_count(seed, "seed");
  cfg.data_seed = count_or(j, "data_seed", cfg.seed);
  cfg.pretrain_iters = count_or(j, "pretrain_iters", 0);
  cfg.prune_iter_cap = get_count(require(j, "prune_iter_cap"), "prune_iter_cap");
  cfg.retrain_iters = count_or(j, "retrain_iters", 0);

  cfg.scheduler.kind = j.contains("scheduler")
                           ? parse_scheduler_kind(get_string(j["scheduler"], "scheduler"))
                           : SchedulerKind::kIncReg;
  cfg.scheduler.max_increment = number_or(j, "max_increment", 0.5 * cfg.sgd.weight_decay);
  cfg.scheduler.threshold = number_or(j, "threshold", 1e-6);
  cfg.scheduler.update_interval = count_or(j, "update_interval", 1);
  if (cfg.scheduler.kind == SchedulerKind::kIncReg && !(cfg.scheduler.max_increment > 0.0)) {
    throw ConfigError("max_increment: A must be > 0 (defaults to half of weight_decay)");
  }
  if (!(cfg.scheduler.threshold >= 0.0)) throw ConfigError("threshold: must be >= 0");
  if (cfg.scheduler.update_interval == 0) throw ConfigError("update_interval: must be >= 1");
  if (cfg.scheduler.kind == SchedulerKind::kConstant) {
    cfg.scheduler.constant_lambda = get_number(require(j, "constant_lambda"), "constant_lambda");
    if (!(cfg.scheduler.constant_lambda >= 0.0)) {
      throw ConfigError("constant_lambda: must be >= 0");
    }
  }

  if (j.contains("output_dir")) cfg.output_dir = get_string(j["output_dir"], "output_dir");

  if (j.contains("bench_shapes")) {
    if (!j["bench_shapes"].is_array()) throw ConfigError("bench_shapes: expected an array");
    for (const auto& s : j["bench_shapes"]) {
      const auto dims = parse_dims(get_string(s, "bench_shapes"), "bench_shapes");
      if (dims.size() != 3) throw ConfigError("bench_shapes: expected ROWSxCOLSxPOSITIONS");
      cfg.bench_shapes.push_back(BenchShape{dims[0], dims[1], dims[2]});
    }
  }
  if (j.contains("bench_sparsities")) {
    if (!j["bench_sparsities"].is_array()) {
      throw ConfigError("bench_sparsities: expected an array");
    }
    cfg.bench_sparsities.clear();
    for (const auto& v : j["bench_sparsities"]) {
      const double s = get_number(v, "bench_sparsities");
      if (!(s >= 0.0 && s < 1.0)) throw ConfigError("bench_sparsities: values must be in [0, 1)");
      cfg.bench_sparsities.push_back(s);
    }
  }
  cfg.bench_reps = count_or(j, "bench_reps", cfg.bench_reps);
  cfg.bench_batch = count_or(j, "bench_batch", cfg.bench_batch);
  if (cfg.bench_reps < 50) throw ConfigError("bench_reps: must be >= 50");
  if (cfg.bench_batch == 0) throw ConfigError("bench_batch: must be positive");

  cfg.gradcheck_batch = count_or(j, "gradcheck_batch", cfg.gradcheck_batch);
  cfg.gradcheck_step = number_or(j, "gradcheck_step", cfg.gradcheck_step);
  cfg.gradcheck_tolerance = number_or(j, "gradcheck_tolerance", cfg.gradcheck_tolerance);
  if (cfg.gradcheck_batch == 0) throw ConfigError("gradcheck_batch: must be positive");
  if (!(cfg.gradcheck_step > 0.0)) throw ConfigError("gradcheck_step: must be > 0");
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  if (const char* env = std::getenv("PRUNE_SEED_OVERRIDE")) {
    try {
      j["seed"] = std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError("PRUNE_SEED_OVERRIDE: not an unsigned integer");
    }
  }
  return parse_config(j);
}

CifarSplit load_datasets(const ExperimentConfig& cfg) {
  CifarSplit split;
  if (cfg.dataset == DatasetSource::kSynthetic) {
    split = split_dataset(make_synthetic(cfg.synthetic, cfg.data_seed), cfg.test_fraction,
                          cfg.data_seed ^ 0x5eedu);
  } else {
    split = load_cifar10(cfg.data_dir);
    if (split.test.labels.empty()) {
      split = split_dataset(split.train, cfg.test_fraction, cfg.data_seed ^ 0x5eedu);
    }
  }
  if (cfg.train_limit > 0 && cfg.train_limit < split.train.size()) {
    split.train.labels.resize(cfg.train_limit);
    split.train.pixels.resize(cfg.train_limit * split.train.image.count());
  }
  if (cfg.mean_subtract) {
    const auto means = channel_means(split.train);
    subtract_channel_means(split.train, means);
    if (!split.test.labels.empty()) subtract_channel_means(split.test, means);
  }
  return split;
}

}  // namespace increg
