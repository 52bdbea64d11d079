// SPDX-License-Identifier: Apache-2.0
#include "increg/experiment.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "increg/compaction.hpp"
#include "increg/sgd.hpp"

namespace increg {

using nlohmann::ordered_json;

std::string_view to_string(RunPhase p) {
  switch (p) {
    case RunPhase::kPretrain:
      return "pretrain";
    case RunPhase::kPrune:
      return "prune";
    case RunPhase::kRetrain:
      return "retrain";
  }
  return "?";
}

std::vector<double> RunRecord::target_sparsity() const {
  std::vector<double> out;
  for (const auto& l : layers)
    out.push_back(l.groups ? static_cast<double>(l.target) / static_cast<double>(l.groups) : 0.0);
  return out;
}

std::vector<double> RunRecord::achieved_sparsity() const {
  std::vector<double> out;
  for (const auto& l : layers)
    out.push_back(l.groups ? static_cast<double>(l.pruned) / static_cast<double>(l.groups) : 0.0);
  return out;
}

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string network_fingerprint(const NetworkSpec& spec) {
  std::string s = std::to_string(spec.input.c) + "x" + std::to_string(spec.input.h) + "x" +
                  std::to_string(spec.input.w);
  for (const auto& l : spec.layers) s += "|" + format_layer(l);
  s += "|classes " + std::to_string(spec.num_classes);
  return s;
}

std::string dataset_fingerprint(const CifarSplit& split) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
      h ^= (v >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  };
  for (const Dataset* d : {&split.train, &split.test}) {
    mix(static_cast<std::uint32_t>(d->size()));
    for (float p : d->pixels) mix(std::bit_cast<std::uint32_t>(p));
    for (int l : d->labels) mix(static_cast<std::uint32_t>(l));
  }
  return hex64(h);
}

/// Training-side state shared by all three phases.
class Trainer {
 public:
  Trainer(const ExperimentConfig& cfg, Network<float>& net, const Dataset& train)
      : cfg_(cfg),
        net_(net),
        train_(train),
        sampler_(train.size(), cfg.sgd.batch_size, cfg.seed ^ 0x9e3779b97f4a7c15ull) {}

  /// Forward and backward on the next batch; returns L.
  double step_gradients() {
    const auto idx = sampler_.next();
    gather_batch(train_, idx, images_, labels_);
    const double loss = net_.forward(images_, labels_);
    net_.backward();
    return loss;
  }

  /// λ/2·Σw² over every weight plus Σ λ_g/2·‖W_g‖² for scheduled layers.
  double regularizer(const std::vector<std::size_t>& scheduled,
                     const std::vector<std::vector<double>>& group_lambdas,
                     std::span<const LayerPruneState> states) const {
    double base = 0.0;
    for (std::size_t i : net_.spec().param_layers())
      for (float w : net_.params(i).weight.storage()) base += static_cast<double>(w) * w;
    double extra = 0.0;
    for (std::size_t s = 0; s < scheduled.size() && s < group_lambdas.size(); ++s) {
      const auto& part = states[s].partition();
      const auto& w = net_.params(scheduled[s]).weight.storage();
      for (std::size_t g = 0; g < part.group_count(); ++g) {
        if (group_lambdas[s][g] == 0.0) continue;
        double sq = 0.0;
        for (std::size_t i : part.members(g)) sq += static_cast<double>(w[i]) * w[i];
        extra += 0.5 * group_lambdas[s][g] * sq;
      }
    }
    return 0.5 * cfg_.sgd.weight_decay * base + extra;
  }

  /// SGD on every parameter layer. `group_decay[i]` and `weight_masks[i]`
  /// are per-weight buffers for network layer i (empty when unused).
  void apply(double lr, const std::vector<std::vector<double>>& group_decay,
             const std::vector<std::vector<std::uint8_t>>& weight_masks,
             const std::vector<std::vector<std::uint8_t>>& bias_masks) {
    SgdConfig sgd = cfg_.sgd;
    sgd.learning_rate = lr;
    for (std::size_t i : net_.spec().param_layers()) {
      auto& p = net_.params(i);
      const auto& g = net_.grads(i);
      sgd_step<float>(p.weight.values(), std::span<const float>(g.weight.storage()),
                      group_decay[i], sgd, weight_masks[i]);
      sgd_step_plain<float>(p.bias, g.bias, lr, bias_masks[i]);
    }
  }

 private:
  const ExperimentConfig& cfg_;
  Network<float>& net_;
  const Dataset& train_;
  BatchSampler sampler_;
  Tensor<float> images_;
  std::vector<int> labels_;
};

/// Per-weight and per-bias masks for every network layer from a mask set.
void masks_for_layers(const NetworkSpec& spec, const MaskSet& masks,
                      std::vector<std::vector<std::uint8_t>>& weights,
                      std::vector<std::vector<std::uint8_t>>& biases) {
  weights.assign(spec.layers.size(), {});
  biases.assign(spec.layers.size(), {});
  for (const auto& m : masks) {
    const std::size_t id = m.partition.layer_id();
    weights[id] = m.mask.weight_mask(m.partition);
    if (m.partition.type() == GroupType::kRow) {
      biases[id].assign(m.partition.group_count(), 0);
      for (std::size_t g = 0; g < m.partition.group_count(); ++g)
        biases[id][g] = m.mask.pruned(g) ? 1 : 0;
    }
  }
}

}  // namespace

double evaluate_accuracy(Network<float>& net, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  constexpr std::size_t kChunk = 256;
  std::size_t correct = 0;
  Tensor<float> images;
  std::vector<int> labels;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, data.size() - start);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), start);
    gather_batch(data, idx, images, labels);
    const Tensor<float> logits = net.predict(images);
    const std::size_t k = logits.shape().c;
    for (std::size_t b = 0; b < n; ++b) {
      const float* row = logits.data() + b * k;
      const auto best = static_cast<int>(std::max_element(row, row + k) - row);
      if (best == labels[b]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

RunRecord run_experiment(const ExperimentConfig& cfg) {
  const CifarSplit split = load_datasets(cfg);
  if (split.train.size() < cfg.sgd.batch_size) {
    throw ConfigError("batch_size: larger than the training set (" +
                      std::to_string(split.train.size()) + " samples)");
  }
  const Dataset& test = split.test.size() ? split.test : split.train;
  const NetworkSpec& spec = cfg.network;
  Network<float> net(spec, cfg.seed);

  RunRecord rec;
  rec.scheduler = cfg.scheduler.kind;
  rec.group_type = cfg.group_type;
  rec.network_fingerprint = network_fingerprint(spec);
  rec.dataset_fingerprint = dataset_fingerprint(split);

  const std::vector<std::size_t> scheduled = spec.conv_layers();
  std::vector<LayerPruneState> states;
  for (std::size_t s = 0; s < scheduled.size(); ++s) {
    const std::size_t id = scheduled[s];
    LayerPruneSettings ls;
    ls.prune_ratio = spec.prune_ratios.at(s);
    ls.max_increment = cfg.scheduler.max_increment;
    ls.threshold = cfg.scheduler.threshold;
    ls.update_interval = cfg.scheduler.update_interval;
    states.emplace_back(partition(id, net.params(id).weight.shape(), cfg.group_type), ls,
                        spec.layer_name(id));
    rec.layer_names.push_back(spec.layer_name(id));
  }
  PruneScheduler scheduler(std::move(states), cfg.scheduler);

  Trainer trainer(cfg, net, split.train);
  const std::size_t layer_total = spec.layers.size();
  const std::vector<std::vector<double>> no_decay(layer_total);
  std::vector<std::vector<std::uint8_t>> weight_masks(layer_total), bias_masks(layer_total);
  std::int64_t iteration = 0;

  auto log_row = [&](RunPhase phase, double loss, const std::vector<std::vector<double>>& lambdas) {
    IterationRow row;
    row.iteration = iteration;
    row.phase = phase;
    row.loss = loss;
    row.objective = loss + trainer.regularizer(scheduled, lambdas, scheduler.layers());
    for (std::size_t s = 0; s < scheduled.size(); ++s) {
      row.sparsity.push_back(layer_sparsity(scheduler.layers()[s].mask()));
      if (s < lambdas.size() && !lambdas[s].empty()) {
        const auto& l = lambdas[s];
        row.lambda_min.push_back(*std::min_element(l.begin(), l.end()));
        row.lambda_max.push_back(*std::max_element(l.begin(), l.end()));
        row.lambda_mean.push_back(std::accumulate(l.begin(), l.end(), 0.0) /
                                  static_cast<double>(l.size()));
      } else {
        row.lambda_min.push_back(0.0);
        row.lambda_mean.push_back(0.0);
        row.lambda_max.push_back(0.0);
      }
    }
    rec.rows.push_back(std::move(row));
  };

  for (std::size_t t = 0; t < cfg.pretrain_iters; ++t, ++iteration) {
    const double loss = trainer.step_gradients();
    trainer.apply(cfg.pretrain_learning_rate, no_decay, weight_masks, bias_masks);
    log_row(RunPhase::kPretrain, loss, {});
  }
  rec.accuracy_pretrained = evaluate_accuracy(net, test);
  rec.train_accuracy_pretrained = evaluate_accuracy(net, split.train);

  std::vector<std::vector<double>> group_decay(layer_total);
  for (std::size_t t = 0; t < cfg.prune_iter_cap && !scheduler.all_reached(); ++t, ++iteration) {
    const double loss = trainer.step_gradients();
    std::vector<std::span<float>> buffers;
    for (std::size_t id : scheduled) buffers.push_back(net.params(id).weight.values());
    auto out = scheduler.tick<float>(std::span<const std::span<float>>(buffers), iteration);
    for (auto& e : out.events) rec.events.push_back(std::move(e));
    masks_for_layers(spec, scheduler.current_masks(), weight_masks, bias_masks);
    for (std::size_t s = 0; s < scheduled.size(); ++s) {
      group_decay[scheduled[s]] = expand_to_weights(scheduler.layers()[s].partition(), out.lambdas[s]);
    }
    trainer.apply(cfg.sgd.learning_rate, group_decay, weight_masks, bias_masks);
    log_row(RunPhase::kPrune, loss, out.lambdas);
    ++rec.prune_iterations;
  }
  rec.complete = scheduler.all_reached();
  rec.masks = rec.complete ? scheduler.finalize_for_retraining() : scheduler.current_masks();
  masks_for_layers(spec, rec.masks, weight_masks, bias_masks);
  // Weights crossed the threshold before the last update; make them exact.
  for (const auto& m : rec.masks) apply_mask<float>(net.params(m.partition.layer_id()).weight.values(), m.partition, m.mask);
  for (std::size_t i = 0; i < layer_total; ++i)
    for (std::size_t b = 0; b < bias_masks[i].size(); ++b)
      if (bias_masks[i][b]) net.params(i).bias[b] = 0.0f;
  rec.accuracy_pruned = evaluate_accuracy(net, test);

  double lr = cfg.retrain_learning_rate;
  for (std::size_t t = 0; t < cfg.retrain_iters; ++t, ++iteration) {
    if (cfg.retrain_lr_step > 0 && t > 0 && t % cfg.retrain_lr_step == 0) lr *= cfg.retrain_lr_gamma;
    const double loss = trainer.step_gradients();
    trainer.apply(lr, no_decay, weight_masks, bias_masks);
    log_row(RunPhase::kRetrain, loss, {});
  }
  rec.accuracy_retrained = cfg.retrain_iters ? evaluate_accuracy(net, test) : rec.accuracy_pruned;

  for (const auto& l : scheduler.layers()) {
    rec.layers.push_back(LayerOutcome{l.name(), l.group_count(), l.target_count(), l.pruned_count(),
                                      l.phase() == Phase::kReached});
  }
  rec.model = std::move(net);
  return rec;
}

std::string run_record_csv(const RunRecord& record) {
  std::ostringstream out;
  out << "iteration,phase,loss,objective";
  for (const auto& n : record.layer_names) {
    out << ',' << n << "_sparsity," << n << "_lambda_min," << n << "_lambda_mean," << n
        << "_lambda_max";
  }
  out << '\n';
  for (const auto& r : record.rows) {
    out << r.iteration << ',' << to_string(r.phase) << ',' << num(r.loss) << ','
        << num(r.objective);
    for (std::size_t s = 0; s < record.layer_names.size(); ++s) {
      out << ',' << num(r.sparsity[s]) << ',' << num(r.lambda_min[s]) << ','
          << num(r.lambda_mean[s]) << ',' << num(r.lambda_max[s]);
    }
    out << '\n';
  }
  return out.str();
}

std::string events_jsonl(const RunRecord& record) {
  std::string out;
  for (const auto& e : record.events) out += to_json_line(e) + "\n";
  return out;
}

ordered_json run_summary(const RunRecord& record) {
  ordered_json j;
  j["scheduler"] = std::string(to_string(record.scheduler));
  j["group_type"] = std::string(to_string(record.group_type));
  j["network"] = record.network_fingerprint;
  j["dataset"] = record.dataset_fingerprint;
  j["complete"] = record.complete;
  j["prune_iterations"] = record.prune_iterations;
  std::size_t groups = 0, target = 0, pruned = 0;
  ordered_json layers = ordered_json::array();
  for (const auto& l : record.layers) {
    groups += l.groups;
    target += l.target;
    pruned += l.pruned;
    ordered_json lj;
    lj["name"] = l.name;
    lj["groups"] = l.groups;
    lj["target"] = l.target;
    lj["pruned"] = l.pruned;
    lj["reached"] = l.reached;
    layers.push_back(std::move(lj));
  }
  j["layers"] = std::move(layers);
  j["target_sparsity"] = groups ? static_cast<double>(target) / static_cast<double>(groups) : 0.0;
  j["achieved_sparsity"] = groups ? static_cast<double>(pruned) / static_cast<double>(groups) : 0.0;
  j["accuracy_pretrained"] = record.accuracy_pretrained;
  j["train_accuracy_pretrained"] = record.train_accuracy_pretrained;
  j["accuracy_pruned"] = record.accuracy_pruned;
  j["accuracy_retrained"] = record.accuracy_retrained;
  return j;
}

void write_run_outputs(const RunRecord& record, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const char* name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + (dir / name).string());
    out << text;
  };
  write("run_record.csv", run_record_csv(record));
  write("events.jsonl", events_jsonl(record));
  write("summary.json", run_summary(record).dump(2) + "\n");
  if (record.model) {
    try {
      const auto compact = build_compact(*record.model, record.masks);
      write_compact_model(compact.model, dir / "compact_model.bin");
    } catch (const ConfigError&) {
      // A layer lost every filter; there is no connected compact model.
      std::filesystem::remove(dir / "compact_model.bin");
    }
  }
}

std::vector<ComparisonRow> compare_runs(const std::vector<ordered_json>& summaries,
                                        const std::vector<std::string>& labels) {
  if (summaries.empty()) throw ComparisonError("compare: no runs given");
  if (!labels.empty() && labels.size() != summaries.size()) {
    throw ComparisonError("compare: label count does not match run count");
  }
  std::vector<ComparisonRow> rows;
  const ordered_json& first = summaries.front();
  for (std::size_t i = 0; i < summaries.size(); ++i) {
    const ordered_json& s = summaries[i];
    const std::string label = labels.empty() ? "run" + std::to_string(i) : labels[i];
    try {
      for (const char* key : {"network", "dataset"}) {
        if (s.at(key) != first.at(key)) {
          throw ComparisonError("compare: " + label + " has a different " + key);
        }
      }
      std::vector<std::size_t> ta, tb;
      for (const auto& l : s.at("layers")) ta.push_back(l.at("target").get<std::size_t>());
      for (const auto& l : first.at("layers")) tb.push_back(l.at("target").get<std::size_t>());
      if (ta != tb) throw ComparisonError("compare: " + label + " has a different target sparsity");
      ComparisonRow r;
      r.label = label;
      r.scheduler = s.at("scheduler").get<std::string>();
      r.group_type = s.at("group_type").get<std::string>();
      r.target_sparsity = s.at("target_sparsity").get<double>();
      r.achieved_sparsity = s.at("achieved_sparsity").get<double>();
      r.complete = s.at("complete").get<bool>();
      r.accuracy_pruned = s.at("accuracy_pruned").get<double>();
      r.accuracy_retrained = s.at("accuracy_retrained").get<double>();
      rows.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ComparisonError("compare: " + label + ": malformed summary: " + e.what());
    }
  }
  return rows;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::ostringstream out;
  out << "label,scheduler,group_type,target_sparsity,achieved_sparsity,complete,accuracy_pruned,"
         "accuracy_retrained\n";
  for (const auto& r : rows) {
    out << r.label << ',' << r.scheduler << ',' << r.group_type << ',' << num(r.target_sparsity)
        << ',' << num(r.achieved_sparsity) << ',' << (r.complete ? "true" : "false") << ','
        << num(r.accuracy_pruned) << ',' << num(r.accuracy_retrained) << '\n';
  }
  return out.str();
}

}  // namespace increg
