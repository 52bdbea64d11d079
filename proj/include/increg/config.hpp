// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "increg/dataset.hpp"
#include "increg/groups.hpp"
#include "increg/network.hpp"
#include "increg/scheduler.hpp"
#include "increg/sgd.hpp"

namespace increg {

enum class DatasetSource { kSynthetic, kCifar10 };

/// One GEMM shape to benchmark: weights rows×cols times a cols×positions
/// patch matrix.
struct BenchShape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t positions = 0;
};

struct ExperimentConfig {
  NetworkSpec network;
  GroupType group_type = GroupType::kRow;

  SgdConfig sgd;  // prune-phase learning rate, base decay λ, batch size
  double pretrain_learning_rate = 0.0;
  double retrain_learning_rate = 0.0;
  /// Retrain step decay: lr *= gamma every `retrain_lr_step` iterations (0 = off).
  std::size_t retrain_lr_step = 0;
  double retrain_lr_gamma = 0.1;

  SchedulerSettings scheduler;  // kind, A, threshold, interval, constant λ
  std::uint64_t seed = 0;
  std::size_t pretrain_iters = 0;
  std::size_t prune_iter_cap = 0;
  std::size_t retrain_iters = 0;

  DatasetSource dataset = DatasetSource::kSynthetic;
  std::filesystem::path data_dir;
  SyntheticSpec synthetic;
  std::uint64_t data_seed = 0;
  double test_fraction = 0.25;
  bool mean_subtract = false;
  /// Use only the first N training samples (0 = all).
  std::size_t train_limit = 0;

  std::filesystem::path output_dir = "runs/default";

  std::vector<BenchShape> bench_shapes;
  std::vector<double> bench_sparsities{0.0, 0.25, 0.5, 0.75};
  std::size_t bench_reps = 50;
  std::size_t bench_batch = 1;

  std::size_t gradcheck_batch = 4;
  double gradcheck_step = 1e-5;
  double gradcheck_tolerance = 1e-6;
};

/// Parses "conv OUT KERNEL [STRIDE [PAD]]", "fc OUT", "relu", "pool K [S]".
LayerSpec parse_layer(std::string_view text);
std::string format_layer(const LayerSpec& layer);

/// Solves per-layer pruning ratios from remaining-ratio proportions per
/// layer group (e.g. "1:1.5:2") so that the conv FLOPs shrink by `speedup`:
/// keep_l = s·p_{group(l)}, with s chosen so Σ F_l·keep_l = Σ F_l / speedup.
/// Throws ConfigError if any resulting ratio falls outside (0, 1).
std::vector<double> allocate_ratios(std::string_view rule,
                                    const std::vector<std::size_t>& layer_groups,
                                    const std::vector<double>& conv_flops, double speedup);

/// Validates a flat JSON object and applies defaults. Unknown keys,
/// missing required keys and out-of-range values raise ConfigError naming
/// the key.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Dataset described by the config, split into train and test.
CifarSplit load_datasets(const ExperimentConfig& cfg);

}  // namespace increg
