// SPDX-License-Identifier: Apache-2.0
#include "increg/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "increg/gemm.hpp"
#include "increg/rng.hpp"
#include "increg/tensor.hpp"

namespace increg {

namespace {

using Clock = std::chrono::steady_clock;

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

template <typename F>
double time_ms(F&& f, std::size_t calls) {
  const auto t0 = Clock::now();
  for (std::size_t i = 0; i < calls; ++i) f();
  const auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / static_cast<double>(calls);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

BenchRow bench_layer(const BenchShape& shape, double sparsity, GroupType mode,
                     const BenchOptions& opts, std::string layer_id) {
  if (opts.reps < 50) throw ConfigError("bench_reps: at least 50 repetitions are required");
  if (shape.rows == 0 || shape.cols == 0 || shape.positions == 0 || opts.batch == 0) {
    throw ConfigError("bench_shapes: dimensions must be positive");
  }
  if (!(sparsity >= 0.0 && sparsity < 1.0)) {
    throw ConfigError("bench_sparsities: values must be in [0, 1)");
  }
  const std::size_t m = shape.rows;
  const std::size_t k = shape.cols;
  const std::size_t n = shape.positions * opts.batch;
  const std::size_t total = mode == GroupType::kRow ? m : k;
  const auto removed = static_cast<std::size_t>(std::floor(sparsity * static_cast<double>(total) + 0.5));
  const std::size_t kept = std::max<std::size_t>(1, total - removed);

  Rng rng(opts.seed);
  std::vector<float> w(m * k), x(k * n), y(m * n);
  for (float& v : w) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  for (float& v : x) v = static_cast<float>(rng.uniform(-1.0, 1.0));

  // Kept columns are spread evenly, as a scheduler would leave them.
  std::vector<std::size_t> kept_idx(kept);
  for (std::size_t j = 0; j < kept; ++j) kept_idx[j] = j * total / kept;

  const std::size_t cm = mode == GroupType::kRow ? kept : m;
  const std::size_t ck = mode == GroupType::kRow ? k : kept;
  std::vector<float> cw(cm * ck), cx(mode == GroupType::kColumn ? ck * n : 0), cy(cm * n);
  if (mode == GroupType::kColumn && kept == total) cx = x;
  for (std::size_t r = 0; r < cm; ++r)
    for (std::size_t c = 0; c < ck; ++c)
      cw[r * ck + c] = mode == GroupType::kRow ? w[kept_idx[r] * k + c] : w[r * k + kept_idx[c]];

  auto dense = [&] {
    gemm(Transpose::kNo, Transpose::kNo, m, n, k, 1.0f, w.data(), k, x.data(), n, 0.0f, y.data(), n);
  };
  auto gather = [&] {
    for (std::size_t c = 0; c < ck; ++c)
      std::copy_n(x.data() + kept_idx[c] * n, n, cx.data() + c * n);
  };
  auto compact_gemm = [&] {
    const float* b = mode == GroupType::kRow ? x.data() : cx.data();
    gemm(Transpose::kNo, Transpose::kNo, cm, n, ck, 1.0f, cw.data(), ck, b, n, 0.0f, cy.data(), n);
  };
  // Nothing removed means the compacted layer is the dense layer: no gather.
  const bool needs_gather = mode == GroupType::kColumn && kept < total;
  auto compact = [&] {
    if (needs_gather) gather();
    compact_gemm();
  };

  for (std::size_t i = 0; i < opts.warmup; ++i) {
    dense();
    compact();
  }
  std::size_t calls = 1;
  const double probe = std::min(time_ms(dense, 1), time_ms(compact, 1));
  if (probe < opts.min_sample_ms) {
    calls = static_cast<std::size_t>(std::ceil(opts.min_sample_ms / std::max(probe, 1e-6)));
  }

  std::vector<double> td, tc, tg;
  for (std::size_t r = 0; r < opts.reps; ++r) {
    td.push_back(time_ms(dense, calls));
    tc.push_back(time_ms(compact, calls));
    if (mode == GroupType::kColumn) tg.push_back(time_ms(compact_gemm, calls));
  }

  BenchRow row;
  row.layer_id = std::move(layer_id);
  row.mode = mode;
  row.sparsity = sparsity;
  row.dense_ms = median(td);
  row.compact_ms = median(tc);
  row.compact_gemm_ms = mode == GroupType::kColumn ? median(tg) : row.compact_ms;
  row.speedup = row.dense_ms / row.compact_ms;
  row.dense_mean_ms = mean(td);
  row.compact_mean_ms = mean(tc);
  row.rows = m;
  row.cols = k;
  row.positions = shape.positions;
  row.kept = kept;
  row.batch = opts.batch;
  row.reps = opts.reps;
  row.inner_calls = calls;
  row.threads = gemm_threads();
  return row;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "layer_id,mode,sparsity,dense_ms,compact_ms,speedup,compact_gemm_ms,dense_mean_ms,"
         "compact_mean_ms,rows,cols,positions,kept,batch,reps,inner_calls,threads\n";
  for (const auto& r : rows) {
    out << r.layer_id << ',' << to_string(r.mode) << ',' << fmt(r.sparsity) << ','
        << fmt(r.dense_ms) << ',' << fmt(r.compact_ms) << ',' << fmt(r.speedup) << ','
        << fmt(r.compact_gemm_ms) << ',' << fmt(r.dense_mean_ms) << ',' << fmt(r.compact_mean_ms)
        << ',' << r.rows << ',' << r.cols << ',' << r.positions << ',' << r.kept << ','
        << r.batch << ',' << r.reps << ',' << r.inner_calls << ',' << r.threads << '\n';
  }
  return out.str();
}

std::string environment_note() {
  std::string cpu = "unknown cpu";
  std::ifstream info("/proc/cpuinfo");
  for (std::string line; std::getline(info, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) cpu = line.substr(colon + 2);
      break;
    }
  }
  std::ostringstream out;
  out << cpu << "; hardware threads " << std::thread::hardware_concurrency() << "; gemm threads "
      << gemm_threads();
#if defined(__VERSION__)
  out << "; compiler " << __VERSION__;
#endif
  return out.str();
}

}  // namespace increg
