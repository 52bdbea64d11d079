// SPDX-License-Identifier: Apache-2.0
#include "increg/compaction.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

#include "increg/rng.hpp"

namespace increg {

namespace {

const LayerMask* find_mask(const MaskSet& masks, std::size_t layer) {
  for (const auto& m : masks)
    if (m.partition.layer_id() == layer) return &m;
  return nullptr;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

std::vector<std::size_t> unpruned(const GroupMask& mask) {
  std::vector<std::size_t> v;
  for (std::size_t g = 0; g < mask.group_count(); ++g)
    if (!mask.pruned(g)) v.push_back(g);
  return v;
}

}  // namespace

template <typename T>
CompactModel<T> build_compact(const Network<T>& masked, const MaskSet& masks) {
  const NetworkSpec& spec = masked.spec();
  for (const auto& m : masks) {
    const std::size_t id = m.partition.layer_id();
    if (id >= spec.layers.size() || !is_conv(spec.layers[id])) {
      throw ConfigError("mask refers to layer " + std::to_string(id) + ", which is not a conv layer");
    }
    if (m.partition.weight_shape() != masked.params(id).weight.shape()) {
      throw ShapeError(spec.layer_name(id) + ": mask partition does not match weight shape");
    }
  }

  NetworkSpec out_spec = spec;
  out_spec.prune_ratios.clear();
  std::vector<ParamBlock<T>> params(spec.layers.size());
  CompactPlan plan;

  // Channels of the activation entering the current layer that survive.
  std::vector<std::size_t> live = all_indices(spec.input.c);
  std::size_t live_total = spec.input.c;

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const std::string name = spec.layer_name(i);
    if (auto* conv = std::get_if<ConvSpec>(&out_spec.layers[i])) {
      if (conv->kept_columns) throw ConfigError(name + ": layer is already column-compacted");
      const auto& w = masked.params(i).weight;
      const Shape4 ws = w.shape();
      const std::size_t kk = ws.h * ws.w;
      CompactLayerPlan lp;
      lp.layer = i;
      lp.kept_input_channels = live;
      lp.kept_rows = all_indices(ws.n);
      const LayerMask* m = find_mask(masks, i);
      std::vector<std::size_t> cols;  // over the compacted input channels
      if (m && m->partition.type() == GroupType::kRow) {
        lp.kept_rows = unpruned(m->mask);
        if (lp.kept_rows.empty()) {
          throw ConfigError(name + ": every filter is pruned; the network would be disconnected");
        }
      }
      if (m && m->partition.type() == GroupType::kColumn) {
        if (live.size() != ws.c) {
          throw ConfigError(name + ": column masks cannot follow a layer with removed filters");
        }
        lp.kept_columns = unpruned(m->mask);
        cols = lp.kept_columns;
      }
      const std::size_t rows = lp.kept_rows.size();
      Tensor<T> nw;
      if (m && m->partition.type() == GroupType::kColumn) {
        nw = Tensor<T>(Shape4{rows, cols.size(), 1, 1});
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < cols.size(); ++j)
            nw.data()[r * cols.size() + j] = w.data()[lp.kept_rows[r] * ws.inner() + cols[j]];
        conv->kept_columns = cols;
      } else {
        nw = Tensor<T>(Shape4{rows, live.size(), ws.h, ws.w});
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < live.size(); ++c)
            std::copy_n(w.data() + lp.kept_rows[r] * ws.inner() + live[c] * kk, kk,
                        nw.data() + (r * live.size() + c) * kk);
      }
      params[i].weight = std::move(nw);
      for (std::size_t r : lp.kept_rows) params[i].bias.push_back(masked.params(i).bias[r]);
      conv->out_channels = rows;
      live = lp.kept_rows;
      live_total = ws.n;
      plan.layers.push_back(std::move(lp));
    } else if (auto* fc = std::get_if<FcSpec>(&out_spec.layers[i])) {
      const auto& w = masked.params(i).weight;
      const std::size_t in_features = w.shape().c;
      const std::size_t plane = in_features / live_total;
      CompactLayerPlan lp;
      lp.layer = i;
      lp.kept_input_channels = live;
      lp.kept_rows = all_indices(fc->out_features);
      std::vector<std::size_t> features;
      for (std::size_t c : live)
        for (std::size_t p = 0; p < plane; ++p) features.push_back(c * plane + p);
      Tensor<T> nw(Shape4{fc->out_features, features.size(), 1, 1});
      for (std::size_t o = 0; o < fc->out_features; ++o)
        for (std::size_t j = 0; j < features.size(); ++j)
          nw.data()[o * features.size() + j] = w.data()[o * in_features + features[j]];
      params[i].weight = std::move(nw);
      params[i].bias = masked.params(i).bias;
      live = all_indices(fc->out_features);
      live_total = fc->out_features;
      plan.layers.push_back(std::move(lp));
    }
  }
  return CompactModel<T>{Network<T>(std::move(out_spec), std::move(params)), std::move(plan)};
}

template <typename T>
EquivalenceReport equivalence_check(Network<T>& masked, Network<T>& compact, std::size_t inputs,
                                    double tolerance, std::uint64_t seed) {
  const Shape3 in = masked.spec().input;
  if (compact.spec().input != in) throw ShapeError("models disagree on input shape");
  EquivalenceReport rep;
  rep.inputs = inputs;
  rep.tolerance = tolerance;
  if (inputs == 0) {
    rep.passed = true;
    return rep;
  }
  Rng rng(seed);
  Tensor<T> x(Shape4{inputs, in.c, in.h, in.w});
  for (T& v : x.values()) v = static_cast<T>(rng.normal());
  const Tensor<T> a = masked.predict(x);
  const Tensor<T> b = compact.predict(x);
  if (a.shape() != b.shape()) throw ShapeError("models disagree on output shape");
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = std::abs(static_cast<double>(a.data()[j]) - static_cast<double>(b.data()[j]));
    rep.max_abs_diff = std::max(rep.max_abs_diff, d);
  }
  rep.passed = rep.max_abs_diff <= tolerance;
  return rep;
}

template CompactModel<float> build_compact(const Network<float>&, const MaskSet&);
template CompactModel<double> build_compact(const Network<double>&, const MaskSet&);
template EquivalenceReport equivalence_check(Network<float>&, Network<float>&, std::size_t, double,
                                             std::uint64_t);
template EquivalenceReport equivalence_check(Network<double>&, Network<double>&, std::size_t,
                                             double, std::uint64_t);

namespace {

constexpr char kMagic[4] = {'P', 'R', 'N', 'C'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDense = 0xFFFFFFFFu;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  void expect_magic() {
    need(4);
    if (!std::equal(kMagic, kMagic + 4, bytes_.begin() + static_cast<std::ptrdiff_t>(pos_))) {
      throw FormatError("compact model: bad magic");
    }
    pos_ += 4;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("compact model: truncated file");
  }
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t narrow(std::size_t v) {
  if (v >= kDense) throw FormatError("compact model: dimension too large");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void write_compact_model(const Network<float>& model, const std::filesystem::path& path) {
  const NetworkSpec& spec = model.spec();
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kVersion);
  w.u32(narrow(spec.input.c));
  w.u32(narrow(spec.input.h));
  w.u32(narrow(spec.input.w));
  w.u32(narrow(spec.num_classes));
  w.u32(narrow(spec.layers.size()));
  for (const LayerSpec& l : spec.layers) {
    w.u32(static_cast<std::uint32_t>(l.index()));
    if (const auto* c = std::get_if<ConvSpec>(&l)) {
      w.u32(narrow(c->out_channels));
      w.u32(narrow(c->kernel));
      w.u32(narrow(c->stride));
      w.u32(narrow(c->pad));
      if (c->kept_columns) {
        w.u32(narrow(c->kept_columns->size()));
        for (std::size_t j : *c->kept_columns) w.u32(narrow(j));
      } else {
        w.u32(kDense);
      }
    } else if (const auto* f = std::get_if<FcSpec>(&l)) {
      w.u32(narrow(f->out_features));
    } else if (const auto* p = std::get_if<MaxPoolSpec>(&l)) {
      w.u32(narrow(p->kernel));
      w.u32(narrow(p->stride));
    }
  }
  for (std::size_t i : spec.param_layers()) {
    for (float v : model.params(i).weight.storage()) w.f32(v);
    for (float v : model.params(i).bias) w.f32(v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

Network<float> read_compact_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  Reader r(std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));
  r.expect_magic();
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw FormatError("compact model: unsupported version " + std::to_string(version));
  }
  NetworkSpec spec;
  spec.input.c = r.u32();
  spec.input.h = r.u32();
  spec.input.w = r.u32();
  spec.num_classes = r.u32();
  const std::uint32_t count = r.u32();
  if (count > 4096) throw FormatError("compact model: implausible layer count");
  for (std::uint32_t i = 0; i < count; ++i) {
    switch (r.u32()) {
      case 0: {
        ConvSpec c;
        c.out_channels = r.u32();
        c.kernel = r.u32();
        c.stride = r.u32();
        c.pad = r.u32();
        const std::uint32_t k = r.u32();
        if (k != kDense) {
          std::vector<std::size_t> kept(k);
          for (auto& j : kept) j = r.u32();
          c.kept_columns = std::move(kept);
        }
        spec.layers.emplace_back(std::move(c));
        break;
      }
      case 1:
        spec.layers.emplace_back(FcSpec{r.u32()});
        break;
      case 2:
        spec.layers.emplace_back(ReluSpec{});
        break;
      case 3: {
        MaxPoolSpec p;
        p.kernel = r.u32();
        p.stride = r.u32();
        spec.layers.emplace_back(p);
        break;
      }
      default:
        throw FormatError("compact model: unknown layer kind");
    }
  }
  try {
    spec.validate();
  } catch (const Error& e) {
    throw FormatError(std::string("compact model: ") + e.what());
  }
  std::vector<ParamBlock<float>> params(spec.layers.size());
  for (std::size_t i : spec.param_layers()) {
    const Shape4 ws = weight_shape(spec, i);
    Tensor<float> w(ws);
    for (float& v : w.values()) v = r.f32();
    params[i].weight = std::move(w);
    params[i].bias.resize(ws.n);
    for (float& v : params[i].bias) v = r.f32();
  }
  if (!r.done()) throw FormatError("compact model: trailing bytes");
  return Network<float>(std::move(spec), std::move(params));
}

}  // namespace increg
