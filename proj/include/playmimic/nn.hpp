// Copyright 2026 The PlayMimic Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "playmimic/error.hpp"
#include "playmimic/graph.hpp"
#include "playmimic/rng.hpp"
#include "playmimic/tensor.hpp"

namespace playmimic {

// Named parameter set with Adam state. Iteration is in name order, and every
// parameter is initialized from a generator derived from (seed, name), so
// values do not depend on registration order.
template <typename T>
class ParamStoreT {
 public:
  struct Entry {
    TensorT<T> value;
    TensorT<T> grad;
    TensorT<T> m;
    TensorT<T> v;
  };

  explicit ParamStoreT(uint64_t init_seed = 0) : init_seed_(init_seed) {}

  enum class Init { Zero, One, HeNormal, XavierUniform, Normal002 };

  Entry& create(const std::string& name, std::vector<int> shape, Init init, int fan_in = 0) {
    require(!entries_.count(name), Err::ShapeMismatch, "duplicate parameter " + name);
    Entry& e = entries_[name];
    e.value = TensorT<T>(shape);
    e.grad = TensorT<T>(shape);
    e.m = TensorT<T>(shape);
    e.v = TensorT<T>(shape);
    Rng rng = derive_rng(init_seed_, "param/" + name);
    switch (init) {
      case Init::Zero:
        break;
      case Init::One:
        for (int64_t i = 0; i < e.value.numel(); ++i) e.value[i] = T(1);
        break;
      case Init::HeNormal: {
        double std = std::sqrt(2.0 / std::max(1, fan_in));
        for (int64_t i = 0; i < e.value.numel(); ++i) e.value[i] = static_cast<T>(rng.normal(0, std));
        break;
      }
      case Init::XavierUniform: {
        int fo = static_cast<int>(e.value.numel()) / std::max(1, fan_in);
        double lim = std::sqrt(6.0 / (fan_in + fo));
        for (int64_t i = 0; i < e.value.numel(); ++i)
          e.value[i] = static_cast<T>(rng.uniform(-lim, lim));
        break;
      }
      case Init::Normal002:
        for (int64_t i = 0; i < e.value.numel(); ++i) e.value[i] = static_cast<T>(rng.normal(0, 0.02));
        break;
    }
    return e;
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  Entry& at(const std::string& name) {
    auto it = entries_.find(name);
    require(it != entries_.end(), Err::ShapeMismatch, "unknown parameter " + name);
    return it->second;
  }

  const Entry& at(const std::string& name) const {
    auto it = entries_.find(name);
    require(it != entries_.end(), Err::ShapeMismatch, "unknown parameter " + name);
    return it->second;
  }

  std::map<std::string, Entry>& entries() { return entries_; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

  void zero_grads() {
    for (auto& [name, e] : entries_)
      std::fill(e.grad.vec().begin(), e.grad.vec().end(), T(0));
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& [name, e] : entries_) n += e.value.numel();
    return n;
  }

  bool grads_finite() const {
    for (const auto& [name, e] : entries_)
      if (!e.grad.all_finite()) return false;
    return true;
  }

  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    ++adam_t_;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam_t_));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam_t_));
    for (auto& [name, e] : entries_) {
      T* w = e.value.data();
      T* g = e.grad.data();
      T* m = e.m.data();
      T* v = e.v.data();
      for (int64_t i = 0; i < e.value.numel(); ++i) {
        m[i] = static_cast<T>(beta1 * m[i] + (1.0 - beta1) * g[i]);
        v[i] = static_cast<T>(beta2 * v[i] + (1.0 - beta2) * double(g[i]) * double(g[i]));
        double mh = m[i] / bc1;
        double vh = v[i] / bc2;
        w[i] = static_cast<T>(w[i] - lr * mh / (std::sqrt(vh) + eps));
      }
    }
  }

  int64_t adam_t() const { return adam_t_; }
  void set_adam_t(int64_t t) { adam_t_ = t; }
  uint64_t init_seed() const { return init_seed_; }

  // Content hash over parameter values, name order. Stable across runs.
  uint64_t checksum() const {
    uint64_t h = 1469598103934665603ull;
    for (const auto& [name, e] : entries_) {
      h = fnv1a(name, h);
      h = fnv1a_bytes(e.value.data(), sizeof(T) * static_cast<size_t>(e.value.numel()), h);
    }
    return h;
  }

 private:
  std::map<std::string, Entry> entries_;
  uint64_t init_seed_;
  int64_t adam_t_ = 0;
};

using ParamStore = ParamStoreT<float>;

// ---------------------------------------------------------------------------
// Layers. Each registers its parameters in a ParamStore under a name prefix
// and builds graph nodes on demand. Pointer stability relies on std::map.
// ---------------------------------------------------------------------------

template <typename T>
struct LinearLayer {
  typename ParamStoreT<T>::Entry* w = nullptr;
  typename ParamStoreT<T>::Entry* b = nullptr;
  int in = 0, out = 0;

  LinearLayer() = default;
  LinearLayer(ParamStoreT<T>& ps, const std::string& name, int in_dim, int out_dim)
      : in(in_dim), out(out_dim) {
    w = &ps.create(name + ".w", {in_dim, out_dim}, ParamStoreT<T>::Init::XavierUniform, in_dim);
    b = &ps.create(name + ".b", {out_dim}, ParamStoreT<T>::Init::Zero);
  }

  typename GraphT<T>::Var forward(GraphT<T>& g, typename GraphT<T>::Var x) const {
    return g.linear(x, g.param(&w->value, &w->grad), g.param(&b->value, &b->grad));
  }
};

template <typename T>
struct Conv2dLayer {
  typename ParamStoreT<T>::Entry* w = nullptr;
  typename ParamStoreT<T>::Entry* b = nullptr;
  int stride = 1, pad = 0;

  Conv2dLayer() = default;
  Conv2dLayer(ParamStoreT<T>& ps, const std::string& name, int in_ch, int out_ch, int k, int s,
              int p)
      : stride(s), pad(p) {
    w = &ps.create(name + ".w", {out_ch, in_ch, k, k}, ParamStoreT<T>::Init::HeNormal,
                   in_ch * k * k);
    b = &ps.create(name + ".b", {out_ch}, ParamStoreT<T>::Init::Zero);
  }

  typename GraphT<T>::Var forward(GraphT<T>& g, typename GraphT<T>::Var x) const {
    return g.conv2d(x, g.param(&w->value, &w->grad), g.param(&b->value, &b->grad), stride, pad);
  }
};

// conv-relu-conv plus a 1x1 projection shortcut when shape changes.
template <typename T>
struct ResidualBlock {
  Conv2dLayer<T> conv1, conv2, proj;
  bool use_proj = false;

  ResidualBlock() = default;
  ResidualBlock(ParamStoreT<T>& ps, const std::string& name, int in_ch, int out_ch, int stride) {
    conv1 = Conv2dLayer<T>(ps, name + ".conv1", in_ch, out_ch, 3, stride, 1);
    conv2 = Conv2dLayer<T>(ps, name + ".conv2", out_ch, out_ch, 3, 1, 1);
    use_proj = (stride != 1 || in_ch != out_ch);
    if (use_proj) proj = Conv2dLayer<T>(ps, name + ".proj", in_ch, out_ch, 1, stride, 0);
  }

  typename GraphT<T>::Var forward(GraphT<T>& g, typename GraphT<T>::Var x) const {
    auto h = conv2.forward(g, g.relu(conv1.forward(g, x)));
    auto s = use_proj ? proj.forward(g, x) : x;
    return g.relu(g.add(h, s));
  }
};

// Small residual image encoder: 5x5 strided stem, residual stages halving the
// spatial size down to 4x4, global average pool, linear head to feature_dim.
template <typename T>
struct ConvEncoder {
  Conv2dLayer<T> stem;
  std::vector<ResidualBlock<T>> stages;
  LinearLayer<T> head;
  int image_size = 64;
  int feature_dim = 64;

  ConvEncoder() = default;
  ConvEncoder(ParamStoreT<T>& ps, const std::string& name, int image, int in_ch,
              const std::vector<int>& channels, int feat_dim)
      : image_size(image), feature_dim(feat_dim) {
    require(channels.size() >= 2, Err::BadConfig, "encoder needs stem + stages");
    int stem_stride = 4;
    stem = Conv2dLayer<T>(ps, name + ".stem", in_ch, channels[0], 5, stem_stride, 2);
    int spatial = (image + 2 * 2 - 5) / stem_stride + 1;
    int prev = channels[0];
    for (size_t i = 1; i < channels.size(); ++i) {
      int stride = spatial > 4 ? 2 : 1;
      stages.emplace_back(ps, name + ".stage" + std::to_string(i), prev, channels[i], stride);
      spatial = (spatial + 2 - 3) / stride + 1;
      prev = channels[i];
    }
    head = LinearLayer<T>(ps, name + ".head", prev, feat_dim);
  }

  // x [N,3,H,W] -> [N,feature_dim]
  typename GraphT<T>::Var forward(GraphT<T>& g, typename GraphT<T>::Var x) const {
    auto h = g.relu(stem.forward(g, x));
    for (const auto& st : stages) h = st.forward(g, h);
    return head.forward(g, g.global_avgpool(h));
  }
};

template <typename T>
struct MlpLayer {
  std::vector<LinearLayer<T>> layers;

  MlpLayer() = default;
  // hidden dims then a linear output layer; relu between.
  MlpLayer(ParamStoreT<T>& ps, const std::string& name, int in_dim,
           const std::vector<int>& hidden, int out_dim) {
    int prev = in_dim;
    for (size_t i = 0; i < hidden.size(); ++i) {
      layers.emplace_back(ps, name + ".fc" + std::to_string(i), prev, hidden[i]);
      prev = hidden[i];
    }
    layers.emplace_back(ps, name + ".out", prev, out_dim);
  }

  typename GraphT<T>::Var forward(GraphT<T>& g, typename GraphT<T>::Var x) const {
    auto h = x;
    for (size_t i = 0; i + 1 < layers.size(); ++i) h = g.relu(layers[i].forward(g, h));
    return layers.back().forward(g, h);
  }
};

template <typename T>
struct LayerNormLayer {
  typename ParamStoreT<T>::Entry* gamma = nullptr;
  typename ParamStoreT<T>::Entry* beta = nullptr;

  LayerNormLayer() = default;
  LayerNormLayer(ParamStoreT<T>& ps, const std::string& name, int dim) {
    gamma = &ps.create(name + ".g", {dim}, ParamStoreT<T>::Init::One);
    beta = &ps.create(name + ".b", {dim}, ParamStoreT<T>::Init::Zero);
  }

  typename GraphT<T>::Var forward(GraphT<T>& g, typename GraphT<T>::Var x) const {
    return g.layernorm(x, g.param(&gamma->value, &gamma->grad), g.param(&beta->value, &beta->grad));
  }
};

// Pre-norm causal self-attention block (GPT style).
template <typename T>
struct TransformerBlock {
  LayerNormLayer<T> ln1, ln2;
  LinearLayer<T> qkv, attn_proj, mlp_fc, mlp_proj;
  int heads = 4;
  int dim = 0;

  TransformerBlock() = default;
  TransformerBlock(ParamStoreT<T>& ps, const std::string& name, int d, int n_heads, int mlp_mult)
      : heads(n_heads), dim(d) {
    require(d % n_heads == 0, Err::BadConfig, "embed dim not divisible by heads");
    ln1 = LayerNormLayer<T>(ps, name + ".ln1", d);
    ln2 = LayerNormLayer<T>(ps, name + ".ln2", d);
    qkv = LinearLayer<T>(ps, name + ".qkv", d, 3 * d);
    attn_proj = LinearLayer<T>(ps, name + ".attn_proj", d, d);
    mlp_fc = LinearLayer<T>(ps, name + ".mlp_fc", d, mlp_mult * d);
    mlp_proj = LinearLayer<T>(ps, name + ".mlp_proj", mlp_mult * d, d);
  }

  // x [B,T,D]
  typename GraphT<T>::Var forward(GraphT<T>& g, typename GraphT<T>::Var x, double dropout,
                                  Rng& rng, bool train) const {
    const auto& xv = g.val(x);
    int b = xv.dim(0), t = xv.dim(1), d = xv.dim(2);
    int hd = d / heads;
    auto h = ln1.forward(g, x);
    auto flat = g.reshape(h, {b * t, d});
    auto qkv_out = qkv.forward(g, flat);                       // [B*T, 3D]
    auto q = g.reshape(g.slice_cols(qkv_out, 0, d), {b, t, d});
    auto k = g.reshape(g.slice_cols(qkv_out, d, 2 * d), {b, t, d});
    auto v = g.reshape(g.slice_cols(qkv_out, 2 * d, 3 * d), {b, t, d});
    auto qh = g.split_heads(q, heads);                         // [B*H,T,hd]
    auto kh = g.split_heads(k, heads);
    auto vh = g.split_heads(v, heads);
    auto scores = g.scale(g.bmm_nt_op(qh, kh), T(1.0 / std::sqrt(double(hd))));
    auto probs = g.causal_softmax(scores);
    probs = g.dropout(probs, dropout, rng, train);
    auto ctx = g.merge_heads(g.bmm(probs, vh), heads);         // [B,T,D]
    auto attn = attn_proj.forward(g, g.reshape(ctx, {b * t, d}));
    attn = g.dropout(attn, dropout, rng, train);
    x = g.add(x, g.reshape(attn, {b, t, d}));
    auto h2 = ln2.forward(g, x);
    auto m = mlp_proj.forward(g, g.relu(mlp_fc.forward(g, g.reshape(h2, {b * t, d}))));
    m = g.dropout(m, dropout, rng, train);
    return g.add(x, g.reshape(m, {b, t, d}));
  }
};

// ---------------------------------------------------------------------------
// Checkpoint archive: magic + JSON header + raw little-endian tensors.
// ---------------------------------------------------------------------------

inline constexpr char kArchiveMagic[8] = {'P', 'M', 'A', 'R', 'C', 'H', '1', '\n'};

struct ArchiveHeader {
  std::string version;
  nlohmann::ordered_json config;
  int64_t step = 0;
  nlohmann::ordered_json metrics = nlohmann::ordered_json::array();
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
  int64_t adam_t = 0;
  Rng::State rng{0, 1, false, 0.0};
};

inline void save_checkpoint(const std::string& path, const ArchiveHeader& hdr,
                            const ParamStore& ps, bool include_opt = true) {
  namespace fs = std::filesystem;
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  nlohmann::ordered_json j;
  j["version"] = hdr.version;
  j["config"] = hdr.config;
  j["step"] = hdr.step;
  j["metrics"] = hdr.metrics;
  j["extra"] = hdr.extra;
  j["adam_t"] = hdr.adam_t;
  j["init_seed"] = ps.init_seed();
  j["rng"] = {{"state", hdr.rng.state},
              {"inc", hdr.rng.inc},
              {"has_spare", hdr.rng.has_spare},
              {"spare", hdr.rng.spare}};
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  auto add_tensor = [&](const std::string& name, const Tensor& t) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}});
  };
  for (const auto& [name, e] : ps.entries()) add_tensor(name, e.value);
  if (include_opt) {
    for (const auto& [name, e] : ps.entries()) add_tensor("__m/" + name, e.m);
    for (const auto& [name, e] : ps.entries()) add_tensor("__v/" + name, e.v);
  }
  j["tensors"] = tensors;
  std::string hs = j.dump();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), Err::IOFailure, "cannot open " + path);
  f.write(kArchiveMagic, 8);
  uint64_t len = hs.size();
  f.write(reinterpret_cast<const char*>(&len), 8);
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  auto dump = [&](const Tensor& t) {
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(t.numel())));
  };
  for (const auto& [name, e] : ps.entries()) dump(e.value);
  if (include_opt) {
    for (const auto& [name, e] : ps.entries()) dump(e.m);
    for (const auto& [name, e] : ps.entries()) dump(e.v);
  }
  require(f.good(), Err::IOFailure, "write failed: " + path);
}

// Loads an archive into an existing store (shapes must match). Returns header.
inline ArchiveHeader load_checkpoint(const std::string& path, ParamStore& ps) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Err::IOFailure, "cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  require(f.good() && std::equal(magic, magic + 8, kArchiveMagic), Err::CorruptManifest,
          "bad archive magic in " + path);
  uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 8);
  std::string hs(len, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(len));
  require(f.good(), Err::CorruptManifest, "truncated header in " + path);
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(hs, nullptr, false);
  require(!j.is_discarded(), Err::CorruptManifest, "bad header json in " + path);
  ArchiveHeader hdr;
  hdr.version = j.value("version", "");
  hdr.config = j.value("config", nlohmann::ordered_json::object());
  hdr.step = j.value("step", int64_t(0));
  hdr.metrics = j.value("metrics", nlohmann::ordered_json::array());
  hdr.extra = j.value("extra", nlohmann::ordered_json::object());
  hdr.adam_t = j.value("adam_t", int64_t(0));
  if (j.contains("rng")) {
    hdr.rng.state = j["rng"].value("state", uint64_t(0));
    hdr.rng.inc = j["rng"].value("inc", uint64_t(1));
    hdr.rng.has_spare = j["rng"].value("has_spare", false);
    hdr.rng.spare = j["rng"].value("spare", 0.0);
  }
  for (const auto& tj : j["tensors"]) {
    std::string name = tj["name"];
    std::vector<int> shape = tj["shape"].get<std::vector<int>>();
    int64_t count = Tensor::count(shape);
    Tensor* dst = nullptr;
    if (name.rfind("__m/", 0) == 0) {
      dst = &ps.at(name.substr(4)).m;
    } else if (name.rfind("__v/", 0) == 0) {
      dst = &ps.at(name.substr(4)).v;
    } else {
      dst = &ps.at(name).value;
    }
    require(dst->numel() == count, Err::ShapeMismatch, "checkpoint shape mismatch for " + name);
    f.read(reinterpret_cast<char*>(dst->data()),
           static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(count)));
    require(f.good(), Err::CorruptManifest, "truncated tensor " + name + " in " + path);
  }
  ps.set_adam_t(hdr.adam_t);
  return hdr;
}

// Header-only peek (for hash checks and config echo without a model).
inline ArchiveHeader peek_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), Err::IOFailure, "cannot open " + path);
  char magic[8];
  f.read(magic, 8);
  require(f.good() && std::equal(magic, magic + 8, kArchiveMagic), Err::CorruptManifest,
          "bad archive magic in " + path);
  uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 8);
  std::string hs(len, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(len));
  require(f.good(), Err::CorruptManifest, "truncated header in " + path);
  nlohmann::ordered_json j = nlohmann::ordered_json::parse(hs);
  ArchiveHeader hdr;
  hdr.version = j.value("version", "");
  hdr.config = j.value("config", nlohmann::ordered_json::object());
  hdr.step = j.value("step", int64_t(0));
  hdr.metrics = j.value("metrics", nlohmann::ordered_json::array());
  hdr.extra = j.value("extra", nlohmann::ordered_json::object());
  hdr.adam_t = j.value("adam_t", int64_t(0));
  return hdr;
}

}  // namespace playmimic
