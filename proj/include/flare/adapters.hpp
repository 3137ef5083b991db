#pragma once

#include <string>
#include <utility>
#include <vector>

#include "flare/model.hpp"
#include "flare/ops.hpp"
#include "flare/rng.hpp"

namespace flare {

enum class FusionFunction { add, mul, add_relu, cross_attn };

inline const char* to_string(FusionFunction f) {
  switch (f) {
    case FusionFunction::add: return "add";
    case FusionFunction::mul: return "mul";
    case FusionFunction::add_relu: return "add_relu";
    case FusionFunction::cross_attn: return "cross_attn";
  }
  return "?";
}

inline FusionFunction fusion_from_string(const std::string& s) {
  if (s == "add") return FusionFunction::add;
  if (s == "mul") return FusionFunction::mul;
  if (s == "add_relu") return FusionFunction::add_relu;
  if (s == "cross_attn") return FusionFunction::cross_attn;
  throw ContractError("unknown fusion function: " + s);
}

struct FusionSpec {
  FusionFunction fn = FusionFunction::add_relu;
  int rank = 8;
  double alpha = 4.0;
};

// One bottleneck adapter: down [d x r] (gaussian init), up [r x d] (zero
// init, so a fresh adapter is a no-op). cross_attn fusion carries three
// extra [r x r] maps.
template <typename T>
struct LoraAdapter {
  int rank = 0;
  T alpha = T(0);
  Tensor<T> w_down, w_up;
  Tensor<T> wq_a, wk_a, wv_a;

  static LoraAdapter init(int d, const FusionSpec& spec, Rng& rng) {
    LoraAdapter a;
    a.rank = spec.rank;
    a.alpha = static_cast<T>(spec.alpha);
    a.w_down = gaussian(d, spec.rank, rng);
    a.w_up = Tensor<T>::zeros({spec.rank, d}, true);
    if (spec.fn == FusionFunction::cross_attn) {
      a.wq_a = gaussian(spec.rank, spec.rank, rng);
      a.wk_a = gaussian(spec.rank, spec.rank, rng);
      a.wv_a = gaussian(spec.rank, spec.rank, rng);
    }
    return a;
  }

  static Tensor<T> gaussian(int rows, int cols, Rng& rng) {
    std::vector<T> v(static_cast<size_t>(rows) * cols);
    for (auto& x : v) x = static_cast<T>(rng.normal(0.0, 0.02));
    return Tensor<T>::from_data({rows, cols}, std::move(v), true);
  }

  T scaling() const { return alpha / static_cast<T>(rank); }

  LoraAdapter clone() const {
    LoraAdapter a;
    a.rank = rank;
    a.alpha = alpha;
    auto cp = [](const Tensor<T>& t) {
      return t.defined() ? t.clone() : Tensor<T>();
    };
    a.w_down = cp(w_down);
    a.w_up = cp(w_up);
    a.wq_a = cp(wq_a);
    a.wk_a = cp(wk_a);
    a.wv_a = cp(wv_a);
    return a;
  }
};

// Plain LoRA contribution: (alpha/r) * (x W_down) W_up.
template <typename T>
Tensor<T> lora_forward(const LoraAdapter<T>& a, const Tensor<T>& x) {
  return scale(matmul(matmul(x, a.w_down), a.w_up), a.scaling());
}

// Combine source and target bottleneck activations (both [m x r]).
// cross_attn: rows of S query over rows of T, scores scaled by 1/sqrt(r),
// single head; the extra maps live on the adapter.
template <typename T>
Tensor<T> fuse(const Tensor<T>& s, const Tensor<T>& t, FusionFunction fn,
               const LoraAdapter<T>* adapter = nullptr) {
  if (fn != FusionFunction::cross_attn && s.shape() != t.shape())
    throw DimensionError("fuse: source " + shape_string(s.shape()) +
                         " and target " + shape_string(t.shape()) +
                         " must match");
  switch (fn) {
    case FusionFunction::add:
      return add(s, t);
    case FusionFunction::mul:
      return mul(s, t);
    case FusionFunction::add_relu:
      return add(relu(s), relu(t));
    case FusionFunction::cross_attn: {
      if (!adapter || !adapter->wq_a.defined())
        throw ContractError("fuse: cross_attn needs adapter attention maps");
      if (s.shape()[1] != t.shape()[1])
        throw DimensionError("fuse: bottleneck width mismatch " +
                             shape_string(s.shape()) + " vs " +
                             shape_string(t.shape()));
      int r = s.shape()[1];
      Tensor<T> q = matmul(s, adapter->wq_a);
      Tensor<T> k = matmul(t, adapter->wk_a);
      Tensor<T> v = matmul(t, adapter->wv_a);
      Tensor<T> scores =
          scale(matmul(q, transpose(k)), T(1) / std::sqrt(static_cast<T>(r)));
      return matmul(softmax(scores, 1), v);
    }
  }
  throw ContractError("fuse: unreachable");
}

// Block outputs of an adapter-free pass over the source batch, detached so
// the target pass treats them as constants.
template <typename T>
struct SourceCache {
  std::vector<Tensor<T>> layers;  // per block: [batch*seq_len x d]
  int batch = 0;
  int seq_len = 0;

  SourceCache zeros_like() const {
    SourceCache out;
    out.batch = batch;
    out.seq_len = seq_len;
    for (const auto& t : layers) out.layers.push_back(Tensor<T>::zeros(t.shape()));
    return out;
  }
};

template <typename T>
SourceCache<T> build_source_cache(const TransformerEncoder<T>& encoder,
                                  const std::vector<std::vector<int>>& seqs) {
  auto enc = encoder.encode_batch(seqs);
  SourceCache<T> cache;
  cache.batch = enc.batch;
  cache.seq_len = enc.seq_len;
  cache.layers.reserve(enc.blocks.size());
  for (const auto& b : enc.blocks) cache.layers.push_back(b.detached());
  return cache;
}

// Per-position magnitude sums for the representation probes. Indexed by
// (block, position); source and target streams accumulate separately.
struct ProbeAccumulator {
  int num_layers = 0;
  int seq_len = 0;
  std::vector<double> source_sum, target_sum;
  std::vector<long> count;

  ProbeAccumulator() = default;
  ProbeAccumulator(int layers, int m)
      : num_layers(layers), seq_len(m),
        source_sum(static_cast<size_t>(layers) * m, 0.0),
        target_sum(static_cast<size_t>(layers) * m, 0.0),
        count(static_cast<size_t>(layers) * m, 0) {}

  void add(int block, int pos, double s_abs, double t_abs) {
    size_t i = static_cast<size_t>(block) * seq_len + pos;
    source_sum[i] += s_abs;
    target_sum[i] += t_abs;
    count[i] += 1;
  }
};

// The adapter pairs (query and value attachment) for every block, plus the
// source wiring. Modes:
//   plain        - ordinary LoRA, no source side
//   fused_cache  - source bottlenecks from a SourceCache (block-indexed)
//   fused_latent - one shared latent [batch*len x d] fused in every block
template <typename T>
class AdapterStack : public AttentionHooks<T> {
 public:
  enum class Mode { plain, fused_cache, fused_latent };

  static AdapterStack init(const ModelConfig& cfg, const FusionSpec& spec,
                           uint64_t seed) {
    AdapterStack s;
    s.spec_ = spec;
    Rng rng(derive_seed(seed, "adapter-init"));
    s.query_.reserve(cfg.num_layers);
    s.value_.reserve(cfg.num_layers);
    for (int i = 0; i < cfg.num_layers; ++i) {
      s.query_.push_back(LoraAdapter<T>::init(cfg.hidden_dim, spec, rng));
      s.value_.push_back(LoraAdapter<T>::init(cfg.hidden_dim, spec, rng));
    }
    return s;
  }

  Mode mode = Mode::plain;
  int source_offset = 0;
  // fused_cache:
  const SourceCache<T>* cache = nullptr;
  // fused_latent:
  Tensor<T> latent;
  int latent_seq_len = 0;
  // probes (optional sinks):
  ProbeAccumulator* probe_query = nullptr;
  ProbeAccumulator* probe_value = nullptr;

  const FusionSpec& spec() const { return spec_; }
  int num_blocks() const { return static_cast<int>(query_.size()); }
  LoraAdapter<T>& query_adapter(int i) { return query_.at(i); }
  LoraAdapter<T>& value_adapter(int i) { return value_.at(i); }

  std::pair<Tensor<T>, Tensor<T>> deltas(int block, const Tensor<T>& x,
                                         int batch, int seq_len) override {
    return {fused_delta(query_.at(block), block, x, batch, seq_len,
                        probe_query),
            fused_delta(value_.at(block), block, x, batch, seq_len,
                        probe_value)};
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (size_t i = 0; i < query_.size(); ++i) {
      for (auto [tag, adapter] :
           {std::pair{"q", &query_[i]}, std::pair{"v", &value_[i]}}) {
        std::string p =
            "adapter." + std::string(tag) + std::to_string(i) + ".";
        out.emplace_back(p + "down", adapter->w_down);
        out.emplace_back(p + "up", adapter->w_up);
        if (adapter->wq_a.defined()) {
          out.emplace_back(p + "fuse.wq", adapter->wq_a);
          out.emplace_back(p + "fuse.wk", adapter->wk_a);
          out.emplace_back(p + "fuse.wv", adapter->wv_a);
        }
      }
    }
    return out;
  }

  void set_trainable(bool on) {
    for (auto& [name, t] : named_parameters()) t.set_requires_grad(on);
  }

  AdapterStack clone() const {
    AdapterStack out;
    out.spec_ = spec_;
    out.mode = mode;
    out.source_offset = source_offset;
    for (const auto& a : query_) out.query_.push_back(a.clone());
    for (const auto& a : value_) out.value_.push_back(a.clone());
    return out;
  }

  // Folds plain-LoRA deltas into the frozen q/v projections:
  // W += (alpha/r) W_down W_up. Only meaningful for mode==plain stacks.
  void merge_into(TransformerEncoder<T>& encoder) {
    if (mode != Mode::plain)
      throw ContractError("merge_into: only plain LoRA stacks can be merged");
    for (int i = 0; i < num_blocks(); ++i) {
      merge_one(query_[i], encoder.block(i).wq);
      merge_one(value_[i], encoder.block(i).wv);
    }
  }

 private:
  static void merge_one(const LoraAdapter<T>& a, Tensor<T>& w) {
    Tensor<T> delta = matmul(a.w_down.detached(), a.w_up.detached());
    T c = a.scaling();
    auto& wv = w.data_mut();
    const auto& dv = delta.data();
    for (size_t i = 0; i < wv.size(); ++i) wv[i] += c * dv[i];
  }

  Tensor<T> source_rows(int block, int batch) const {
    if (mode == Mode::fused_cache) {
      if (!cache)
        throw ContractError("adapter stack in fused_cache mode has no cache");
      if (cache->batch != batch)
        throw ContractError("source cache batch " +
                            std::to_string(cache->batch) +
                            " does not match target batch " +
                            std::to_string(batch));
      int idx = std::min(block + source_offset,
                         static_cast<int>(cache->layers.size()) - 1);
      return cache->layers.at(idx);
    }
    if (!latent.defined())
      throw ContractError("adapter stack in fused_latent mode has no latent");
    return latent;
  }

  int source_len(int) const {
    return mode == Mode::fused_cache ? cache->seq_len : latent_seq_len;
  }

  Tensor<T> fused_delta(const LoraAdapter<T>& a, int block, const Tensor<T>& x,
                        int batch, int m, ProbeAccumulator* probe) {
    Tensor<T> t_b = matmul(x, a.w_down);  // [batch*m x r]
    Tensor<T> h;
    if (mode == Mode::plain) {
      h = t_b;
    } else {
      Tensor<T> src = source_rows(block, batch);
      int s_len = source_len(block);
      Tensor<T> s_b = matmul(src, a.w_down);
      s_b = align_source(s_b, batch, s_len, m);
      if (probe) record_probe(*probe, block, s_b, t_b, batch, m, a.rank);
      if (spec_.fn == FusionFunction::cross_attn && batch > 1) {
        std::vector<Tensor<T>> parts;
        parts.reserve(batch);
        for (int b = 0; b < batch; ++b)
          parts.push_back(fuse(slice(s_b, 0, b * m, m),
                               slice(t_b, 0, b * m, m), spec_.fn, &a));
        h = concat(parts, 0);
      } else {
        h = fuse(s_b, t_b, spec_.fn, &a);
      }
    }
    return scale(matmul(h, a.w_up), a.scaling());
  }

  // Truncate or zero-pad each example's source rows to the target length.
  static Tensor<T> align_source(const Tensor<T>& s_b, int batch, int s_len,
                                int m) {
    if (s_len == m) return s_b;
    std::vector<Tensor<T>> parts;
    parts.reserve(batch);
    int r = s_b.shape()[1];
    for (int b = 0; b < batch; ++b) {
      if (s_len > m) {
        parts.push_back(slice(s_b, 0, b * s_len, m));
      } else {
        parts.push_back(slice(s_b, 0, b * s_len, s_len));
        parts.push_back(Tensor<T>::zeros({m - s_len, r}));
      }
    }
    return parts.size() == 1 ? parts[0] : concat(parts, 0);
  }

  static void record_probe(ProbeAccumulator& probe, int block,
                           const Tensor<T>& s_b, const Tensor<T>& t_b,
                           int batch, int m, int r) {
    const auto& sv = s_b.data();
    const auto& tv = t_b.data();
    for (int b = 0; b < batch; ++b) {
      for (int p = 0; p < m; ++p) {
        double ssum = 0, tsum = 0;
        for (int c = 0; c < r; ++c) {
          ssum += std::abs(static_cast<double>(sv[(b * m + p) * r + c]));
          tsum += std::abs(static_cast<double>(tv[(b * m + p) * r + c]));
        }
        probe.add(block, p, ssum / r, tsum / r);
      }
    }
  }

  FusionSpec spec_;
  std::vector<LoraAdapter<T>> query_;
  std::vector<LoraAdapter<T>> value_;
};

// Latent-translation source: a frozen helper encoder reads the target-side
// tokens and a trainable projection [d_M x d] maps its output into the
// main model's width. The result plays the source role in every block.
template <typename T>
struct MtLatentProjection {
  Tensor<T> w_proj;

  static MtLatentProjection init(int d_mt, int d, uint64_t seed) {
    Rng rng(derive_seed(seed, "mt-proj-init"));
    T bound = T(1) / std::sqrt(static_cast<T>(d_mt));
    std::vector<T> v(static_cast<size_t>(d_mt) * d);
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    MtLatentProjection p;
    p.w_proj = Tensor<T>::from_data({d_mt, d}, std::move(v), true);
    return p;
  }

  MtLatentProjection clone() const {
    MtLatentProjection p;
    p.w_proj = w_proj.clone();
    return p;
  }
};

template <typename T>
Tensor<T> mt_latent_batch(const TransformerEncoder<T>& mt_encoder,
                          const MtLatentProjection<T>& proj,
                          const std::vector<std::vector<int>>& seqs) {
  auto enc = mt_encoder.encode_batch(seqs);
  return matmul(enc.hidden, proj.w_proj);
}

// Input-level fusion baseline: one sequence [source ; SEP ; target].
inline std::vector<int> input_level_concat(const std::vector<int>& x_s,
                                           const std::vector<int>& x_t,
                                           int sep_id, int max_seq_len) {
  size_t total = x_s.size() + 1 + x_t.size();
  if (static_cast<int>(total) > max_seq_len)
    throw ContractError("input_level_concat: combined length " +
                        std::to_string(total) + " exceeds max_seq_len " +
                        std::to_string(max_seq_len));
  std::vector<int> out;
  out.reserve(total);
  out.insert(out.end(), x_s.begin(), x_s.end());
  out.push_back(sep_id);
  out.insert(out.end(), x_t.begin(), x_t.end());
  return out;
}

// Representation-mixing baseline: one full-width single-head cross
// attention from the target stream over the source's cached block-k
// output, injected after block k. The output projection starts at zero so
// an untrained module leaves the forward pass unchanged. The squared
// injection norm serves as the consistency term.
template <typename T>
struct XMixupModule {
  int mix_layer = 0;
  T lambda = T(0.1);
  Tensor<T> wq, wk, wv, wo;

  static XMixupModule init(const ModelConfig& cfg, int mix_layer, T lambda,
                           uint64_t seed) {
    if (mix_layer < 0 || mix_layer >= cfg.num_layers)
      throw ContractError("XMixupModule: mix_layer " +
                          std::to_string(mix_layer) +
                          " out of range for " +
                          std::to_string(cfg.num_layers) + " blocks");
    XMixupModule m;
    m.mix_layer = mix_layer;
    m.lambda = lambda;
    Rng rng(derive_seed(seed, "xmixup-init"));
    int d = cfg.hidden_dim;
    T bound = T(1) / std::sqrt(static_cast<T>(d));
    auto uni = [&] {
      std::vector<T> v(static_cast<size_t>(d) * d);
      for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
      return Tensor<T>::from_data({d, d}, std::move(v), true);
    };
    m.wq = uni();
    m.wk = uni();
    m.wv = uni();
    m.wo = Tensor<T>::zeros({d, d}, true);
    return m;
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() {
    return {{"xmixup.wq", wq}, {"xmixup.wk", wk}, {"xmixup.wv", wv},
            {"xmixup.wo", wo}};
  }

  void set_trainable(bool on) {
    for (auto& [name, t] : named_parameters()) t.set_requires_grad(on);
  }

  XMixupModule clone() const {
    XMixupModule m;
    m.mix_layer = mix_layer;
    m.lambda = lambda;
    m.wq = wq.clone();
    m.wk = wk.clone();
    m.wv = wv.clone();
    m.wo = wo.clone();
    return m;
  }
};

// One encode pass worth of mixing state: install hook() as the post-block
// hook, read `consistency` afterwards (defined only if the hook fired).
template <typename T>
struct XMixupPass {
  const XMixupModule<T>* module = nullptr;
  const SourceCache<T>* cache = nullptr;
  Tensor<T> consistency;

  PostBlockHook<T> hook() {
    return [this](int block, const Tensor<T>& h, int batch, int m) {
      if (block != module->mix_layer) return h;
      if (!cache)
        throw ContractError("XMixupPass: no source cache installed");
      if (cache->batch != batch)
        throw ContractError("XMixupPass: cache batch mismatch");
      const Tensor<T>& src = cache->layers.at(block);
      int s_len = cache->seq_len;
      int d = h.shape()[1];
      Tensor<T> q = matmul(h, module->wq);
      Tensor<T> k = matmul(src, module->wk);
      Tensor<T> v = matmul(src, module->wv);
      T inv = T(1) / std::sqrt(static_cast<T>(d));
      std::vector<Tensor<T>> parts;
      parts.reserve(batch);
      for (int b = 0; b < batch; ++b) {
        Tensor<T> qe = slice(q, 0, b * m, m);
        Tensor<T> ke = slice(k, 0, b * s_len, s_len);
        Tensor<T> ve = slice(v, 0, b * s_len, s_len);
        Tensor<T> scores = scale(matmul(qe, transpose(ke)), inv);
        parts.push_back(matmul(softmax(scores, 1), ve));
      }
      Tensor<T> ca = batch == 1 ? parts[0] : concat(parts, 0);
      Tensor<T> delta = matmul(ca, module->wo);
      consistency = mean(mul(delta, delta));
      return add(h, delta);
    };
  }
};

}  // namespace flare
