#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "flare/ops.hpp"
#include "flare/rng.hpp"
#include "flare/tensor.hpp"

namespace flare {

struct ModelConfig {
  int num_layers = 4;
  int hidden_dim = 64;
  int num_heads = 4;
  int ffn_dim = 128;
  int vocab_size = 64;
  int max_seq_len = 32;
  int num_classes = 3;
  int max_span_len = 8;

  void validate() const {
    auto positive = [](int v, const char* name) {
      if (v <= 0)
        throw ContractError(std::string("ModelConfig: ") + name +
                            " must be positive, got " + std::to_string(v));
    };
    positive(num_layers, "num_layers");
    positive(hidden_dim, "hidden_dim");
    positive(num_heads, "num_heads");
    positive(ffn_dim, "ffn_dim");
    positive(vocab_size, "vocab_size");
    positive(max_seq_len, "max_seq_len");
    positive(num_classes, "num_classes");
    positive(max_span_len, "max_span_len");
    if (hidden_dim % num_heads != 0)
      throw ContractError("ModelConfig: hidden_dim " +
                          std::to_string(hidden_dim) +
                          " not divisible by num_heads " +
                          std::to_string(num_heads));
  }

  bool operator==(const ModelConfig&) const = default;
};

enum class TaskKind { classification, span };

inline const char* to_string(TaskKind k) {
  return k == TaskKind::classification ? "classification" : "span";
}

inline TaskKind task_kind_from_string(const std::string& s) {
  if (s == "classification") return TaskKind::classification;
  if (s == "span") return TaskKind::span;
  throw ContractError("unknown task kind: " + s);
}

// Hook point inside each encoder block: receives the post-norm input that
// feeds the frozen q/k/v projections and returns additive deltas for the
// q and v projection outputs (undefined tensor = no contribution).
template <typename T>
class AttentionHooks {
 public:
  virtual ~AttentionHooks() = default;
  virtual std::pair<Tensor<T>, Tensor<T>> deltas(int block, const Tensor<T>& x,
                                                 int batch, int seq_len) = 0;
};

// Applied to a block's residual-stream output before it feeds the next
// block; used for representation mixing baselines.
template <typename T>
using PostBlockHook =
    std::function<Tensor<T>(int block, const Tensor<T>& h, int batch,
                            int seq_len)>;

template <typename T>
struct EncodeResult {
  std::vector<Tensor<T>> blocks;  // residual stream after each block
  Tensor<T> hidden;               // final layer norm output
  int batch = 0;
  int seq_len = 0;
};

template <typename T>
struct EncoderBlockParams {
  Tensor<T> ln1_gain, ln1_bias;
  Tensor<T> wq, wk, wv, wo;
  Tensor<T> ln2_gain, ln2_bias;
  Tensor<T> ffn_in, ffn_out;
};

// Pre-norm transformer encoder with learned absolute positions, no biases
// on the projections.
template <typename T>
class TransformerEncoder {
 public:
  TransformerEncoder() = default;

  TransformerEncoder(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng(derive_seed(seed, "encoder-init"));
    int d = cfg.hidden_dim;
    tok_emb_ = uniform_init(cfg.vocab_size, d, d, rng);
    pos_emb_ = uniform_init(cfg.max_seq_len, d, d, rng);
    blocks_.resize(cfg.num_layers);
    for (auto& b : blocks_) {
      b.ln1_gain = Tensor<T>::full({d}, T(1), true);
      b.ln1_bias = Tensor<T>::zeros({d}, true);
      b.wq = uniform_init(d, d, d, rng);
      b.wk = uniform_init(d, d, d, rng);
      b.wv = uniform_init(d, d, d, rng);
      b.wo = uniform_init(d, d, d, rng);
      b.ln2_gain = Tensor<T>::full({d}, T(1), true);
      b.ln2_bias = Tensor<T>::zeros({d}, true);
      b.ffn_in = uniform_init(d, cfg.ffn_dim, d, rng);
      b.ffn_out = uniform_init(cfg.ffn_dim, d, cfg.ffn_dim, rng);
    }
    final_ln_gain_ = Tensor<T>::full({d}, T(1), true);
    final_ln_bias_ = Tensor<T>::zeros({d}, true);
  }

  const ModelConfig& config() const { return cfg_; }

  EncodeResult<T> encode_batch(const std::vector<std::vector<int>>& seqs,
                               AttentionHooks<T>* hooks = nullptr,
                               const PostBlockHook<T>* post_block = nullptr) const {
    if (seqs.empty()) throw ContractError("encode: empty batch");
    int batch = static_cast<int>(seqs.size());
    int m = static_cast<int>(seqs[0].size());
    if (m == 0) throw ContractError("encode: empty sequence");
    if (m > cfg_.max_seq_len)
      throw ContractError("encode: sequence length " + std::to_string(m) +
                          " exceeds max_seq_len " +
                          std::to_string(cfg_.max_seq_len));
    std::vector<int> flat;
    flat.reserve(static_cast<size_t>(batch) * m);
    for (const auto& s : seqs) {
      if (static_cast<int>(s.size()) != m)
        throw ContractError("encode: ragged batch (lengths " +
                            std::to_string(m) + " and " +
                            std::to_string(s.size()) + ")");
      flat.insert(flat.end(), s.begin(), s.end());
    }

    int d = cfg_.hidden_dim;
    int heads = cfg_.num_heads;
    int dh = d / heads;
    T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));

    Tensor<T> h = add(embedding_lookup(tok_emb_, flat),
                      tile_rows(slice(pos_emb_, 0, 0, m), batch));

    EncodeResult<T> result;
    result.batch = batch;
    result.seq_len = m;
    result.blocks.reserve(blocks_.size());

    for (size_t bi = 0; bi < blocks_.size(); ++bi) {
      const auto& blk = blocks_[bi];
      Tensor<T> a_in = layer_norm(h, blk.ln1_gain, blk.ln1_bias);
      Tensor<T> q = matmul(a_in, blk.wq);
      Tensor<T> k = matmul(a_in, blk.wk);
      Tensor<T> v = matmul(a_in, blk.wv);
      if (hooks) {
        auto [dq, dv] = hooks->deltas(static_cast<int>(bi), a_in, batch, m);
        if (dq.defined()) q = add(q, dq);
        if (dv.defined()) v = add(v, dv);
      }

      std::vector<Tensor<T>> per_example;
      per_example.reserve(batch);
      std::vector<Tensor<T>> qh(heads), kh(heads), vh(heads);
      for (int hh = 0; hh < heads; ++hh) {
        qh[hh] = slice(q, 1, hh * dh, dh);
        kh[hh] = slice(k, 1, hh * dh, dh);
        vh[hh] = slice(v, 1, hh * dh, dh);
      }
      for (int b = 0; b < batch; ++b) {
        std::vector<Tensor<T>> outs;
        outs.reserve(heads);
        for (int hh = 0; hh < heads; ++hh) {
          Tensor<T> qe = slice(qh[hh], 0, b * m, m);
          Tensor<T> ke = slice(kh[hh], 0, b * m, m);
          Tensor<T> ve = slice(vh[hh], 0, b * m, m);
          Tensor<T> scores = scale(matmul(qe, transpose(ke)), inv_sqrt_dh);
          outs.push_back(matmul(softmax(scores, 1), ve));
        }
        per_example.push_back(concat(outs, 1));
      }
      Tensor<T> attn = batch == 1 ? per_example[0] : concat(per_example, 0);
      h = add(h, matmul(attn, blk.wo));

      Tensor<T> f_in = layer_norm(h, blk.ln2_gain, blk.ln2_bias);
      h = add(h, matmul(relu(matmul(f_in, blk.ffn_in)), blk.ffn_out));

      if (post_block && *post_block)
        h = (*post_block)(static_cast<int>(bi), h, batch, m);
      result.blocks.push_back(h);
    }
    result.hidden = layer_norm(h, final_ln_gain_, final_ln_bias_);
    return result;
  }

  EncodeResult<T> encode(const std::vector<int>& tokens,
                         AttentionHooks<T>* hooks = nullptr,
                         const PostBlockHook<T>* post_block = nullptr) const {
    return encode_batch({tokens}, hooks, post_block);
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    out.emplace_back("tok_emb", tok_emb_);
    out.emplace_back("pos_emb", pos_emb_);
    for (size_t i = 0; i < blocks_.size(); ++i) {
      std::string p = "b" + std::to_string(i) + ".";
      auto& b = blocks_[i];
      out.emplace_back(p + "ln1.g", b.ln1_gain);
      out.emplace_back(p + "ln1.b", b.ln1_bias);
      out.emplace_back(p + "wq", b.wq);
      out.emplace_back(p + "wk", b.wk);
      out.emplace_back(p + "wv", b.wv);
      out.emplace_back(p + "wo", b.wo);
      out.emplace_back(p + "ln2.g", b.ln2_gain);
      out.emplace_back(p + "ln2.b", b.ln2_bias);
      out.emplace_back(p + "ffn_in", b.ffn_in);
      out.emplace_back(p + "ffn_out", b.ffn_out);
    }
    out.emplace_back("final_ln.g", final_ln_gain_);
    out.emplace_back("final_ln.b", final_ln_bias_);
    return out;
  }

  void set_trainable(bool on) {
    for (auto& [name, t] : named_parameters()) t.set_requires_grad(on);
  }

  EncoderBlockParams<T>& block(int i) { return blocks_.at(i); }
  const EncoderBlockParams<T>& block(int i) const { return blocks_.at(i); }

  TransformerEncoder clone() const {
    TransformerEncoder out;
    out.cfg_ = cfg_;
    out.tok_emb_ = tok_emb_.clone();
    out.pos_emb_ = pos_emb_.clone();
    out.blocks_.reserve(blocks_.size());
    for (const auto& b : blocks_) {
      EncoderBlockParams<T> nb;
      nb.ln1_gain = b.ln1_gain.clone();
      nb.ln1_bias = b.ln1_bias.clone();
      nb.wq = b.wq.clone();
      nb.wk = b.wk.clone();
      nb.wv = b.wv.clone();
      nb.wo = b.wo.clone();
      nb.ln2_gain = b.ln2_gain.clone();
      nb.ln2_bias = b.ln2_bias.clone();
      nb.ffn_in = b.ffn_in.clone();
      nb.ffn_out = b.ffn_out.clone();
      out.blocks_.push_back(std::move(nb));
    }
    out.final_ln_gain_ = final_ln_gain_.clone();
    out.final_ln_bias_ = final_ln_bias_.clone();
    return out;
  }

 private:
  static Tensor<T> uniform_init(int rows, int cols, int fan_in, Rng& rng) {
    T bound = T(1) / std::sqrt(static_cast<T>(fan_in));
    std::vector<T> v(static_cast<size_t>(rows) * cols);
    for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>::from_data({rows, cols}, std::move(v), true);
  }

  ModelConfig cfg_;
  Tensor<T> tok_emb_, pos_emb_;
  std::vector<EncoderBlockParams<T>> blocks_;
  Tensor<T> final_ln_gain_, final_ln_bias_;
};

// Classification reads the first position; span prediction scores every
// position with two tiny heads and decodes the best (start, end) pair.
template <typename T>
struct TaskHead {
  TaskKind kind = TaskKind::classification;
  int max_span_len = 8;
  Tensor<T> cls_w, cls_b;      // [d x C], [C]
  Tensor<T> start_w, start_b;  // [d x 1], [1]
  Tensor<T> end_w, end_b;      // [d x 1], [1]

  static TaskHead init(TaskKind kind, const ModelConfig& cfg, uint64_t seed) {
    TaskHead head;
    head.kind = kind;
    head.max_span_len = cfg.max_span_len;
    Rng rng(derive_seed(seed, "head-init"));
    int d = cfg.hidden_dim;
    T bound = T(1) / std::sqrt(static_cast<T>(d));
    auto uni = [&](int rows, int cols) {
      std::vector<T> v(static_cast<size_t>(rows) * cols);
      for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
      return Tensor<T>::from_data({rows, cols}, std::move(v), true);
    };
    if (kind == TaskKind::classification) {
      head.cls_w = uni(d, cfg.num_classes);
      head.cls_b = Tensor<T>::zeros({cfg.num_classes}, true);
    } else {
      head.start_w = uni(d, 1);
      head.start_b = Tensor<T>::zeros({1}, true);
      head.end_w = uni(d, 1);
      head.end_b = Tensor<T>::zeros({1}, true);
    }
    return head;
  }

  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    if (kind == TaskKind::classification) {
      out.emplace_back("head.cls.w", cls_w);
      out.emplace_back("head.cls.b", cls_b);
    } else {
      out.emplace_back("head.start.w", start_w);
      out.emplace_back("head.start.b", start_b);
      out.emplace_back("head.end.w", end_w);
      out.emplace_back("head.end.b", end_b);
    }
    return out;
  }

  void set_trainable(bool on) {
    for (auto& [name, t] : named_parameters()) t.set_requires_grad(on);
  }

  TaskHead clone() const {
    TaskHead out;
    out.kind = kind;
    out.max_span_len = max_span_len;
    auto cp = [](const Tensor<T>& t) {
      return t.defined() ? t.clone() : Tensor<T>();
    };
    out.cls_w = cp(cls_w);
    out.cls_b = cp(cls_b);
    out.start_w = cp(start_w);
    out.start_b = cp(start_b);
    out.end_w = cp(end_w);
    out.end_b = cp(end_b);
    return out;
  }
};

template <typename T>
struct Model {
  ModelConfig config;
  TransformerEncoder<T> encoder;
  TaskHead<T> head;

  static Model init(const ModelConfig& cfg, TaskKind kind, uint64_t seed) {
    Model m;
    m.config = cfg;
    m.encoder = TransformerEncoder<T>(cfg, seed);
    m.head = TaskHead<T>::init(kind, cfg, seed);
    return m;
  }

  Model clone() const {
    Model out;
    out.config = config;
    out.encoder = encoder.clone();
    out.head = head.clone();
    return out;
  }
};

// Logits of the first position of each sequence in the batch: [batch x C].
template <typename T>
Tensor<T> classify_logits(const TaskHead<T>& head, const EncodeResult<T>& enc) {
  if (head.kind != TaskKind::classification)
    throw ContractError("classify_logits: head is not a classification head");
  std::vector<int> firsts(enc.batch);
  for (int b = 0; b < enc.batch; ++b) firsts[b] = b * enc.seq_len;
  Tensor<T> pooled = gather_rows(enc.hidden, firsts);
  return add(matmul(pooled, head.cls_w), head.cls_b);
}

// Start and end position logits, each [batch x seq_len].
template <typename T>
std::pair<Tensor<T>, Tensor<T>> span_logits(const TaskHead<T>& head,
                                            const EncodeResult<T>& enc) {
  if (head.kind != TaskKind::span)
    throw ContractError("span_logits: head is not a span head");
  auto project = [&](const Tensor<T>& w, const Tensor<T>& b) {
    return add(reshape(matmul(enc.hidden, w), {enc.batch, enc.seq_len}), b);
  };
  return {project(head.start_w, head.start_b),
          project(head.end_w, head.end_b)};
}

inline int argmax_row(const std::vector<float>& v, int offset, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (v[offset + i] > v[offset + best]) best = i;
  return best;
}

// Best (start, end) with start <= end <= start + max_span_len; ties go to
// the earliest pair so decoding is deterministic.
template <typename T>
std::pair<int, int> decode_span(const std::vector<T>& start_row,
                                const std::vector<T>& end_row,
                                int max_span_len) {
  int m = static_cast<int>(start_row.size());
  int best_i = 0, best_j = 0;
  T best = start_row[0] + end_row[0];
  for (int i = 0; i < m; ++i) {
    for (int j = i; j < m && j <= i + max_span_len; ++j) {
      T s = start_row[i] + end_row[j];
      if (s > best) {
        best = s;
        best_i = i;
        best_j = j;
      }
    }
  }
  return {best_i, best_j};
}

}  // namespace flare
