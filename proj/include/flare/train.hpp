#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "flare/adapters.hpp"
#include "flare/flops.hpp"
#include "flare/model.hpp"
#include "flare/optim.hpp"
#include "flare/synth.hpp"

namespace flare {

struct TrainConfig {
  Method method = Method::lora;
  FusionSpec fusion{};
  double lr = 2e-4;
  double head_lr = 2e-5;
  int epochs = 10;
  int batch_size = 16;
  uint64_t seed = 0;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  int source_offset = 0;
  int mix_layer = 2;
  double lambda_consistency = 0.1;
  // Fuse only every other training batch and run inference with a zeroed
  // source side, so the adapters must work without a source at test time.
  bool train_only_fusion = false;
};

// Everything a trained cross-lingual method owns besides the frozen base
// encoder: the adapters (or mixing module), the task head, and the latent
// projection when a translation encoder is wired in.
template <typename T>
struct MethodState {
  Method method = Method::lora;
  TaskKind kind = TaskKind::classification;
  AdapterStack<T> adapters;
  TaskHead<T> head;
  MtLatentProjection<T> proj;
  const TransformerEncoder<T>* mt_encoder = nullptr;
  XMixupModule<T> xmixup;
  TrainConfig config;

  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() {
    std::vector<std::pair<std::string, Tensor<T>>> out;
    if (method != Method::xmixup) out = adapters.named_parameters();
    if (method == Method::flare_mt)
      out.emplace_back("mt.w_proj", proj.w_proj);
    if (method == Method::xmixup)
      for (auto& p : xmixup.named_parameters()) out.push_back(p);
    for (auto& p : head.named_parameters()) out.push_back(p);
    return out;
  }
};

template <typename T>
struct ForwardOut {
  EncodeResult<T> enc;
  Tensor<T> consistency;  // defined only when the mixing hook fired
  int span_offset = 0;    // shift of target positions inside the input
};

// One method-specific forward pass over a batch. Source caches and
// translation latents are built here, immediately before the target pass,
// and dropped with the batch; nothing source-side survives a step.
template <typename T>
ForwardOut<T> method_forward(const TransformerEncoder<T>& encoder,
                             MethodState<T>& st,
                             const std::vector<ParallelPair>& pairs,
                             const std::vector<int>& idx, bool zero_source) {
  ForwardOut<T> out;
  std::vector<std::vector<int>> seqs;
  seqs.reserve(idx.size());
  auto batch_sources = [&] {
    std::vector<std::vector<int>> src;
    src.reserve(idx.size());
    for (int e : idx) src.push_back(pairs[e].source.tokens);
    return src;
  };
  switch (st.method) {
    case Method::lora: {
      for (int e : idx) seqs.push_back(pairs[e].target.tokens);
      out.enc = encoder.encode_batch(seqs, &st.adapters);
      break;
    }
    case Method::flare: {
      for (int e : idx) seqs.push_back(pairs[e].target.tokens);
      SourceCache<T> cache = build_source_cache(encoder, batch_sources());
      if (zero_source) cache = cache.zeros_like();
      st.adapters.mode = AdapterStack<T>::Mode::fused_cache;
      st.adapters.cache = &cache;
      out.enc = encoder.encode_batch(seqs, &st.adapters);
      st.adapters.cache = nullptr;
      break;
    }
    case Method::flare_mt: {
      for (int e : idx) seqs.push_back(pairs[e].target.tokens);
      auto mt = st.mt_encoder->encode_batch(seqs);
      Tensor<T> latent = matmul(mt.hidden.detached(), st.proj.w_proj);
      if (zero_source) latent = Tensor<T>::zeros(latent.shape());
      st.adapters.mode = AdapterStack<T>::Mode::fused_latent;
      st.adapters.latent = latent;
      st.adapters.latent_seq_len = mt.seq_len;
      out.enc = encoder.encode_batch(seqs, &st.adapters);
      break;
    }
    case Method::input_fusion: {
      for (int e : idx)
        seqs.push_back(input_level_concat(pairs[e].source.tokens,
                                          pairs[e].target.tokens,
                                          VocabLayout::sep,
                                          encoder.config().max_seq_len));
      out.span_offset =
          static_cast<int>(pairs[idx.front()].source.tokens.size()) + 1;
      out.enc = encoder.encode_batch(seqs, &st.adapters);
      break;
    }
    case Method::xmixup: {
      for (int e : idx) seqs.push_back(pairs[e].target.tokens);
      SourceCache<T> cache = build_source_cache(encoder, batch_sources());
      if (zero_source) cache = cache.zeros_like();
      XMixupPass<T> pass;
      pass.module = &st.xmixup;
      pass.cache = &cache;
      auto hook = pass.hook();
      out.enc = encoder.encode_batch(seqs, nullptr, &hook);
      out.consistency = pass.consistency;
      break;
    }
  }
  return out;
}

template <typename T>
Tensor<T> batch_loss(MethodState<T>& st, const ForwardOut<T>& fwd,
                     const std::vector<ParallelPair>& pairs,
                     const std::vector<int>& idx, TaskKind kind,
                     double lambda_consistency) {
  Tensor<T> loss;
  if (kind == TaskKind::classification) {
    std::vector<int> labels;
    labels.reserve(idx.size());
    for (int e : idx) labels.push_back(pairs[e].target.label);
    loss = cross_entropy(classify_logits(st.head, fwd.enc), labels);
  } else {
    std::vector<int> starts, ends;
    starts.reserve(idx.size());
    ends.reserve(idx.size());
    for (int e : idx) {
      starts.push_back(pairs[e].target.span.start + fwd.span_offset);
      ends.push_back(pairs[e].target.span.end + fwd.span_offset);
    }
    auto [sl, el] = span_logits(st.head, fwd.enc);
    loss = scale(add(cross_entropy(sl, starts), cross_entropy(el, ends)),
                 T(0.5));
  }
  if (fwd.consistency.defined() && lambda_consistency != 0)
    loss = add(loss, scale(fwd.consistency, T(lambda_consistency)));
  return loss;
}

struct PredictionRecord {
  int id = 0;
  std::string setting;
  std::string language;
  std::string prediction;
  std::string gold;
  bool counted = true;
};

struct EvalResult {
  double metric = 0;  // percent correct over counted examples
  int correct = 0;
  int counted = 0;
  std::vector<PredictionRecord> records;
};

inline void finalize_metric(EvalResult& res) {
  res.metric = res.counted == 0
                   ? 0.0
                   : 100.0 * res.correct / static_cast<double>(res.counted);
}

// Scores one forward batch. Span predictions and golds are expressed in
// the frame of the encoded input (the gold span is shifted by span_offset
// so concatenated inputs compare positions consistently). Torn spans are
// recorded but not counted.
template <typename T>
void score_batch(const TaskHead<T>& head, TaskKind kind, int max_span_len,
                 const ForwardOut<T>& fwd,
                 const std::vector<const TaskInstance*>& gold,
                 const std::string& setting, EvalResult& res) {
  int batch = fwd.enc.batch;
  if (kind == TaskKind::classification) {
    Tensor<T> logits = classify_logits(head, fwd.enc);
    const auto& v = logits.data();
    int c = logits.shape()[1];
    for (int b = 0; b < batch; ++b) {
      int best = 0;
      for (int k = 1; k < c; ++k)
        if (v[b * c + k] > v[b * c + best]) best = k;
      PredictionRecord rec;
      rec.id = gold[b]->id;
      rec.setting = setting;
      rec.language = gold[b]->language;
      rec.prediction = std::to_string(best);
      rec.gold = std::to_string(gold[b]->label);
      rec.counted = true;
      res.counted += 1;
      if (best == gold[b]->label) res.correct += 1;
      res.records.push_back(std::move(rec));
    }
  } else {
    auto [sl, el] = span_logits(head, fwd.enc);
    const auto& sv = sl.data();
    const auto& ev = el.data();
    int m = fwd.enc.seq_len;
    for (int b = 0; b < batch; ++b) {
      std::vector<T> srow(sv.begin() + static_cast<size_t>(b) * m,
                          sv.begin() + static_cast<size_t>(b + 1) * m);
      std::vector<T> erow(ev.begin() + static_cast<size_t>(b) * m,
                          ev.begin() + static_cast<size_t>(b + 1) * m);
      auto [ps, pe] = decode_span(srow, erow, max_span_len);
      int gs = gold[b]->span.start + fwd.span_offset;
      int ge = gold[b]->span.end + fwd.span_offset;
      PredictionRecord rec;
      rec.id = gold[b]->id;
      rec.setting = setting;
      rec.language = gold[b]->language;
      rec.prediction = std::to_string(ps) + ":" + std::to_string(pe);
      rec.gold = std::to_string(gs) + ":" + std::to_string(ge);
      rec.counted = gold[b]->span_valid;
      if (rec.counted) {
        res.counted += 1;
        if (ps == gs && pe == ge) res.correct += 1;
      }
      res.records.push_back(std::move(rec));
    }
  }
}

// Exact-match / accuracy of an adapted method over a split of pairs.
template <typename T>
EvalResult evaluate_method(const TransformerEncoder<T>& encoder,
                           MethodState<T>& st,
                           const std::vector<ParallelPair>& pairs,
                           int batch_size, bool zero_source,
                           const std::string& setting) {
  EvalResult res;
  if (pairs.empty()) return res;
  int n = static_cast<int>(pairs.size());
  int max_span = encoder.config().max_span_len;
  for (int at = 0; at < n; at += batch_size) {
    std::vector<int> idx;
    for (int e = at; e < std::min(n, at + batch_size); ++e) idx.push_back(e);
    auto fwd = method_forward(encoder, st, pairs, idx, zero_source);
    std::vector<const TaskInstance*> gold;
    gold.reserve(idx.size());
    for (int e : idx) gold.push_back(&pairs[e].target);
    score_batch(st.head, st.kind, max_span, fwd, gold, setting, res);
  }
  finalize_metric(res);
  return res;
}

// Plain model over raw instances: the zero-shot / translate-test /
// English-upper-bound evaluations.
template <typename T>
EvalResult evaluate_model(const Model<T>& model,
                          const std::vector<TaskInstance>& instances,
                          int batch_size, const std::string& setting) {
  EvalResult res;
  if (instances.empty()) return res;
  int n = static_cast<int>(instances.size());
  for (int at = 0; at < n; at += batch_size) {
    std::vector<std::vector<int>> seqs;
    std::vector<const TaskInstance*> gold;
    for (int e = at; e < std::min(n, at + batch_size); ++e) {
      seqs.push_back(instances[e].tokens);
      gold.push_back(&instances[e]);
    }
    ForwardOut<T> fwd;
    fwd.enc = model.encoder.encode_batch(seqs);
    score_batch(model.head, model.head.kind, model.config.max_span_len, fwd,
                gold, setting, res);
  }
  finalize_metric(res);
  return res;
}

struct TrainReport {
  std::vector<double> epoch_train_loss;
  std::vector<double> epoch_val_metric;
  int best_epoch = -1;
  double best_val_metric = 0;
  double initial_train_loss = 0;
  double final_train_loss = 0;
  long long steps = 0;
  // train-only-fusion accounting
  long long fused_batches = 0;
  long long total_batches = 0;
};

template <typename T>
struct TrainOutcome {
  MethodState<T> state;
  TrainReport report;
};

namespace detail {

template <typename T>
std::vector<std::vector<T>> snapshot_values(const std::vector<Tensor<T>>& ps) {
  std::vector<std::vector<T>> out;
  out.reserve(ps.size());
  for (const auto& p : ps) out.push_back(p.data());
  return out;
}

template <typename T>
void restore_values(std::vector<Tensor<T>>& ps,
                    const std::vector<std::vector<T>>& values) {
  for (size_t i = 0; i < ps.size(); ++i) ps[i].data_mut() = values[i];
}

}  // namespace detail

// Builds the trainable state for a method without running any training.
// Evaluation and probing reuse this to reconstruct a state before loading
// adapter weights from a checkpoint.
template <typename T>
MethodState<T> init_method_state(const TransformerEncoder<T>& encoder,
                                 const TaskHead<T>& head_init, TaskKind kind,
                                 const TrainConfig& tc,
                                 const TransformerEncoder<T>* mt_encoder =
                                     nullptr) {
  const ModelConfig& cfg = encoder.config();

  MethodState<T> st;
  st.method = tc.method;
  st.kind = kind;
  st.config = tc;
  st.head = head_init.clone();
  st.head.set_trainable(true);

  if (tc.method == Method::xmixup) {
    st.xmixup = XMixupModule<T>::init(cfg, tc.mix_layer,
                                      T(tc.lambda_consistency),
                                      derive_seed(tc.seed, "xmixup"));
    st.xmixup.set_trainable(true);
  } else {
    FusionSpec spec = tc.fusion;
    if (tc.method == Method::lora || tc.method == Method::input_fusion)
      spec.fn = FusionFunction::add;  // plain adapters carry no fusion maps
    st.adapters =
        AdapterStack<T>::init(cfg, spec, derive_seed(tc.seed, "adapters"));
    st.adapters.set_trainable(true);
    st.adapters.source_offset = tc.source_offset;
    if (tc.method == Method::flare)
      st.adapters.mode = AdapterStack<T>::Mode::fused_cache;
    else if (tc.method == Method::flare_mt)
      st.adapters.mode = AdapterStack<T>::Mode::fused_latent;
  }
  if (tc.method == Method::flare_mt) {
    if (!mt_encoder)
      throw ContractError("init_method_state: flare_mt needs a translation encoder");
    st.mt_encoder = mt_encoder;
    st.proj = MtLatentProjection<T>::init(mt_encoder->config().hidden_dim,
                                          cfg.hidden_dim,
                                          derive_seed(tc.seed, "mt-proj"));
    st.proj.w_proj.set_requires_grad(true);
  }
  return st;
}

// Trains one method's trainable parameters against a frozen encoder.
// Epoch order is seed-derived, the checkpoint with the best validation
// metric wins (earliest epoch on ties), and a non-finite loss aborts with
// the offending step named.
template <typename T>
TrainOutcome<T> train_method(const TransformerEncoder<T>& encoder,
                             const TaskHead<T>& head_init, TaskKind kind,
                             const std::vector<ParallelPair>& train_pairs,
                             const std::vector<ParallelPair>& val_pairs,
                             const TrainConfig& tc,
                             const TransformerEncoder<T>* mt_encoder = nullptr) {
  if (train_pairs.empty())
    throw ContractError("train_method: no training pairs");

  MethodState<T> st = init_method_state(encoder, head_init, kind, tc,
                                        mt_encoder);

  // Span training skips instances whose gold span was torn by reordering.
  std::vector<int> usable;
  for (int i = 0; i < static_cast<int>(train_pairs.size()); ++i)
    if (kind == TaskKind::classification || train_pairs[i].target.span_valid)
      usable.push_back(i);
  if (usable.empty())
    throw ContractError("train_method: no usable training pairs");

  std::vector<Tensor<T>> head_params, other_params;
  for (auto& [name, t] : st.named_parameters()) {
    if (name.rfind("head.", 0) == 0)
      head_params.push_back(t);
    else
      other_params.push_back(t);
  }
  AdamW<T> opt({{other_params, T(tc.lr)}, {head_params, T(tc.head_lr)}},
               T(0.9), T(0.999), T(1e-8), T(tc.weight_decay));
  std::vector<Tensor<T>> all_params = opt.all_params();

  auto loss_over_train = [&]() {
    double total = 0;
    long count = 0;
    for (size_t at = 0; at < usable.size(); at += tc.batch_size) {
      std::vector<int> idx(usable.begin() + at,
                           usable.begin() +
                               std::min(usable.size(),
                                        at + static_cast<size_t>(tc.batch_size)));
      auto fwd = method_forward(encoder, st, train_pairs, idx,
                                tc.train_only_fusion);
      auto loss =
          batch_loss(st, fwd, train_pairs, idx, kind, tc.lambda_consistency);
      total += static_cast<double>(loss.item()) * idx.size();
      count += static_cast<long>(idx.size());
    }
    return total / static_cast<double>(count);
  };

  TrainReport rep;
  rep.initial_train_loss = loss_over_train();

  std::vector<std::vector<T>> best_values;
  double best_metric = -1;
  long long step = 0;
  uint64_t epoch_seed = derive_seed(tc.seed, "epoch-order");

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::vector<int> order = usable;
    Rng rng(derive_seed(epoch_seed, static_cast<uint64_t>(epoch)));
    rng.shuffle(order);
    size_t num_batches =
        (order.size() + tc.batch_size - 1) / tc.batch_size;
    // Train-only fusion: a random half of the batches fuse, the rest see a
    // zeroed source. Balanced assignment keeps the fused fraction at 1/2.
    std::vector<char> fuse_batch(num_batches, 1);
    if (tc.train_only_fusion) {
      for (size_t b = num_batches / 2; b < num_batches; ++b)
        fuse_batch[b] = 0;
      rng.shuffle(fuse_batch);
    }
    double ep_loss = 0;
    long seen = 0;
    size_t batch_i = 0;
    for (size_t at = 0; at < order.size();
         at += tc.batch_size, ++batch_i) {
      std::vector<int> idx(order.begin() + at,
                           order.begin() +
                               std::min(order.size(),
                                        at + static_cast<size_t>(tc.batch_size)));
      bool zero_src = tc.train_only_fusion && !fuse_batch[batch_i];
      rep.total_batches += 1;
      rep.fused_batches += !zero_src;
      auto fwd = method_forward(encoder, st, train_pairs, idx, zero_src);
      auto loss =
          batch_loss(st, fwd, train_pairs, idx, kind, tc.lambda_consistency);
      double lv = static_cast<double>(loss.item());
      ++step;
      if (!std::isfinite(lv))
        throw TrainingError("loss is not finite at step " +
                            std::to_string(step));
      ep_loss += lv * idx.size();
      seen += static_cast<long>(idx.size());
      opt.zero_grad();
      backward(loss);
      clip_grad_norm(all_params, T(tc.clip_norm));
      opt.step();
    }
    rep.epoch_train_loss.push_back(ep_loss / seen);
    double vm = 0;
    if (!val_pairs.empty())
      vm = evaluate_method(encoder, st, val_pairs, tc.batch_size,
                           tc.train_only_fusion, "val")
               .metric;
    rep.epoch_val_metric.push_back(vm);
    if (vm > best_metric) {
      best_metric = vm;
      rep.best_epoch = epoch;
      best_values = detail::snapshot_values(all_params);
    }
  }
  if (!best_values.empty())
    detail::restore_values(all_params, best_values);
  rep.best_val_metric = best_metric;
  rep.final_train_loss = loss_over_train();
  rep.steps = step;
  return {std::move(st), std::move(rep)};
}

template <typename T>
struct BaseOutcome {
  Model<T> model;  // adapters merged in, head trained
  TrainReport report;
  double english_test_metric = 0;
  std::vector<PredictionRecord> test_records;
};

inline std::vector<ParallelPair> as_pairs(
    const std::vector<TaskInstance>& instances) {
  std::vector<ParallelPair> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) {
    ParallelPair p;
    p.source = inst;
    p.target = inst;
    p.provenance = "en";
    out.push_back(std::move(p));
  }
  return out;
}

// Stage one: fit the task in English on a frozen random encoder with plain
// adapters plus the head, then fold the adapters into the encoder weights.
// The result plays the role of a pretrained monolingual model.
template <typename T>
BaseOutcome<T> train_base_english(const ModelConfig& cfg, TaskKind kind,
                                  const std::vector<TaskInstance>& en_train,
                                  const std::vector<TaskInstance>& en_val,
                                  const std::vector<TaskInstance>& en_test,
                                  TrainConfig tc) {
  tc.method = Method::lora;
  tc.train_only_fusion = false;
  Model<T> model =
      Model<T>::init(cfg, kind, derive_seed(tc.seed, "base-model"));
  model.encoder.set_trainable(false);
  auto outcome = train_method(model.encoder, model.head, kind,
                              as_pairs(en_train), as_pairs(en_val), tc);
  outcome.state.adapters.merge_into(model.encoder);
  model.head = outcome.state.head;
  model.head.set_trainable(false);

  BaseOutcome<T> res;
  res.model = std::move(model);
  res.report = std::move(outcome.report);
  auto ev = evaluate_model(res.model, en_test, tc.batch_size, "english");
  res.english_test_metric = ev.metric;
  res.test_records = std::move(ev.records);
  return res;
}

template <typename T>
struct MtStandinOutcome {
  TransformerEncoder<T> encoder;  // frozen
  double holdout_accuracy = 0;
};

// Fits a small encoder to recover English token ids from ciphered text
// (per-position classification), then freezes it. Its hidden states stand
// in for a translation system's encoder output.
template <typename T>
MtStandinOutcome<T> pretrain_mt_standin(const CipherLanguage& lang,
                                        const ModelConfig& data_cfg,
                                        const std::vector<TaskInstance>& english,
                                        uint64_t seed, int epochs = 5,
                                        double lr = 1e-3,
                                        int batch_size = 16) {
  if (english.size() < 20)
    throw ContractError("pretrain_mt_standin: needs at least 20 instances");
  ModelConfig mt_cfg;
  mt_cfg.num_layers = 2;
  mt_cfg.hidden_dim = 48;
  mt_cfg.num_heads = 4;
  mt_cfg.ffn_dim = 96;
  mt_cfg.vocab_size = data_cfg.vocab_size;
  mt_cfg.max_seq_len = data_cfg.max_seq_len;
  mt_cfg.num_classes = data_cfg.num_classes;
  mt_cfg.max_span_len = data_cfg.max_span_len;

  TransformerEncoder<T> enc(mt_cfg, derive_seed(seed, "mt-encoder"));
  Rng wrng(derive_seed(seed, "mt-decipher-head"));
  T bound = T(1) / std::sqrt(static_cast<T>(mt_cfg.hidden_dim));
  std::vector<T> wv(static_cast<size_t>(mt_cfg.hidden_dim) *
                    mt_cfg.vocab_size);
  for (auto& x : wv) x = static_cast<T>(wrng.uniform(-bound, bound));
  Tensor<T> out_w = Tensor<T>::from_data({mt_cfg.hidden_dim,
                                          mt_cfg.vocab_size},
                                         std::move(wv), true);

  uint64_t cipher_seed = derive_seed(seed, "mt-pretrain-cipher");
  std::vector<std::vector<int>> inputs;
  std::vector<std::vector<int>> labels;
  inputs.reserve(english.size());
  labels.reserve(english.size());
  for (const auto& inst : english) {
    TaskInstance c = apply_cipher(lang, inst, Direction::to_target, 1.0,
                                  derive_seed(cipher_seed,
                                              static_cast<uint64_t>(inst.id)));
    std::vector<int> lab(c.tokens.size());
    for (size_t i = 0; i < c.tokens.size(); ++i)
      lab[i] = lang.inv_perm[c.tokens[i]];
    inputs.push_back(std::move(c.tokens));
    labels.push_back(std::move(lab));
  }
  int holdout = std::max(1, static_cast<int>(english.size()) / 10);
  int n_train = static_cast<int>(english.size()) - holdout;

  std::vector<Tensor<T>> params;
  for (auto& [name, t] : enc.named_parameters()) params.push_back(t);
  params.push_back(out_w);
  AdamW<T> opt({{params, T(lr)}}, T(0.9), T(0.999), T(1e-8), T(0));

  Rng order_rng(derive_seed(seed, "mt-pretrain-order"));
  std::vector<int> base_order(n_train);
  std::iota(base_order.begin(), base_order.end(), 0);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<int> order = base_order;
    order_rng.shuffle(order);
    for (size_t at = 0; at < order.size(); at += batch_size) {
      std::vector<std::vector<int>> seqs;
      std::vector<int> flat_labels;
      for (size_t e = at;
           e < std::min(order.size(), at + static_cast<size_t>(batch_size));
           ++e) {
        seqs.push_back(inputs[order[e]]);
        for (int l : labels[order[e]]) flat_labels.push_back(l);
      }
      auto res = enc.encode_batch(seqs);
      auto loss = cross_entropy(matmul(res.hidden, out_w), flat_labels);
      if (!std::isfinite(static_cast<double>(loss.item())))
        throw TrainingError("decipher pretraining diverged");
      opt.zero_grad();
      backward(loss);
      opt.step();
    }
  }
  enc.set_trainable(false);

  long correct = 0, total = 0;
  for (int e = n_train; e < static_cast<int>(english.size()); ++e) {
    auto res = enc.encode_batch({inputs[e]});
    auto logits = matmul(res.hidden, out_w);
    const auto& v = logits.data();
    int vs = mt_cfg.vocab_size;
    for (size_t i = 0; i < labels[e].size(); ++i) {
      int best = 0;
      for (int k = 1; k < vs; ++k)
        if (v[i * vs + k] > v[i * vs + best]) best = k;
      correct += best == labels[e][i];
      total += 1;
    }
  }
  MtStandinOutcome<T> out;
  out.encoder = std::move(enc);
  out.holdout_accuracy = total == 0 ? 0 : 100.0 * correct / total;
  return out;
}

}  // namespace flare
