#pragma once

#include <map>
#include <string>

#include "flare/adapters.hpp"
#include "flare/model.hpp"

namespace flare {

enum class Method { lora, flare, flare_mt, input_fusion, xmixup };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::lora: return "lora";
    case Method::flare: return "flare";
    case Method::flare_mt: return "flare_mt";
    case Method::input_fusion: return "input_fusion";
    case Method::xmixup: return "xmixup";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "lora") return Method::lora;
  if (s == "flare") return Method::flare;
  if (s == "flare_mt") return Method::flare_mt;
  if (s == "input_fusion") return Method::input_fusion;
  if (s == "xmixup") return Method::xmixup;
  throw ContractError("unknown method: " + s);
}

// Analytic cost model. All counts are forward-pass multiply-accumulate
// operations for a single example, grouped by component so tables can
// break out where the budget goes. Training cost per optimizer step is
// approximated as 3x forward (forward + ~2x for backward) times batch.
struct FlopCounts {
  std::map<std::string, long long> macs;

  void add(const std::string& key, long long n) {
    if (n != 0) macs[key] += n;
  }

  long long total() const {
    long long t = 0;
    for (const auto& [k, v] : macs) t += v;
    return t;
  }

  long long at(const std::string& key) const {
    auto it = macs.find(key);
    return it == macs.end() ? 0 : it->second;
  }

  FlopCounts& operator+=(const FlopCounts& o) {
    for (const auto& [k, v] : o.macs) macs[k] += v;
    return *this;
  }

  bool operator==(const FlopCounts&) const = default;
};

inline FlopCounts encoder_block_flops(const ModelConfig& cfg, int m,
                                      const std::string& prefix = "") {
  long long mm = m, d = cfg.hidden_dim;
  FlopCounts c;
  c.add(prefix + "projections", 4 * mm * d * d);
  c.add(prefix + "attention_scores", mm * mm * d);
  c.add(prefix + "attention_output", mm * mm * d);
  c.add(prefix + "ffn", 2 * mm * d * cfg.ffn_dim);
  return c;
}

inline FlopCounts encoder_pass_flops(const ModelConfig& cfg, int m,
                                     const std::string& prefix = "") {
  FlopCounts c;
  for (int i = 0; i < cfg.num_layers; ++i)
    c += encoder_block_flops(cfg, m, prefix);
  return c;
}

// Plain bottleneck adapters on the query and value projections of every
// block: down then up projection per adapter.
inline FlopCounts adapter_pass_flops(const ModelConfig& cfg, int m, int rank) {
  FlopCounts c;
  c.add("adapters",
        cfg.num_layers * 2LL * (2LL * m * cfg.hidden_dim * rank));
  return c;
}

// Extra work fusion adds on top of a plain adapter pass: pushing the
// source rows through the shared down-projection, then combining the two
// bottleneck activations.
inline FlopCounts fusion_extra_flops(const ModelConfig& cfg, int target_len,
                                     int source_len, int rank,
                                     FusionFunction fn) {
  long long mt = target_len, ms = source_len, r = rank;
  long long per_adapter = ms * cfg.hidden_dim * r;
  switch (fn) {
    case FusionFunction::add:
    case FusionFunction::mul:
      per_adapter += mt * r;
      break;
    case FusionFunction::add_relu:
      per_adapter += 2 * mt * r;
      break;
    case FusionFunction::cross_attn:
      per_adapter += 3 * mt * r * r + 2 * mt * mt * r;
      break;
  }
  FlopCounts c;
  c.add("fusion", cfg.num_layers * 2LL * per_adapter);
  return c;
}

// Frozen translation encoder plus the trained projection into the main
// model width.
inline FlopCounts mt_pipeline_flops(const ModelConfig& mt_cfg, int main_dim,
                                    int m) {
  FlopCounts c;
  FlopCounts enc = encoder_pass_flops(mt_cfg, m);
  c.add("mt_encoder", enc.total());
  c.add("mt_projection", static_cast<long long>(m) * mt_cfg.hidden_dim *
                             main_dim);
  return c;
}

inline FlopCounts head_pass_flops(const ModelConfig& cfg, TaskKind kind,
                                  int m) {
  FlopCounts c;
  if (kind == TaskKind::classification)
    c.add("head", static_cast<long long>(cfg.hidden_dim) * cfg.num_classes);
  else
    c.add("head", 2LL * m * cfg.hidden_dim);
  return c;
}

struct MethodFlopOptions {
  int target_len = 12;
  int source_len = 12;
  int rank = 8;
  FusionFunction fusion = FusionFunction::add_relu;
  ModelConfig mt_config{};
  int sep_tokens = 1;
};

inline FlopCounts method_forward_flops(Method method, const ModelConfig& cfg,
                                       TaskKind kind,
                                       const MethodFlopOptions& opt) {
  FlopCounts c;
  switch (method) {
    case Method::lora:
      c += encoder_pass_flops(cfg, opt.target_len);
      c += adapter_pass_flops(cfg, opt.target_len, opt.rank);
      c += head_pass_flops(cfg, kind, opt.target_len);
      break;
    case Method::flare:
      c += method_forward_flops(Method::lora, cfg, kind, opt);
      c += encoder_pass_flops(cfg, opt.source_len, "source_");
      c += fusion_extra_flops(cfg, opt.target_len, opt.source_len, opt.rank,
                              opt.fusion);
      break;
    case Method::flare_mt:
      c += method_forward_flops(Method::lora, cfg, kind, opt);
      c += mt_pipeline_flops(opt.mt_config, cfg.hidden_dim, opt.source_len);
      c += fusion_extra_flops(cfg, opt.target_len, opt.source_len, opt.rank,
                              opt.fusion);
      break;
    case Method::input_fusion: {
      int len = opt.source_len + opt.sep_tokens + opt.target_len;
      c += encoder_pass_flops(cfg, len);
      c += adapter_pass_flops(cfg, len, opt.rank);
      c += head_pass_flops(cfg, kind, len);
      break;
    }
    case Method::xmixup: {
      c += encoder_pass_flops(cfg, opt.target_len);
      c += encoder_pass_flops(cfg, opt.source_len, "source_");
      long long mt = opt.target_len, ms = opt.source_len, d = cfg.hidden_dim;
      c.add("fusion", 2 * mt * d * d + 2 * ms * d * d + 2 * mt * ms * d);
      c += head_pass_flops(cfg, kind, opt.target_len);
      break;
    }
  }
  return c;
}

inline long long per_step_flops(const FlopCounts& forward, int batch_size) {
  return 3LL * batch_size * forward.total();
}

// Closed-form trainable parameter counts, matching named_parameters()
// of the corresponding modules exactly.
inline long long adapter_trainable_params(const ModelConfig& cfg,
                                          const FusionSpec& spec) {
  long long d = cfg.hidden_dim, r = spec.rank;
  long long per_adapter = 2 * d * r;
  if (spec.fn == FusionFunction::cross_attn) per_adapter += 3 * r * r;
  return cfg.num_layers * 2LL * per_adapter;
}

inline long long head_trainable_params(const ModelConfig& cfg, TaskKind kind) {
  if (kind == TaskKind::classification)
    return static_cast<long long>(cfg.hidden_dim) * cfg.num_classes +
           cfg.num_classes;
  return 2LL * (cfg.hidden_dim + 1);
}

inline long long mt_projection_params(int mt_dim, int main_dim) {
  return static_cast<long long>(mt_dim) * main_dim;
}

inline long long xmixup_trainable_params(const ModelConfig& cfg) {
  return 4LL * cfg.hidden_dim * cfg.hidden_dim;
}

inline long long method_trainable_params(Method method, const ModelConfig& cfg,
                                         TaskKind kind, const FusionSpec& spec,
                                         int mt_dim = 0) {
  long long head = head_trainable_params(cfg, kind);
  switch (method) {
    case Method::lora:
    case Method::input_fusion: {
      FusionSpec plain = spec;
      plain.fn = FusionFunction::add;
      return adapter_trainable_params(cfg, plain) + head;
    }
    case Method::flare:
      return adapter_trainable_params(cfg, spec) + head;
    case Method::flare_mt:
      return adapter_trainable_params(cfg, spec) +
             mt_projection_params(mt_dim, cfg.hidden_dim) + head;
    case Method::xmixup:
      return xmixup_trainable_params(cfg) + head;
  }
  return 0;
}

}  // namespace flare
