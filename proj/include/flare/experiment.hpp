#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <string>
#include <tuple>
#include <type_traits>
#include <utility>
#include <vector>

#include "flare/checkpoint.hpp"
#include "flare/flops.hpp"
#include "flare/report.hpp"
#include "flare/synth.hpp"
#include "flare/train.hpp"

namespace flare {

// Declarative experiment driver. A config names a task, a set of cipher
// languages, methods, and seeds; running it fills
//   <output_dir>/<config-hash>/<method>/<language>/<seed>/
// with metrics, prediction dumps, a profile, and adapter checkpoints,
// plus a manifest at the root. Base-stage models and translation
// stand-ins are cached per (config, seed) next to the runs so methods
// and sweep cells share them.

inline constexpr const char* kExperimentSchemaVersion = "flare.experiment.v1";
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kConfigFile = "config.json";
inline constexpr const char* kMetricsFile = "metrics.json";
inline constexpr const char* kPredictionsFile = "predictions.jsonl";
inline constexpr const char* kProfileFile = "profile.json";
inline constexpr const char* kAdaptersFile = "adapters.ckpt";

struct LanguageSpec {
  std::string name = "goblish";
  double swap_rate = 0.1;
};

inline const std::set<std::string>& known_methods() {
  static const std::set<std::string> m = {
      "zero_shot",    "translate_test", "lora",   "flare",
      "flare_train_only", "flare_mt",   "input_fusion", "xmixup"};
  return m;
}

inline bool method_trains(const std::string& name) {
  return name != "zero_shot" && name != "translate_test";
}

struct ExperimentConfig {
  std::string task = "classification";
  std::string output_dir = "runs";
  ModelConfig model{};
  SplitSizes sizes{};  // task defaults unless overridden
  GenOptions gen{};
  uint64_t data_seed = 1;
  std::vector<LanguageSpec> languages{{"goblish", 0.1}};
  std::vector<std::string> methods{"zero_shot", "translate_test", "lora",
                                   "flare"};
  FusionSpec fusion{};
  std::vector<double> mt_quality{0.9};
  std::vector<int> seeds{0, 1, 2, 3, 4};
  int low_resource = 0;  // 0 = full training split
  int source_offset = 0;
  int mix_layer = 2;
  // English base stage (task adapters merged afterwards).
  int base_rank = 8;
  double base_alpha = 16.0;
  int base_epochs = 10;
  double base_lr = 2e-4;
  double base_head_lr = 2e-4;  // head starts cold, so it trains at full rate
  // Target-language stage.
  double lr = 2e-4;
  double head_lr = 2e-5;
  int epochs = 10;
  int batch_size = 16;
  double lambda_consistency = 0.1;

  TaskKind kind() const { return task_kind_from_string(task); }
};

// --------------------------------------------------------------- config io

namespace detail {

inline void collect_unknown_keys(const nlohmann::json& j,
                                 const std::string& prefix,
                                 const std::set<std::string>& allowed,
                                 std::vector<std::string>& bad) {
  if (!j.is_object()) return;
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) bad.push_back(prefix + it.key());
}

inline uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(uint64_t v, int digits) {
  static const char* d = "0123456789abcdef";
  std::string out(digits, '0');
  for (int i = digits - 1; i >= 0; --i, v >>= 4) out[i] = d[v & 0xf];
  return out;
}

}  // namespace detail

inline void validate_experiment_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  std::vector<std::string> bad;
  static const std::set<std::string> root = {
      "schema_version", "task",       "output_dir",    "model",
      "data",           "languages",  "methods",       "fusion",
      "r",              "alpha",      "mt_quality",    "seeds",
      "low_resource",   "source_offset", "mix_layer",  "base",
      "train"};
  static const std::set<std::string> model = {
      "num_layers", "hidden_dim", "num_heads", "ffn_dim", "vocab_size",
      "max_seq_len"};
  static const std::set<std::string> data = {
      "train",        "val",           "test",
      "seed",         "seq_len",       "num_classes",
      "answer_vocab", "max_span_len",  "marker_count",
      "evidence_per_class"};
  static const std::set<std::string> base = {"r", "alpha", "epochs", "lr",
                                             "head_lr"};
  static const std::set<std::string> train = {"lr", "head_lr", "epochs",
                                              "batch_size", "lambda"};
  static const std::set<std::string> language = {"name", "swap_rate"};
  detail::collect_unknown_keys(j, "", root, bad);
  if (j.contains("model")) detail::collect_unknown_keys(j["model"], "model.", model, bad);
  if (j.contains("data")) detail::collect_unknown_keys(j["data"], "data.", data, bad);
  if (j.contains("base")) detail::collect_unknown_keys(j["base"], "base.", base, bad);
  if (j.contains("train")) detail::collect_unknown_keys(j["train"], "train.", train, bad);
  if (j.contains("languages") && j["languages"].is_array())
    for (size_t i = 0; i < j["languages"].size(); ++i)
      detail::collect_unknown_keys(j["languages"][i],
                                   "languages[" + std::to_string(i) + "].",
                                   language, bad);
  if (!bad.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : bad) msg += " " + k;
    throw ConfigError(msg);
  }
  if (j.contains("schema_version") &&
      (!j["schema_version"].is_string() ||
       j["schema_version"].get<std::string>() != kExperimentSchemaVersion))
    throw ConfigError("config: unsupported schema_version, expected '" +
                      std::string(kExperimentSchemaVersion) + "'");
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  validate_experiment_json(j);
  ExperimentConfig c;
  try {
    c.task = j.value("task", c.task);
    TaskKind kind = task_kind_from_string(c.task);
    c.sizes = default_split_sizes(kind);
    c.base_rank = kind == TaskKind::span ? 32 : 8;
    c.base_alpha = 2.0 * c.base_rank;
    c.output_dir = j.value("output_dir", c.output_dir);

    if (j.contains("model")) {
      const auto& m = j["model"];
      c.model.num_layers = m.value("num_layers", c.model.num_layers);
      c.model.hidden_dim = m.value("hidden_dim", c.model.hidden_dim);
      c.model.num_heads = m.value("num_heads", c.model.num_heads);
      c.model.ffn_dim = m.value("ffn_dim", c.model.ffn_dim);
      c.model.vocab_size = m.value("vocab_size", c.model.vocab_size);
      c.model.max_seq_len = m.value("max_seq_len", c.model.max_seq_len);
    }
    c.mix_layer = c.model.num_layers / 2;

    if (j.contains("data")) {
      const auto& d = j["data"];
      c.sizes.train = d.value("train", c.sizes.train);
      c.sizes.val = d.value("val", c.sizes.val);
      c.sizes.test = d.value("test", c.sizes.test);
      c.data_seed = d.value("seed", c.data_seed);
      c.gen.seq_len = d.value("seq_len", c.gen.seq_len);
      c.gen.num_classes = d.value("num_classes", c.gen.num_classes);
      c.gen.answer_vocab = d.value("answer_vocab", c.gen.answer_vocab);
      c.gen.max_span_len = d.value("max_span_len", c.gen.max_span_len);
      c.gen.marker_count = d.value("marker_count", c.gen.marker_count);
      c.gen.evidence_per_class =
          d.value("evidence_per_class", c.gen.evidence_per_class);
    }
    c.gen.vocab_size = c.model.vocab_size;
    c.model.num_classes = c.gen.num_classes;
    c.model.max_span_len = c.gen.max_span_len;

    if (j.contains("languages")) {
      c.languages.clear();
      for (const auto& l : j["languages"]) {
        LanguageSpec spec;
        spec.name = l.at("name").get<std::string>();
        spec.swap_rate = l.value("swap_rate", 0.1);
        c.languages.push_back(std::move(spec));
      }
    }
    if (j.contains("methods"))
      c.methods = j["methods"].get<std::vector<std::string>>();
    if (j.contains("fusion"))
      c.fusion.fn = fusion_from_string(j["fusion"].get<std::string>());
    c.fusion.rank = j.value("r", c.fusion.rank);
    c.fusion.alpha = j.value("alpha", c.fusion.alpha);
    if (j.contains("mt_quality"))
      c.mt_quality = j["mt_quality"].get<std::vector<double>>();
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<int>>();
    if (j.contains("low_resource") && !j["low_resource"].is_null()) {
      c.low_resource = j["low_resource"].get<int>();
      if (c.low_resource > 0) c.epochs = 20;
    }
    c.source_offset = j.value("source_offset", c.source_offset);
    c.mix_layer = j.value("mix_layer", c.mix_layer);

    if (j.contains("base")) {
      const auto& b = j["base"];
      if (b.contains("r")) {
        c.base_rank = b["r"].get<int>();
        c.base_alpha = 2.0 * c.base_rank;
      }
      c.base_alpha = b.value("alpha", c.base_alpha);
      c.base_epochs = b.value("epochs", c.base_epochs);
      c.base_lr = b.value("lr", c.base_lr);
      c.base_head_lr = b.value("head_lr", c.base_head_lr);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      c.lr = t.value("lr", c.lr);
      c.head_lr = t.value("head_lr", c.head_lr);
      c.epochs = t.value("epochs", c.epochs);
      c.batch_size = t.value("batch_size", c.batch_size);
      c.lambda_consistency = t.value("lambda", c.lambda_consistency);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ContractError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }

  if (c.languages.empty()) throw ConfigError("config: no languages");
  if (c.methods.empty()) throw ConfigError("config: no methods");
  if (c.seeds.empty()) throw ConfigError("config: no seeds");
  if (c.mt_quality.empty()) throw ConfigError("config: no mt_quality values");
  std::vector<std::string> bad;
  for (const auto& m : c.methods)
    if (!known_methods().count(m)) bad.push_back("methods: " + m);
  for (double q : c.mt_quality)
    if (!(q > 0.0 && q <= 1.0)) bad.push_back("mt_quality: " + detail::fmt_g(q));
  for (const auto& l : c.languages)
    if (l.swap_rate < 0.0 || l.swap_rate >= 1.0)
      bad.push_back("languages." + l.name + ".swap_rate: " +
                    detail::fmt_g(l.swap_rate));
  if (c.low_resource < 0) bad.push_back("low_resource: negative");
  if (c.mix_layer < 0 || c.mix_layer >= c.model.num_layers)
    bad.push_back("mix_layer: " + std::to_string(c.mix_layer));
  if (c.fusion.rank <= 0) bad.push_back("r: must be positive");
  if (c.fusion.alpha <= 0) bad.push_back("alpha: must be positive");
  if (c.base_rank <= 0) bad.push_back("base.r: must be positive");
  if (c.base_alpha <= 0) bad.push_back("base.alpha: must be positive");
  if (c.epochs <= 0) bad.push_back("train.epochs: must be positive");
  if (c.base_epochs <= 0) bad.push_back("base.epochs: must be positive");
  if (c.batch_size <= 0) bad.push_back("train.batch_size: must be positive");
  if (c.sizes.train <= 0 || c.sizes.val < 0 || c.sizes.test <= 0)
    bad.push_back("data: split sizes out of range");
  if (!bad.empty()) {
    std::string msg = "invalid config values:";
    for (const auto& k : bad) msg += " " + k;
    throw ConfigError(msg);
  }
  return c;
}

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["schema_version"] = kExperimentSchemaVersion;
  j["task"] = c.task;
  j["output_dir"] = c.output_dir;
  j["model"] = {{"num_layers", c.model.num_layers},
                {"hidden_dim", c.model.hidden_dim},
                {"num_heads", c.model.num_heads},
                {"ffn_dim", c.model.ffn_dim},
                {"vocab_size", c.model.vocab_size},
                {"max_seq_len", c.model.max_seq_len}};
  j["data"] = {{"train", c.sizes.train},
               {"val", c.sizes.val},
               {"test", c.sizes.test},
               {"seed", c.data_seed},
               {"seq_len", c.gen.seq_len},
               {"num_classes", c.gen.num_classes},
               {"answer_vocab", c.gen.answer_vocab},
               {"max_span_len", c.gen.max_span_len},
               {"marker_count", c.gen.marker_count},
               {"evidence_per_class", c.gen.evidence_per_class}};
  j["languages"] = nlohmann::json::array();
  for (const auto& l : c.languages)
    j["languages"].push_back({{"name", l.name}, {"swap_rate", l.swap_rate}});
  j["methods"] = c.methods;
  j["fusion"] = to_string(c.fusion.fn);
  j["r"] = c.fusion.rank;
  j["alpha"] = c.fusion.alpha;
  j["mt_quality"] = c.mt_quality;
  j["seeds"] = c.seeds;
  if (c.low_resource > 0)
    j["low_resource"] = c.low_resource;
  else
    j["low_resource"] = nullptr;
  j["source_offset"] = c.source_offset;
  j["mix_layer"] = c.mix_layer;
  j["base"] = {{"r", c.base_rank},
               {"alpha", c.base_alpha},
               {"epochs", c.base_epochs},
               {"lr", c.base_lr},
               {"head_lr", c.base_head_lr}};
  j["train"] = {{"lr", c.lr},
                {"head_lr", c.head_lr},
                {"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"lambda", c.lambda_consistency}};
  return j;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded())
    throw ConfigError("config '" + path + "' is not valid JSON");
  return experiment_config_from_json(j);
}

inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return experiment_config_to_json(a) == experiment_config_to_json(b);
}

// The run directory name. Everything that shapes the numbers feeds the
// hash; the output location does not, so moving a run tree elsewhere
// does not change cell identities.
inline std::string config_hash(const ExperimentConfig& c) {
  nlohmann::json j = experiment_config_to_json(c);
  j.erase("output_dir");
  return detail::hex64(detail::fnv1a64(j.dump()), 12);
}

// ---------------------------------------------------------- train configs

inline TrainConfig base_train_config(const ExperimentConfig& c, int seed) {
  TrainConfig tc;
  tc.method = Method::lora;
  tc.fusion.fn = FusionFunction::add;
  tc.fusion.rank = c.base_rank;
  tc.fusion.alpha = c.base_alpha;
  tc.lr = c.base_lr;
  tc.head_lr = c.base_head_lr;
  tc.epochs = c.base_epochs;
  tc.batch_size = c.batch_size;
  tc.seed = static_cast<uint64_t>(seed);
  return tc;
}

inline TrainConfig stage2_train_config(const ExperimentConfig& c,
                                       const std::string& method, int seed) {
  TrainConfig tc;
  if (method == "flare_train_only") {
    tc.method = Method::flare;
    tc.train_only_fusion = true;
  } else {
    tc.method = method_from_string(method);
  }
  tc.fusion = c.fusion;
  tc.lr = c.lr;
  tc.head_lr = c.head_lr;
  tc.epochs = c.epochs;
  tc.batch_size = c.batch_size;
  tc.seed = static_cast<uint64_t>(seed);
  tc.source_offset = c.source_offset;
  tc.mix_layer = c.mix_layer;
  tc.lambda_consistency = c.lambda_consistency;
  return tc;
}

inline nlohmann::json train_config_to_json(const TrainConfig& tc) {
  nlohmann::json j;
  j["method"] = to_string(tc.method);
  j["fusion"] = {{"fn", to_string(tc.fusion.fn)},
                 {"r", tc.fusion.rank},
                 {"alpha", tc.fusion.alpha}};
  j["lr"] = tc.lr;
  j["head_lr"] = tc.head_lr;
  j["epochs"] = tc.epochs;
  j["batch_size"] = tc.batch_size;
  j["seed"] = tc.seed;
  j["weight_decay"] = tc.weight_decay;
  j["clip_norm"] = tc.clip_norm;
  j["source_offset"] = tc.source_offset;
  j["mix_layer"] = tc.mix_layer;
  j["lambda"] = tc.lambda_consistency;
  j["train_only_fusion"] = tc.train_only_fusion;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig tc;
  tc.method = method_from_string(j.at("method").get<std::string>());
  tc.fusion.fn = fusion_from_string(j.at("fusion").at("fn").get<std::string>());
  tc.fusion.rank = j.at("fusion").at("r").get<int>();
  tc.fusion.alpha = j.at("fusion").at("alpha").get<double>();
  tc.lr = j.at("lr").get<double>();
  tc.head_lr = j.at("head_lr").get<double>();
  tc.epochs = j.at("epochs").get<int>();
  tc.batch_size = j.at("batch_size").get<int>();
  tc.seed = j.at("seed").get<uint64_t>();
  tc.weight_decay = j.at("weight_decay").get<double>();
  tc.clip_norm = j.at("clip_norm").get<double>();
  tc.source_offset = j.at("source_offset").get<int>();
  tc.mix_layer = j.at("mix_layer").get<int>();
  tc.lambda_consistency = j.at("lambda").get<double>();
  tc.train_only_fusion = j.at("train_only_fusion").get<bool>();
  return tc;
}

// ----------------------------------------------------------------- data

inline CipherLanguage experiment_language(const ExperimentConfig& c,
                                          const LanguageSpec& spec) {
  return CipherLanguage::make(spec.name, spec.swap_rate, c.model.vocab_size,
                              derive_seed(c.data_seed, "lang:" + spec.name));
}

inline std::vector<TaskInstance> experiment_corpus(const ExperimentConfig& c) {
  long total = static_cast<long>(c.sizes.train) + c.sizes.val + c.sizes.test;
  return generate_task_corpus(c.kind(), static_cast<int>(total),
                              derive_seed(c.data_seed, "corpus"), c.gen);
}

inline ParallelSplits experiment_splits(const ExperimentConfig& c,
                                        const std::vector<TaskInstance>& corpus,
                                        const CipherLanguage& lang, double q) {
  return make_parallel_splits(corpus, lang, q, q, c.sizes,
                              derive_seed(c.data_seed, "splits"));
}

// ----------------------------------------------------------- state io

// Adapter-stage checkpoint: every trainable tensor of the method state,
// under a header that records the method and fusion spec so the state can
// be rebuilt before loading.
template <typename T>
void save_method_state(const std::string& path, MethodState<T>& st,
                       const nlohmann::json& extra_meta) {
  static_assert(std::is_same_v<T, float>,
                "checkpoints are fp32; train at float to save");
  nlohmann::json meta = extra_meta;
  meta["task"] = to_string(st.kind);
  meta["train_config"] = train_config_to_json(st.config);
  save_checkpoint(path, "adapters", meta, st.named_parameters());
}

template <typename T>
MethodState<T> load_method_state(const std::string& path,
                                 const TransformerEncoder<T>& encoder,
                                 const TaskHead<T>& head_init,
                                 const TransformerEncoder<T>* mt_encoder =
                                     nullptr) {
  CheckpointData data = load_checkpoint(path);
  if (data.kind != "adapters")
    throw CheckpointHeaderError("'" + path + "' holds a '" + data.kind +
                                "' checkpoint, expected 'adapters'");
  TaskKind kind;
  TrainConfig tc;
  try {
    kind = task_kind_from_string(data.meta.at("task").get<std::string>());
    tc = train_config_from_json(data.meta.at("train_config"));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointHeaderError("'" + path + "': malformed adapter meta (" +
                                std::string(e.what()) + ")");
  }
  MethodState<T> st = init_method_state(encoder, head_init, kind, tc,
                                        mt_encoder);
  for (auto& [name, t] : st.named_parameters()) load_param(data, name, t);
  return st;
}

// ------------------------------------------------------------ base cache

struct BaseBundle {
  Model<float> model;
  double english_test_metric = 0;
  nlohmann::json train_report;
  bool from_cache = false;
};

inline std::string base_cache_key(const ExperimentConfig& c, int seed) {
  nlohmann::json j;
  j["model"] = model_config_to_json(c.model);
  j["task"] = c.task;
  j["data"] = experiment_config_to_json(c)["data"];
  j["base"] = experiment_config_to_json(c)["base"];
  j["batch_size"] = c.batch_size;
  j["seed"] = seed;
  return detail::hex64(detail::fnv1a64(j.dump()), 12);
}

inline std::string base_cache_path(const ExperimentConfig& c, int seed) {
  return (std::filesystem::path(c.output_dir) / "base-cache" /
          ("base-" + base_cache_key(c, seed) + ".ckpt"))
      .string();
}

inline BaseBundle get_or_train_base(const ExperimentConfig& c, int seed,
                                    const std::vector<TaskInstance>& en_train,
                                    const std::vector<TaskInstance>& en_val,
                                    const std::vector<TaskInstance>& en_test) {
  namespace fs = std::filesystem;
  fs::path file(base_cache_path(c, seed));
  fs::create_directories(file.parent_path());

  BaseBundle out;
  if (fs::exists(file)) {
    CheckpointData data = load_checkpoint(file.string());
    Model<float> model = load_model(file.string());
    out.model = std::move(model);
    out.english_test_metric =
        data.meta.at("provenance").at("english_test_metric").get<double>();
    out.train_report = data.meta.at("provenance").at("train_report");
    out.from_cache = true;
    return out;
  }

  TrainConfig tc = base_train_config(c, seed);
  auto trained = train_base_english<float>(c.model, c.kind(), en_train, en_val,
                                           en_test, tc);
  out.model = std::move(trained.model);
  out.english_test_metric = trained.english_test_metric;
  out.train_report = train_report_to_json(trained.report);
  nlohmann::json provenance;
  provenance["english_test_metric"] = out.english_test_metric;
  provenance["train_report"] = out.train_report;
  provenance["base_key"] = base_cache_key(c, seed);
  save_model(file.string(), out.model, provenance);
  return out;
}

// ------------------------------------------------------- MT standin cache

struct MtBundle {
  ModelConfig config{};
  TransformerEncoder<float> encoder;
  double holdout_accuracy = 0;

  MtBundle() : encoder(ModelConfig{}, 0) {}
};

inline std::string mt_cache_key(const ExperimentConfig& c,
                                const LanguageSpec& lang) {
  nlohmann::json j;
  j["language"] = {{"name", lang.name}, {"swap_rate", lang.swap_rate}};
  j["model"] = model_config_to_json(c.model);
  j["data"] = experiment_config_to_json(c)["data"];
  j["task"] = c.task;
  return detail::hex64(detail::fnv1a64(j.dump()), 12);
}

inline MtBundle get_or_train_mt(const ExperimentConfig& c,
                                const LanguageSpec& lang_spec,
                                const CipherLanguage& lang,
                                const std::vector<TaskInstance>& en_train) {
  namespace fs = std::filesystem;
  fs::path dir = fs::path(c.output_dir) / "mt-cache";
  fs::create_directories(dir);
  fs::path file = dir / ("mt-" + mt_cache_key(c, lang_spec) + ".ckpt");

  MtBundle out;
  if (fs::exists(file)) {
    CheckpointData data = load_checkpoint(file.string());
    if (data.kind != "mt_encoder")
      throw CheckpointHeaderError("'" + file.string() + "' holds a '" +
                                  data.kind + "' checkpoint");
    out.config = model_config_from_json(data.meta.at("config"));
    out.encoder = TransformerEncoder<float>(out.config, 0);
    for (auto& [name, t] : out.encoder.named_parameters())
      load_param(data, name, t);
    out.encoder.set_trainable(false);
    out.holdout_accuracy = data.meta.at("holdout_accuracy").get<double>();
    return out;
  }

  auto trained = pretrain_mt_standin<float>(
      lang, c.model, en_train, derive_seed(c.data_seed, "mt-standin"));
  out.config = trained.encoder.config();
  out.encoder = std::move(trained.encoder);
  out.holdout_accuracy = trained.holdout_accuracy;
  nlohmann::json meta;
  meta["config"] = model_config_to_json(out.config);
  meta["holdout_accuracy"] = out.holdout_accuracy;
  meta["language"] = lang_spec.name;
  save_checkpoint(file.string(), "mt_encoder", meta,
                  out.encoder.named_parameters());
  return out;
}

// ----------------------------------------------------------------- cells

struct CellResult {
  std::string method;
  std::string language;      // cipher name
  std::string language_dir;  // directory component (carries q when swept)
  double mt_quality = 0;
  int seed = 0;
  std::string status = "ok";  // or "failed"
  std::string error;
  std::string dir;  // absolute-ish path to the cell directory
  std::vector<std::string> artifacts;
  std::map<std::string, double> metrics;
};

struct ExperimentResult {
  std::string root;
  std::string hash;
  std::vector<CellResult> cells;
  std::map<int, double> base_english_metric;  // by seed

  bool all_ok() const {
    for (const auto& c : cells)
      if (c.status != "ok") return false;
    return true;
  }
};

inline std::string language_dir_name(const std::string& lang, double q,
                                     bool multi_q) {
  return multi_q ? lang + "-q" + detail::fmt_g(q) : lang;
}

namespace detail {

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& text) {
  std::ofstream out(path);
  if (!out)
    throw FlareError("cannot open " + path.string() + " for writing");
  out << text;
}

inline double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch())
      .count();
}

inline std::vector<TaskInstance> target_side(
    const std::vector<ParallelPair>& pairs) {
  std::vector<TaskInstance> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.target);
  return out;
}

inline std::vector<TaskInstance> source_side(
    const std::vector<ParallelPair>& pairs) {
  std::vector<TaskInstance> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.source);
  return out;
}

}  // namespace detail

inline MethodFlopOptions experiment_flop_options(const ExperimentConfig& c,
                                                 const ModelConfig* mt_cfg) {
  MethodFlopOptions o;
  o.target_len = c.gen.seq_len;
  o.source_len = c.gen.seq_len;
  o.rank = c.fusion.rank;
  o.fusion = c.fusion.fn;
  if (mt_cfg) o.mt_config = *mt_cfg;
  o.sep_tokens = 1;
  return o;
}

// Runs one (method, language, q, seed) cell and writes its artifacts.
// Infrastructure failures propagate; the caller turns them into a failed
// manifest entry and moves on.
inline CellResult run_cell(const ExperimentConfig& cfg, const std::string& method,
                           const LanguageSpec& lang_spec, double q, int seed,
                           const ParallelSplits& splits, BaseBundle& base,
                           const MtBundle* mt, bool multi_q,
                           const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  TaskKind kind = cfg.kind();
  const std::string metric_name =
      kind == TaskKind::classification ? "accuracy" : "exact_match";

  CellResult cell;
  cell.method = method;
  cell.language = lang_spec.name;
  cell.language_dir = language_dir_name(lang_spec.name, q, multi_q);
  cell.mt_quality = q;
  cell.seed = seed;

  fs::path dir = root / method / cell.language_dir / std::to_string(seed);
  fs::create_directories(dir);
  cell.dir = dir.string();

  nlohmann::json metrics_json;
  metrics_json["schema_version"] = 1;
  metrics_json["task"] = cfg.task;
  metrics_json["method"] = method;
  metrics_json["language"] = lang_spec.name;
  metrics_json["language_dir"] = cell.language_dir;
  metrics_json["mt_quality"] = q;
  metrics_json["seed"] = seed;

  nlohmann::json profile;
  std::vector<PredictionRecord> records;
  long long flops_per_step = 0;
  long long trainable = 0;
  double t0 = detail::now_seconds();
  MemoryStats::reset_peak();

  if (!method_trains(method)) {
    EvalResult ev;
    if (method == "zero_shot")
      ev = evaluate_model(base.model, detail::target_side(splits.test),
                          cfg.batch_size, "zero_shot");
    else
      ev = evaluate_model(base.model, detail::source_side(splits.test),
                          cfg.batch_size, "translate_test");
    cell.metrics[metric_name] = ev.metric;
    records = std::move(ev.records);
    profile["steps"] = 0;
  } else {
    TrainConfig tc = stage2_train_config(cfg, method, seed);
    std::vector<ParallelPair> train_pairs = splits.train;
    if (cfg.low_resource > 0)
      train_pairs = low_resource_subsample(
          splits.train, cfg.low_resource,
          derive_seed(cfg.data_seed, "low-resource"));
    const TransformerEncoder<float>* mt_enc =
        tc.method == Method::flare_mt ? &mt->encoder : nullptr;

    auto outcome = train_method(base.model.encoder, base.model.head, kind,
                                train_pairs, splits.val, tc, mt_enc);
    double t_train = detail::now_seconds();

    bool source_free = method == "flare_train_only";
    auto ev = evaluate_method(base.model.encoder, outcome.state, splits.test,
                              cfg.batch_size, source_free, "target");
    cell.metrics[metric_name] = ev.metric;
    records = std::move(ev.records);

    bool ablatable = (tc.method == Method::flare ||
                      tc.method == Method::flare_mt) &&
                     !source_free &&
                     (tc.fusion.fn == FusionFunction::add ||
                      tc.fusion.fn == FusionFunction::add_relu);
    if (ablatable) {
      auto abl = evaluate_method(base.model.encoder, outcome.state,
                                 splits.test, cfg.batch_size, true,
                                 "target_zero_source");
      cell.metrics["ablated_" + metric_name] = abl.metric;
      cell.metrics["drop"] = ev.metric - abl.metric;
      for (auto& r : abl.records) records.push_back(std::move(r));
    }

    for (auto& [name, t] : outcome.state.named_parameters())
      trainable += t.numel();
    flops_per_step = per_step_flops(
        method_forward_flops(tc.method, cfg.model, kind,
                             experiment_flop_options(
                                 cfg, mt ? &mt->config : nullptr)),
        cfg.batch_size);

    metrics_json["train"] = train_report_to_json(outcome.report);
    profile["steps"] = outcome.report.steps;
    profile["train_seconds"] = t_train - t0;
    if (outcome.report.steps > 0)
      profile["ms_per_step"] =
          1000.0 * (t_train - t0) / static_cast<double>(outcome.report.steps);

    nlohmann::json extra;
    extra["method"] = method;
    extra["language"] = lang_spec.name;
    extra["mt_quality"] = q;
    extra["config_hash"] = config_hash(cfg);
    save_method_state((dir / kAdaptersFile).string(), outcome.state, extra);
    cell.artifacts.push_back(kAdaptersFile);

    FlopCounts fwd = method_forward_flops(
        tc.method, cfg.model, kind,
        experiment_flop_options(cfg, mt ? &mt->config : nullptr));
    nlohmann::json fj;
    for (const auto& [k, v] : fwd.macs) fj[k] = v;
    fj["total"] = fwd.total();
    profile["forward_macs"] = fj;
  }

  double t_end = detail::now_seconds();
  profile["wall_seconds"] = t_end - t0;
  profile["peak_live_bytes"] = MemoryStats::peak_bytes().load();
  profile["flops_per_step"] = flops_per_step;

  metrics_json["metrics"] = cell.metrics;
  metrics_json["flops_per_step"] = flops_per_step;
  metrics_json["trainable_params"] = trainable;

  detail::write_text_file(dir / kMetricsFile, metrics_json.dump(2) + "\n");
  cell.artifacts.push_back(kMetricsFile);
  save_predictions_jsonl((dir / kPredictionsFile).string(), records);
  cell.artifacts.push_back(kPredictionsFile);
  detail::write_text_file(dir / kProfileFile, profile.dump(2) + "\n");
  cell.artifacts.push_back(kProfileFile);
  std::sort(cell.artifacts.begin(), cell.artifacts.end());
  return cell;
}

// ------------------------------------------------------------- manifest

inline nlohmann::json manifest_json(const ExperimentConfig& cfg,
                                    const std::string& hash,
                                    const ExperimentResult& result) {
  nlohmann::json m;
  m["schema_version"] = kExperimentSchemaVersion;
  m["config_hash"] = hash;
  m["task"] = cfg.task;
  nlohmann::json bases = nlohmann::json::array();
  for (const auto& [seed, metric] : result.base_english_metric)
    bases.push_back({{"seed", seed}, {"english_test_metric", metric}});
  m["bases"] = bases;
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : result.cells) {
    nlohmann::json j;
    j["method"] = c.method;
    j["language"] = c.language;
    j["language_dir"] = c.language_dir;
    j["mt_quality"] = c.mt_quality;
    j["seed"] = c.seed;
    j["status"] = c.status;
    if (!c.error.empty()) j["error"] = c.error;
    j["artifacts"] = c.artifacts;
    cells.push_back(std::move(j));
  }
  m["cells"] = cells;
  return m;
}

// --------------------------------------------------------------- reports

// Rebuilds the raw row table and aggregate summaries from what is on
// disk. Only the manifest and per-cell files are consulted, so the same
// tables can be produced long after the run (and by tests, as an oracle).
inline std::vector<ReportRow> collect_rows(const std::string& run_root) {
  namespace fs = std::filesystem;
  std::vector<ReportRow> rows;
  fs::path root(run_root);
  fs::path mpath = root / kManifestFile;
  if (!fs::exists(mpath)) return rows;
  std::ifstream min(mpath);
  nlohmann::json manifest = nlohmann::json::parse(min);

  for (const auto& b : manifest.value("bases", nlohmann::json::array())) {
    ReportRow r;
    r.method = "base_english";
    r.language = "en";
    r.seed = b.at("seed").get<int>();
    r.metric = manifest.at("task").get<std::string>() == "span"
                   ? "exact_match"
                   : "accuracy";
    r.value = b.at("english_test_metric").get<double>();
    rows.push_back(std::move(r));
  }

  for (const auto& c : manifest.value("cells", nlohmann::json::array())) {
    if (c.at("status").get<std::string>() != "ok") continue;
    fs::path dir = root / c.at("method").get<std::string>() /
                   c.at("language_dir").get<std::string>() /
                   std::to_string(c.at("seed").get<int>());
    std::ifstream jin(dir / kMetricsFile);
    if (!jin) continue;
    nlohmann::json metrics = nlohmann::json::parse(jin);
    double wall = 0;
    std::ifstream pin(dir / kProfileFile);
    if (pin) {
      nlohmann::json profile = nlohmann::json::parse(pin, nullptr, false);
      if (!profile.is_discarded()) wall = profile.value("wall_seconds", 0.0);
    }
    for (const auto& [name, value] : metrics.at("metrics").items()) {
      ReportRow r;
      r.method = metrics.at("method").get<std::string>();
      r.language = metrics.at("language_dir").get<std::string>();
      r.seed = metrics.at("seed").get<int>();
      r.metric = name;
      r.value = value.get<double>();
      r.flops_per_step = metrics.value("flops_per_step", 0LL);
      r.wall_seconds = wall;
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

// Quality curve: one line per (method, language, metric, q), means over
// seeds. Emitted only when the run swept more than one q.
inline void write_quality_curve_csv(const std::string& run_root,
                                    const std::string& path) {
  namespace fs = std::filesystem;
  std::ifstream min(fs::path(run_root) / kManifestFile);
  if (!min) return;
  nlohmann::json manifest = nlohmann::json::parse(min);
  // (method, language, metric, q) -> values over seeds
  std::map<std::tuple<std::string, std::string, std::string, double>,
           std::vector<double>>
      groups;
  for (const auto& c : manifest.value("cells", nlohmann::json::array())) {
    if (c.at("status").get<std::string>() != "ok") continue;
    fs::path dir = fs::path(run_root) / c.at("method").get<std::string>() /
                   c.at("language_dir").get<std::string>() /
                   std::to_string(c.at("seed").get<int>());
    std::ifstream jin(dir / kMetricsFile);
    if (!jin) continue;
    nlohmann::json metrics = nlohmann::json::parse(jin);
    for (const auto& [name, value] : metrics.at("metrics").items())
      groups[{metrics.at("method").get<std::string>(),
              metrics.at("language").get<std::string>(), name,
              metrics.at("mt_quality").get<double>()}]
          .push_back(value.get<double>());
  }
  std::ofstream out(path);
  if (!out) throw FlareError("cannot open " + path + " for writing");
  out << "method,language,metric,mt_quality,num_seeds,mean,std\n";
  for (const auto& [key, vals] : groups) {
    double sum = 0;
    for (double v : vals) sum += v;
    double mean = sum / vals.size();
    out << detail::csv_field(std::get<0>(key)) << ','
        << detail::csv_field(std::get<1>(key)) << ','
        << detail::csv_field(std::get<2>(key)) << ','
        << detail::fmt_g(std::get<3>(key)) << ',' << vals.size() << ','
        << detail::fmt_g(mean) << ',';
    if (vals.size() >= 2) {
      double ss = 0;
      for (double v : vals) ss += (v - mean) * (v - mean);
      out << detail::fmt_g(std::sqrt(ss / (vals.size() - 1)));
    }
    out << '\n';
  }
}

// Emits rows.csv, summary.csv, and summary.json at the run root. Reads
// only files, never in-memory state. An empty or absent manifest still
// produces valid header-only tables.
inline void emit_report(const std::string& run_root) {
  namespace fs = std::filesystem;
  fs::create_directories(run_root);
  std::vector<ReportRow> rows = collect_rows(run_root);
  write_rows_csv((fs::path(run_root) / "rows.csv").string(), rows);
  auto aggregates = aggregate_rows(rows);
  write_summary_csv((fs::path(run_root) / "summary.csv").string(), aggregates);

  nlohmann::json summary;
  summary["schema_version"] = 1;
  summary["rows"] = summary_to_json(aggregates);
  nlohmann::json missing = nlohmann::json::array();
  fs::path mpath = fs::path(run_root) / kManifestFile;
  std::set<double> qs;
  if (fs::exists(mpath)) {
    std::ifstream min(mpath);
    nlohmann::json manifest = nlohmann::json::parse(min);
    for (const auto& c : manifest.value("cells", nlohmann::json::array())) {
      qs.insert(c.at("mt_quality").get<double>());
      if (c.at("status").get<std::string>() != "ok")
        missing.push_back({{"method", c.at("method")},
                           {"language_dir", c.at("language_dir")},
                           {"seed", c.at("seed")},
                           {"error", c.value("error", "")}});
    }
  }
  summary["missing_cells"] = missing;
  detail::write_text_file(fs::path(run_root) / "summary.json",
                          summary.dump(2) + "\n");
  if (qs.size() > 1)
    write_quality_curve_csv(run_root,
                            (fs::path(run_root) / "quality_curve.csv").string());
}

// ---------------------------------------------------------- experiment

inline void validate_experiment(const ExperimentConfig& cfg) {
  // Re-validate programmatically built configs through the JSON path so
  // CLI-built and file-built configs obey identical rules.
  experiment_config_from_json(experiment_config_to_json(cfg));
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  validate_experiment(cfg);
  TaskKind kind = cfg.kind();
  (void)kind;

  ExperimentResult result;
  result.hash = config_hash(cfg);
  fs::path root = fs::path(cfg.output_dir) / result.hash;
  result.root = root.string();
  fs::create_directories(root);
  detail::write_text_file(root / kConfigFile,
                          experiment_config_to_json(cfg).dump(2) + "\n");

  auto corpus = experiment_corpus(cfg);

  // English splits are language-independent; build them from the first
  // language at the first quality.
  CipherLanguage first_lang = experiment_language(cfg, cfg.languages.front());
  ParallelSplits first_splits =
      experiment_splits(cfg, corpus, first_lang, cfg.mt_quality.front());

  std::map<int, BaseBundle> bases;
  for (int s : cfg.seeds) {
    bases.emplace(s, get_or_train_base(cfg, s, first_splits.en_train,
                                       first_splits.en_val,
                                       first_splits.en_test));
    result.base_english_metric[s] = bases.at(s).english_test_metric;
  }

  bool wants_mt = false;
  for (const auto& m : cfg.methods)
    if (m == "flare_mt") wants_mt = true;

  auto flush_manifest = [&] {
    detail::write_text_file(root / kManifestFile,
                            manifest_json(cfg, result.hash, result).dump(2) +
                                "\n");
  };
  flush_manifest();

  bool multi_q = cfg.mt_quality.size() > 1;
  for (const auto& lang_spec : cfg.languages) {
    CipherLanguage lang = experiment_language(cfg, lang_spec);
    MtBundle mt;
    if (wants_mt)
      mt = get_or_train_mt(cfg, lang_spec, lang, first_splits.en_train);
    for (double q : cfg.mt_quality) {
      ParallelSplits splits = experiment_splits(cfg, corpus, lang, q);
      for (const auto& method : cfg.methods) {
        for (int seed : cfg.seeds) {
          CellResult cell;
          try {
            cell = run_cell(cfg, method, lang_spec, q, seed, splits,
                            bases.at(seed), wants_mt ? &mt : nullptr, multi_q,
                            root);
          } catch (const std::exception& e) {
            cell.method = method;
            cell.language = lang_spec.name;
            cell.language_dir = language_dir_name(lang_spec.name, q, multi_q);
            cell.mt_quality = q;
            cell.seed = seed;
            cell.status = "failed";
            cell.error = e.what();
          }
          result.cells.push_back(std::move(cell));
          flush_manifest();
        }
      }
    }
  }
  emit_report(result.root);
  return result;
}

// ------------------------------------------------------------------ sweeps

inline const std::set<std::string>& known_sweeps() {
  static const std::set<std::string> s = {"fusion_fn", "rank", "mt_quality",
                                          "mix_layer", "low_resource"};
  return s;
}

// One config per swept value. Cells of different values land in different
// run directories (their hashes differ) but share base and MT caches,
// since the swept axes only touch the adapter stage.
inline std::vector<std::pair<std::string, ExperimentConfig>> expand_sweep(
    const std::string& kind, const ExperimentConfig& base) {
  if (!known_sweeps().count(kind))
    throw ConfigError("unknown sweep kind '" + kind + "'");
  std::vector<std::pair<std::string, ExperimentConfig>> out;
  if (kind == "fusion_fn") {
    for (FusionFunction fn : {FusionFunction::add, FusionFunction::mul,
                              FusionFunction::add_relu,
                              FusionFunction::cross_attn}) {
      ExperimentConfig c = base;
      c.fusion.fn = fn;
      out.emplace_back(to_string(fn), c);
    }
  } else if (kind == "rank") {
    for (int r : {8, 64, 128}) {
      ExperimentConfig c = base;
      // Keep alpha/r fixed so the adapter update scale survives the sweep.
      c.fusion.alpha = base.fusion.alpha * r / base.fusion.rank;
      c.fusion.rank = r;
      out.emplace_back(std::to_string(r), c);
    }
  } else if (kind == "mt_quality") {
    for (double q : {1.0, 0.95, 0.9, 0.8}) {
      ExperimentConfig c = base;
      c.mt_quality = {q};
      out.emplace_back(detail::fmt_g(q), c);
    }
  } else if (kind == "mix_layer") {
    for (int l = 0; l < base.model.num_layers; ++l) {
      ExperimentConfig c = base;
      c.mix_layer = l;
      out.emplace_back(std::to_string(l), c);
    }
  } else {  // low_resource
    for (int k : {50, 100, 200}) {
      ExperimentConfig c = base;
      c.low_resource = k;
      c.epochs = 20;
      out.emplace_back(std::to_string(k), c);
    }
  }
  return out;
}

struct SweepResult {
  std::string kind;
  std::string table_path;
  std::vector<std::pair<std::string, ExperimentResult>> runs;

  bool all_ok() const {
    for (const auto& [v, r] : runs)
      if (!r.all_ok()) return false;
    return true;
  }
};

// Per-cell aggregate table over the swept axis. Loss ratio columns come
// from the per-cell train reports so convergence is auditable per value.
inline SweepResult run_sweep(const std::string& kind,
                             const ExperimentConfig& base) {
  namespace fs = std::filesystem;
  SweepResult sw;
  sw.kind = kind;
  auto cells = expand_sweep(kind, base);

  struct ValueRows {
    std::vector<AggregateRow> aggregates;
    std::map<std::pair<std::string, std::string>, std::vector<double>>
        loss_ratio;  // (method, language_dir) -> per-seed final/initial
  };
  std::vector<std::pair<std::string, ValueRows>> table;

  for (auto& [value, cfg] : cells) {
    ExperimentResult res = run_experiment(cfg);
    ValueRows vr;
    std::vector<ReportRow> rows = collect_rows(res.root);
    std::vector<ReportRow> method_rows;
    for (auto& r : rows)
      if (r.method != "base_english") method_rows.push_back(r);
    vr.aggregates = aggregate_rows(method_rows);
    for (const auto& cell : res.cells) {
      if (cell.status != "ok" || !method_trains(cell.method)) continue;
      std::ifstream jin(fs::path(cell.dir) / kMetricsFile);
      if (!jin) continue;
      nlohmann::json metrics = nlohmann::json::parse(jin);
      if (!metrics.contains("train")) continue;
      double init = metrics["train"].at("initial_train_loss").get<double>();
      double fin = metrics["train"].at("final_train_loss").get<double>();
      if (init > 0)
        vr.loss_ratio[{cell.method, cell.language_dir}].push_back(fin / init);
    }
    table.emplace_back(value, std::move(vr));
    sw.runs.emplace_back(value, std::move(res));
  }

  fs::path dir = fs::path(base.output_dir) / "sweeps" / kind;
  fs::create_directories(dir);
  fs::path path = dir / "table.csv";
  std::ofstream out(path);
  if (!out) throw FlareError("cannot open " + path.string() + " for writing");
  out << "sweep,value,method,language,metric,num_seeds,mean,std,"
         "loss_ratio_mean,loss_ratio_max\n";
  for (const auto& [value, vr] : table) {
    for (const auto& a : vr.aggregates) {
      out << kind << ',' << detail::csv_field(value) << ','
          << detail::csv_field(a.method) << ','
          << detail::csv_field(a.language) << ','
          << detail::csv_field(a.metric) << ',' << a.num_seeds << ','
          << detail::fmt_g(a.mean) << ',';
      if (a.stddev) out << detail::fmt_g(*a.stddev);
      out << ',';
      auto it = vr.loss_ratio.find({a.method, a.language});
      if (it != vr.loss_ratio.end() && !it->second.empty()) {
        double sum = 0, mx = it->second.front();
        for (double v : it->second) {
          sum += v;
          mx = std::max(mx, v);
        }
        out << detail::fmt_g(sum / it->second.size()) << ','
            << detail::fmt_g(mx);
      } else {
        out << ',';
      }
      out << '\n';
    }
  }
  out.close();
  sw.table_path = path.string();
  return sw;
}

}  // namespace flare
