#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "flare/experiment.hpp"
#include "flare/probes.hpp"

using namespace flare;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

// Flags shared by the data-driven subcommands. Values only land in the
// config when the user actually passed the flag, so a config file and
// flag overrides compose.
struct CommonFlags {
  std::string config_path;
  std::string task;
  std::string out_dir;
  std::string language;
  double swap_rate = 0.1;
  std::string method;
  std::string fusion;
  int r = 8;
  double alpha = 4.0;
  double mt_quality = 0.9;
  int seed = 0;
  int source_offset = 0;
  int low_resource = 0;
  int mix_layer = 0;
  int epochs = 0;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "experiment config JSON");
  cmd->add_option("--task", f.task, "classification or span");
  cmd->add_option("--out-dir", f.out_dir, "output directory");
  cmd->add_option("--language", f.language, "cipher language name");
  cmd->add_option("--swap", f.swap_rate, "cipher adjacent-swap rate");
  cmd->add_option("--method", f.method, "training method");
  cmd->add_option("--fusion", f.fusion, "fusion function");
  cmd->add_option("--r", f.r, "adapter rank");
  cmd->add_option("--alpha", f.alpha, "adapter scaling numerator");
  cmd->add_option("--mt-quality", f.mt_quality, "translation quality q");
  cmd->add_option("--seed", f.seed, "run seed");
  cmd->add_option("--source-offset", f.source_offset,
                  "shift source rows before fusion");
  cmd->add_option("--low-resource", f.low_resource,
                  "subsample training pairs to k");
  cmd->add_option("--mix-layer", f.mix_layer, "mixup block index");
  cmd->add_option("--epochs", f.epochs, "adapter-stage epochs");
}

// Builds the effective config: file (if given), then explicit flags on
// top, funneled through the JSON validator so CLI-built configs obey the
// same rules as file-built ones.
ExperimentConfig build_config(const CLI::App* cmd, const CommonFlags& f) {
  nlohmann::json j;
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) throw ConfigError("cannot open config '" + f.config_path + "'");
    j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded())
      throw ConfigError("config '" + f.config_path + "' is not valid JSON");
  }
  auto given = [&](const std::string& name) {
    return cmd->count(name) > 0;
  };
  if (given("--task")) j["task"] = f.task;
  if (given("--out-dir")) j["output_dir"] = f.out_dir;
  if (given("--language") || given("--swap")) {
    nlohmann::json lang;
    lang["name"] = given("--language") ? f.language : "goblish";
    lang["swap_rate"] = f.swap_rate;
    j["languages"] = nlohmann::json::array({lang});
  }
  if (given("--method")) j["methods"] = std::vector<std::string>{f.method};
  if (given("--fusion")) j["fusion"] = f.fusion;
  if (given("--r")) j["r"] = f.r;
  if (given("--alpha")) j["alpha"] = f.alpha;
  if (given("--mt-quality")) j["mt_quality"] = std::vector<double>{f.mt_quality};
  if (given("--seed")) j["seeds"] = std::vector<int>{f.seed};
  if (given("--source-offset")) j["source_offset"] = f.source_offset;
  if (given("--low-resource")) j["low_resource"] = f.low_resource;
  if (given("--mix-layer")) j["mix_layer"] = f.mix_layer;
  if (given("--epochs")) j["train"]["epochs"] = f.epochs;
  return experiment_config_from_json(j);
}

const char* metric_label(const ExperimentConfig& cfg) {
  return cfg.kind() == TaskKind::classification ? "accuracy" : "exact_match";
}

int cmd_train_base(const CLI::App* cmd, const CommonFlags& f,
                   const std::string& out_path) {
  ExperimentConfig cfg = build_config(cmd, f);
  int seed = cfg.seeds.front();
  auto corpus = experiment_corpus(cfg);
  auto lang = experiment_language(cfg, cfg.languages.front());
  auto splits = experiment_splits(cfg, corpus, lang, cfg.mt_quality.front());
  BaseBundle base = get_or_train_base(cfg, seed, splits.en_train,
                                      splits.en_val, splits.en_test);
  std::string cache = base_cache_path(cfg, seed);
  if (!out_path.empty() && out_path != cache) {
    std::filesystem::create_directories(
        std::filesystem::path(out_path).parent_path().empty()
            ? "."
            : std::filesystem::path(out_path).parent_path());
    std::filesystem::copy_file(
        cache, out_path, std::filesystem::copy_options::overwrite_existing);
  }
  std::printf("english %s: %s\n", metric_label(cfg),
              detail::fmt_g(base.english_test_metric).c_str());
  std::printf("checkpoint: %s\n",
              out_path.empty() ? cache.c_str() : out_path.c_str());
  return kExitOk;
}

int cmd_train_xlt(const CLI::App* cmd, const CommonFlags& f) {
  ExperimentConfig cfg = build_config(cmd, f);
  ExperimentResult res = run_experiment(cfg);
  for (const auto& cell : res.cells) {
    if (cell.status != "ok") {
      std::fprintf(stderr, "cell %s/%s/%d failed: %s\n", cell.method.c_str(),
                   cell.language_dir.c_str(), cell.seed, cell.error.c_str());
      continue;
    }
    for (const auto& [name, value] : cell.metrics)
      std::printf("%s %s seed %d %s: %s\n", cell.method.c_str(),
                  cell.language_dir.c_str(), cell.seed, name.c_str(),
                  detail::fmt_g(value).c_str());
  }
  std::printf("run: %s\n", res.root.c_str());
  if (!res.all_ok()) {
    std::fprintf(stderr, "some cells failed; see %s/%s\n", res.root.c_str(),
                 kManifestFile);
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_eval(const CLI::App* cmd, const CommonFlags& f,
             const std::string& base_path, const std::string& adapters_path,
             const std::string& setting, const std::string& dump_path) {
  ExperimentConfig cfg = build_config(cmd, f);
  auto corpus = experiment_corpus(cfg);
  auto lang_spec = cfg.languages.front();
  auto lang = experiment_language(cfg, lang_spec);
  auto splits = experiment_splits(cfg, corpus, lang, cfg.mt_quality.front());

  Model<float> base_model = [&] {
    if (!base_path.empty()) return load_model(base_path);
    BaseBundle b = get_or_train_base(cfg, cfg.seeds.front(), splits.en_train,
                                     splits.en_val, splits.en_test);
    return std::move(b.model);
  }();

  EvalResult ev;
  if (setting == "zero_shot" || setting == "translate_test") {
    std::vector<TaskInstance> insts;
    for (const auto& p : splits.test)
      insts.push_back(setting == "zero_shot" ? p.target : p.source);
    ev = evaluate_model(base_model, insts, cfg.batch_size, setting);
  } else if (setting == "target") {
    if (adapters_path.empty())
      throw ConfigError("eval: setting 'target' needs --adapters");
    CheckpointData data = load_checkpoint(adapters_path);
    TrainConfig tc = train_config_from_json(data.meta.at("train_config"));
    MtBundle mt;
    const TransformerEncoder<float>* mt_enc = nullptr;
    if (tc.method == Method::flare_mt) {
      mt = get_or_train_mt(cfg, lang_spec, lang, splits.en_train);
      mt_enc = &mt.encoder;
    }
    MethodState<float> st = load_method_state<float>(
        adapters_path, base_model.encoder, base_model.head, mt_enc);
    ev = evaluate_method(base_model.encoder, st, splits.test, cfg.batch_size,
                         tc.train_only_fusion, "target");
  } else {
    throw ConfigError("eval: unknown setting '" + setting + "'");
  }
  std::printf("%s %s: %s (%d/%d)\n", setting.c_str(), metric_label(cfg),
              detail::fmt_g(ev.metric).c_str(), ev.correct, ev.counted);
  if (!dump_path.empty()) {
    save_predictions_jsonl(dump_path, ev.records);
    std::printf("predictions: %s\n", dump_path.c_str());
  }
  return kExitOk;
}

int cmd_probe(const CLI::App* cmd, const CommonFlags& f,
              const std::string& base_path, const std::string& adapters_path,
              const std::string& out_dir) {
  ExperimentConfig cfg = build_config(cmd, f);
  auto corpus = experiment_corpus(cfg);
  auto lang_spec = cfg.languages.front();
  auto lang = experiment_language(cfg, lang_spec);
  auto splits = experiment_splits(cfg, corpus, lang, cfg.mt_quality.front());

  Model<float> base_model = [&] {
    if (!base_path.empty()) return load_model(base_path);
    BaseBundle b = get_or_train_base(cfg, cfg.seeds.front(), splits.en_train,
                                     splits.en_val, splits.en_test);
    return std::move(b.model);
  }();

  CheckpointData data = load_checkpoint(adapters_path);
  TrainConfig tc = train_config_from_json(data.meta.at("train_config"));
  MtBundle mt;
  const TransformerEncoder<float>* mt_enc = nullptr;
  if (tc.method == Method::flare_mt) {
    mt = get_or_train_mt(cfg, lang_spec, lang, splits.en_train);
    mt_enc = &mt.encoder;
  }
  MethodState<float> st = load_method_state<float>(
      adapters_path, base_model.encoder, base_model.head, mt_enc);

  ProbeTable table =
      probe_activations(base_model.encoder, st, splits.test, cfg.batch_size);
  std::filesystem::path dir =
      out_dir.empty() ? std::filesystem::path(adapters_path).parent_path()
                      : std::filesystem::path(out_dir);
  std::filesystem::create_directories(dir);
  std::string positions = (dir / "probe_positions.csv").string();
  std::string layers = (dir / "probe_layers.csv").string();
  write_probe_positions_csv(table, positions);
  write_probe_layers_csv(table, layers);
  std::printf("probe: %s\n", positions.c_str());
  std::printf("probe: %s\n", layers.c_str());
  for (int l = 0; l < table.num_layers; ++l)
    std::printf("layer %d source %s target %s\n", l,
                detail::fmt_g(table.source_layer_mean(l)).c_str(),
                detail::fmt_g(table.target_layer_mean(l)).c_str());
  return kExitOk;
}

int cmd_sweep(const CLI::App* cmd, const CommonFlags& f,
              const std::string& kind) {
  ExperimentConfig cfg = build_config(cmd, f);
  SweepResult sw = run_sweep(kind, cfg);
  std::printf("table: %s\n", sw.table_path.c_str());
  if (!sw.all_ok()) {
    std::fprintf(stderr, "some sweep cells failed; see the run manifests\n");
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_report(const std::string& dir) {
  emit_report(dir);
  std::printf("report: %s/rows.csv\n", dir.c_str());
  std::printf("report: %s/summary.csv\n", dir.c_str());
  std::printf("report: %s/summary.json\n", dir.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-lingual adapter-fusion laboratory"};
  app.require_subcommand(1);

  CommonFlags tb_flags, tx_flags, ev_flags, pr_flags, sw_flags;
  std::string tb_out;
  std::string ev_base, ev_adapters, ev_setting = "zero_shot", ev_dump;
  std::string pr_base, pr_adapters, pr_out;
  std::string sw_kind;
  std::string rp_dir;

  CLI::App* train_base = app.add_subcommand(
      "train-base", "fit the English task model and cache it");
  add_common_flags(train_base, tb_flags);
  train_base->add_option("--out", tb_out, "also copy the checkpoint here");

  CLI::App* train_xlt = app.add_subcommand(
      "train-xlt", "run target-language training cells");
  add_common_flags(train_xlt, tx_flags);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a model on the test split");
  add_common_flags(eval, ev_flags);
  eval->add_option("--base", ev_base, "base model checkpoint");
  eval->add_option("--adapters", ev_adapters, "adapter checkpoint");
  eval->add_option("--setting", ev_setting,
                   "zero_shot, translate_test, or target");
  eval->add_option("--dump", ev_dump, "write predictions JSONL here");

  CLI::App* probe = app.add_subcommand(
      "probe", "dump bottleneck activation statistics");
  add_common_flags(probe, pr_flags);
  probe->add_option("--base", pr_base, "base model checkpoint");
  probe->add_option("--adapters", pr_adapters, "adapter checkpoint")
      ->required();
  probe->add_option("--out", pr_out, "directory for the CSV files");

  CLI::App* sweep = app.add_subcommand("sweep", "expand and run a config sweep");
  add_common_flags(sweep, sw_flags);
  sweep->add_option("--kind", sw_kind,
                    "fusion_fn, rank, mt_quality, mix_layer, or low_resource")
      ->required();

  CLI::App* report = app.add_subcommand(
      "report", "rebuild tables from a finished run directory");
  report->add_option("--dir", rp_dir, "run directory (<out>/<hash>)")
      ->required();

  try {
    app.parse(argc, argv);
    if (app.got_subcommand(train_base))
      return cmd_train_base(train_base, tb_flags, tb_out);
    if (app.got_subcommand(train_xlt)) return cmd_train_xlt(train_xlt, tx_flags);
    if (app.got_subcommand(eval))
      return cmd_eval(eval, ev_flags, ev_base, ev_adapters, ev_setting,
                      ev_dump);
    if (app.got_subcommand(probe))
      return cmd_probe(probe, pr_flags, pr_base, pr_adapters, pr_out);
    if (app.got_subcommand(sweep)) return cmd_sweep(sweep, sw_flags, sw_kind);
    if (app.got_subcommand(report)) return cmd_report(rp_dir);
    return kExitConfig;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const FlareError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
}
