#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "flare/format.hpp"
#include "flare/synth.hpp"
#include "flare/train.hpp"

namespace flare {

// Per-run artifacts and table emission. Everything written here is a pure
// function of the run's inputs, with one deliberate exception: wall-clock
// and memory figures go to a separate profile file so that the metric
// files stay byte-reproducible across reruns.

// ---------------------------------------------------------------- dumps

inline nlohmann::json prediction_to_json(const PredictionRecord& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["prediction"] = r.prediction;
  j["gold"] = r.gold;
  j["language"] = r.language;
  j["setting"] = r.setting;
  if (!r.counted) j["counted"] = false;
  return j;
}

inline PredictionRecord prediction_from_json(const nlohmann::json& j) {
  PredictionRecord r;
  r.id = j.at("id").get<int>();
  r.prediction = j.at("prediction").get<std::string>();
  r.gold = j.at("gold").get<std::string>();
  r.language = j.at("language").get<std::string>();
  r.setting = j.at("setting").get<std::string>();
  r.counted = j.value("counted", true);
  return r;
}

inline void save_predictions_jsonl(const std::string& path,
                                   const std::vector<PredictionRecord>& recs) {
  std::ofstream out(path);
  if (!out) throw FlareError("cannot open " + path + " for writing");
  write_jsonl_header(out, "prediction");
  for (const auto& r : recs) out << prediction_to_json(r).dump() << "\n";
}

inline std::vector<PredictionRecord> load_predictions_jsonl(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FlareError("cannot open " + path);
  read_jsonl_header(in, path, "prediction");
  std::vector<PredictionRecord> recs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    recs.push_back(prediction_from_json(nlohmann::json::parse(line)));
  }
  return recs;
}

// Deliberately naive scorer used to cross-check the harness: a prediction
// is correct iff its string equals the gold string, and the metric is
// percent correct over counted rows. Must agree with EvalResult exactly.
struct RescoreResult {
  int correct = 0;
  int counted = 0;
  double metric = 0;
};

inline RescoreResult rescore_predictions(
    const std::vector<PredictionRecord>& recs) {
  RescoreResult r;
  for (const auto& p : recs) {
    if (!p.counted) continue;
    ++r.counted;
    if (p.prediction == p.gold) ++r.correct;
  }
  r.metric = r.counted == 0
                 ? 0.0
                 : 100.0 * r.correct / static_cast<double>(r.counted);
  return r;
}

// ------------------------------------------------------- train reports

inline nlohmann::json train_report_to_json(const TrainReport& rep) {
  nlohmann::json j;
  j["epoch_train_loss"] = rep.epoch_train_loss;
  j["epoch_val_metric"] = rep.epoch_val_metric;
  j["initial_train_loss"] = rep.initial_train_loss;
  j["final_train_loss"] = rep.final_train_loss;
  j["best_epoch"] = rep.best_epoch;
  j["best_val_metric"] = rep.best_val_metric;
  j["steps"] = rep.steps;
  j["fused_batches"] = rep.fused_batches;
  j["total_batches"] = rep.total_batches;
  return j;
}

// ----------------------------------------------------------- raw rows

struct ReportRow {
  std::string method;
  std::string language;
  int seed = 0;
  std::string metric;  // "accuracy", "exact_match", "ablated_...", "drop"
  double value = 0;
  long long flops_per_step = 0;
  double wall_seconds = 0;
};

inline constexpr const char* kRowsCsvHeader =
    "method,language,seed,metric,value,flops_per_step,wall_seconds";

inline void sort_rows(std::vector<ReportRow>& rows) {
  std::sort(rows.begin(), rows.end(), [](const ReportRow& a,
                                         const ReportRow& b) {
    return std::tie(a.method, a.language, a.metric, a.seed) <
           std::tie(b.method, b.language, b.metric, b.seed);
  });
}

inline void write_rows_csv(const std::string& path,
                           std::vector<ReportRow> rows) {
  sort_rows(rows);
  std::ofstream out(path);
  if (!out) throw FlareError("cannot open " + path + " for writing");
  out << kRowsCsvHeader << '\n';
  for (const auto& r : rows)
    out << detail::csv_field(r.method) << ',' << detail::csv_field(r.language)
        << ',' << r.seed << ',' << detail::csv_field(r.metric) << ','
        << detail::fmt_g(r.value) << ',' << r.flops_per_step << ','
        << detail::fmt_g(r.wall_seconds) << '\n';
}

// --------------------------------------------------------- aggregation

// Mean and sample standard deviation over seeds for one
// (method, language, metric) cell. Aggregates live in their own files,
// never mixed into the raw row table.
struct AggregateRow {
  std::string method;
  std::string language;
  std::string metric;
  int num_seeds = 0;
  double mean = 0;
  std::optional<double> stddev;  // absent below two seeds
};

inline std::vector<AggregateRow> aggregate_rows(
    const std::vector<ReportRow>& rows) {
  std::map<std::tuple<std::string, std::string, std::string>,
           std::vector<double>>
      groups;
  for (const auto& r : rows)
    groups[{r.method, r.language, r.metric}].push_back(r.value);
  std::vector<AggregateRow> out;
  for (const auto& [key, vals] : groups) {
    AggregateRow a;
    a.method = std::get<0>(key);
    a.language = std::get<1>(key);
    a.metric = std::get<2>(key);
    a.num_seeds = static_cast<int>(vals.size());
    double sum = 0;
    for (double v : vals) sum += v;
    a.mean = sum / vals.size();
    if (vals.size() >= 2) {
      double ss = 0;
      for (double v : vals) ss += (v - a.mean) * (v - a.mean);
      a.stddev = std::sqrt(ss / (vals.size() - 1));
    }
    out.push_back(std::move(a));
  }
  return out;
}

inline constexpr const char* kSummaryCsvHeader =
    "method,language,metric,num_seeds,mean,std";

inline void write_summary_csv(const std::string& path,
                              const std::vector<AggregateRow>& rows) {
  std::ofstream out(path);
  if (!out) throw FlareError("cannot open " + path + " for writing");
  out << kSummaryCsvHeader << '\n';
  for (const auto& a : rows) {
    out << detail::csv_field(a.method) << ',' << detail::csv_field(a.language)
        << ',' << detail::csv_field(a.metric) << ',' << a.num_seeds << ','
        << detail::fmt_g(a.mean) << ',';
    if (a.stddev) out << detail::fmt_g(*a.stddev);
    out << '\n';
  }
}

inline nlohmann::json summary_to_json(const std::vector<AggregateRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& a : rows) {
    nlohmann::json j;
    j["method"] = a.method;
    j["language"] = a.language;
    j["metric"] = a.metric;
    j["num_seeds"] = a.num_seeds;
    j["mean"] = a.mean;
    if (a.stddev)
      j["std"] = *a.stddev;
    else
      j["std"] = nullptr;
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace flare
