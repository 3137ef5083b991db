#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "flare/format.hpp"
#include "flare/train.hpp"

namespace flare {

// Mean absolute bottleneck activation per (layer, position), split by
// stream: what the adapters see from the source side versus the target
// side. Query and value attachments are pooled.
struct ProbeTable {
  int num_layers = 0;
  int seq_len = 0;
  std::vector<double> source_mean, target_mean;  // [layer * seq_len + pos]

  double source_layer_mean(int layer) const {
    return layer_mean(source_mean, layer);
  }
  double target_layer_mean(int layer) const {
    return layer_mean(target_mean, layer);
  }

 private:
  double layer_mean(const std::vector<double>& v, int layer) const {
    double s = 0;
    for (int p = 0; p < seq_len; ++p)
      s += v[static_cast<size_t>(layer) * seq_len + p];
    return s / seq_len;
  }
};

template <typename T>
ProbeTable probe_activations(const TransformerEncoder<T>& encoder,
                             MethodState<T>& st,
                             const std::vector<ParallelPair>& pairs,
                             int batch_size) {
  if (st.method != Method::flare && st.method != Method::flare_mt)
    throw ContractError(std::string("probe_activations: method ") +
                        to_string(st.method) + " has no fusion bottleneck");
  if (pairs.empty())
    throw ContractError("probe_activations: empty split");
  int m = static_cast<int>(pairs[0].target.tokens.size());
  int layers = encoder.config().num_layers;
  ProbeAccumulator q(layers, m), v(layers, m);
  st.adapters.probe_query = &q;
  st.adapters.probe_value = &v;
  int n = static_cast<int>(pairs.size());
  for (int at = 0; at < n; at += batch_size) {
    std::vector<int> idx;
    for (int e = at; e < std::min(n, at + batch_size); ++e) idx.push_back(e);
    method_forward(encoder, st, pairs, idx, false);
  }
  st.adapters.probe_query = nullptr;
  st.adapters.probe_value = nullptr;

  ProbeTable table;
  table.num_layers = layers;
  table.seq_len = m;
  size_t cells = static_cast<size_t>(layers) * m;
  table.source_mean.resize(cells);
  table.target_mean.resize(cells);
  for (size_t i = 0; i < cells; ++i) {
    long count = q.count[i] + v.count[i];
    table.source_mean[i] =
        count == 0 ? 0 : (q.source_sum[i] + v.source_sum[i]) / count;
    table.target_mean[i] =
        count == 0 ? 0 : (q.target_sum[i] + v.target_sum[i]) / count;
  }
  return table;
}

// One row per (layer, position, stream).
inline void write_probe_positions_csv(const ProbeTable& t,
                                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FlareError("cannot open " + path + " for writing");
  out << "layer,position,stream,mean_abs\n";
  for (int l = 0; l < t.num_layers; ++l)
    for (int p = 0; p < t.seq_len; ++p) {
      size_t i = static_cast<size_t>(l) * t.seq_len + p;
      out << l << ',' << p << ",source," << detail::fmt_g(t.source_mean[i])
          << '\n';
      out << l << ',' << p << ",target," << detail::fmt_g(t.target_mean[i])
          << '\n';
    }
}

// One row per (layer, stream), positions averaged.
inline void write_probe_layers_csv(const ProbeTable& t,
                                   const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FlareError("cannot open " + path + " for writing");
  out << "layer,stream,mean_abs\n";
  for (int l = 0; l < t.num_layers; ++l) {
    out << l << ",source," << detail::fmt_g(t.source_layer_mean(l)) << '\n';
    out << l << ",target," << detail::fmt_g(t.target_layer_mean(l)) << '\n';
  }
}

}  // namespace flare
