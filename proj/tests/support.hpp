#pragma once

// Reference implementations used to check the library: plain loops, no
// shared code with the ops under test.

#include <cmath>
#include <random>
#include <vector>

namespace refimpl {

// [p x q] @ [q x s], row-major flat vectors, triple loop.
template <typename T>
std::vector<T> matmul_ref(const std::vector<T>& a, const std::vector<T>& b,
                          int p, int q, int s) {
  std::vector<T> out(static_cast<size_t>(p) * s, T(0));
  for (int i = 0; i < p; ++i)
    for (int k = 0; k < q; ++k)
      for (int j = 0; j < s; ++j)
        out[i * s + j] += a[i * q + k] * b[k * s + j];
  return out;
}

template <typename T>
std::vector<T> softmax_row_ref(const std::vector<T>& row) {
  T mx = row[0];
  for (T v : row) mx = std::max(mx, v);
  std::vector<T> out(row.size());
  T z = T(0);
  for (size_t i = 0; i < row.size(); ++i) {
    out[i] = std::exp(row[i] - mx);
    z += out[i];
  }
  for (auto& v : out) v /= z;
  return out;
}

template <typename T>
T logsumexp_ref(const std::vector<T>& row) {
  T mx = row[0];
  for (T v : row) mx = std::max(mx, v);
  T z = T(0);
  for (T v : row) z += std::exp(v - mx);
  return mx + std::log(z);
}

// Mean negative log-likelihood over rows.
template <typename T>
T cross_entropy_ref(const std::vector<T>& logits, const std::vector<int>& labels,
                    int n, int C) {
  T total = T(0);
  for (int i = 0; i < n; ++i) {
    std::vector<T> row(logits.begin() + i * C, logits.begin() + (i + 1) * C);
    total += logsumexp_ref(row) - row[labels[i]];
  }
  return total / n;
}

// Two-pass normalization of each row, then affine.
template <typename T>
std::vector<T> layer_norm_ref(const std::vector<T>& x, const std::vector<T>& gain,
                              const std::vector<T>& bias, int m, int d, T eps) {
  std::vector<T> out(x.size());
  for (int i = 0; i < m; ++i) {
    T mu = T(0);
    for (int j = 0; j < d; ++j) mu += x[i * d + j];
    mu /= d;
    T var = T(0);
    for (int j = 0; j < d; ++j) var += (x[i * d + j] - mu) * (x[i * d + j] - mu);
    var /= d;
    for (int j = 0; j < d; ++j)
      out[i * d + j] =
          gain[j] * (x[i * d + j] - mu) / std::sqrt(var + eps) + bias[j];
  }
  return out;
}

// Single-head attention by explicit loops: rows of q attend over rows of k/v.
// q: [mq x r], k/v: [mk x r], scores scaled by 1/sqrt(r).
template <typename T>
std::vector<T> attention_ref(const std::vector<T>& q, const std::vector<T>& k,
                             const std::vector<T>& v, int mq, int mk, int r) {
  std::vector<T> out(static_cast<size_t>(mq) * r, T(0));
  for (int i = 0; i < mq; ++i) {
    std::vector<T> scores(mk);
    for (int j = 0; j < mk; ++j) {
      T dot = T(0);
      for (int c = 0; c < r; ++c) dot += q[i * r + c] * k[j * r + c];
      scores[j] = dot / std::sqrt(static_cast<T>(r));
    }
    std::vector<T> w = softmax_row_ref(scores);
    for (int j = 0; j < mk; ++j)
      for (int c = 0; c < r; ++c) out[i * r + c] += w[j] * v[j * r + c];
  }
  return out;
}

inline std::vector<double> random_vec(std::mt19937_64& gen, size_t n, double lo,
                                      double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> out(n);
  for (auto& v : out) v = dist(gen);
  return out;
}

inline std::vector<float> random_vecf(std::mt19937_64& gen, size_t n, float lo,
                                      float hi) {
  std::uniform_real_distribution<float> dist(lo, hi);
  std::vector<float> out(n);
  for (auto& v : out) v = dist(gen);
  return out;
}

}  // namespace refimpl
