#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "flare/tensor.hpp"

namespace flare {

namespace detail {

template <typename T>
using RowMat =
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
CMapMat<T> as_mat(const std::vector<T>& v, int rows, int cols) {
  return CMapMat<T>(v.data(), rows, cols);
}
template <typename T>
MapMat<T> as_mat(std::vector<T>& v, int rows, int cols) {
  return MapMat<T>(v.data(), rows, cols);
}

template <typename T>
void require_2d(const Tensor<T>& x, const char* op) {
  if (x.shape().size() != 2)
    throw DimensionError(std::string(op) + ": expected a 2-d tensor, got " +
                         shape_string(x.shape()));
}

// True when small.shape is a trailing suffix of big.shape or small is a
// single element. Broadcasting replicates `small` along the leading axes.
template <typename T>
bool suffix_broadcastable(const Tensor<T>& big, const Tensor<T>& small) {
  if (small.numel() == 1) return true;
  const auto& bs = big.shape();
  const auto& ss = small.shape();
  if (ss.size() > bs.size()) return false;
  for (size_t i = 0; i < ss.size(); ++i)
    if (ss[ss.size() - 1 - i] != bs[bs.size() - 1 - i]) return false;
  return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic with leading-axis broadcasting.

namespace detail {

enum class EwKind { add, sub, mul };

template <typename T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, EwKind kind,
                      const char* name) {
  const Tensor<T>* big = &a;
  const Tensor<T>* small = &b;
  bool b_is_small = true;
  if (a.shape() == b.shape()) {
    // fall through, same shape
  } else if (suffix_broadcastable(a, b)) {
    // defaults are right
  } else if (suffix_broadcastable(b, a)) {
    big = &b;
    small = &a;
    b_is_small = false;
  } else {
    throw DimensionError(std::string(name) + ": shapes " +
                         shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " do not broadcast");
  }
  int n = big->numel();
  int ns = small->numel();
  const auto& bv = big->data();
  const auto& sv = small->data();
  std::vector<T> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    T x = bv[i], y = sv[i % ns];
    if (!b_is_small) std::swap(x, y);  // preserve a - b orientation
    switch (kind) {
      case EwKind::add: out[i] = x + y; break;
      case EwKind::sub: out[i] = x - y; break;
      case EwKind::mul: out[i] = x * y; break;
    }
  }
  bool small_is_b = b_is_small;
  return make_op<T>(
      big->shape(), std::move(out), {a, b},
      [kind, small_is_b, n, ns](detail::TensorNode<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        auto& pbig = small_is_b ? pa : pb;
        auto& psmall = small_is_b ? pb : pa;
        bool want_big = pbig.requires_grad;
        bool want_small = psmall.requires_grad;
        if (want_big) pbig.ensure_grad();
        if (want_small) psmall.ensure_grad();
        for (int i = 0; i < n; ++i) {
          T g = self.grad[i];
          T bigv = pbig.value[i];
          T smallv = psmall.value[i % ns];
          T gbig = T(0), gsmall = T(0);
          switch (kind) {
            case EwKind::add:
              gbig = g;
              gsmall = g;
              break;
            case EwKind::sub:
              // out = a - b; "big" may be either side
              gbig = small_is_b ? g : -g;
              gsmall = small_is_b ? -g : g;
              break;
            case EwKind::mul:
              gbig = g * smallv;
              gsmall = g * bigv;
              break;
          }
          if (want_big) pbig.grad[i] += gbig;
          if (want_small) psmall.grad[i % ns] += gsmall;
        }
      });
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::elementwise(a, b, detail::EwKind::add, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::elementwise(a, b, detail::EwKind::sub, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::elementwise(a, b, detail::EwKind::mul, "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  std::vector<T> out(x.data());
  for (auto& v : out) v *= c;
  return make_op<T>(x.shape(), std::move(out), {x},
                    [c](detail::TensorNode<T>& self) {
                      auto& p = *self.parents[0];
                      p.ensure_grad();
                      for (size_t i = 0; i < self.grad.size(); ++i)
                        p.grad[i] += c * self.grad[i];
                    });
}

// ---------------------------------------------------------------------------
// matmul: [p x q] @ [q x s] -> [p x s]. Dense GEMM is delegated to Eigen;
// the gradients are dA = G B^T and dB = A^T G.

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  int p = a.shape()[0], q = a.shape()[1];
  int q2 = b.shape()[0], s = b.shape()[1];
  if (q != q2)
    throw DimensionError("matmul: inner dimensions disagree: " +
                         shape_string(a.shape()) + " @ " +
                         shape_string(b.shape()));
  std::vector<T> out(static_cast<size_t>(p) * s);
  detail::as_mat(out, p, s).noalias() =
      detail::as_mat(a.data(), p, q) * detail::as_mat(b.data(), q, s);
  return make_op<T>(
      {p, s}, std::move(out), {a, b},
      [p, q, s](detail::TensorNode<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        auto g = detail::as_mat(self.grad, p, s);
        if (pa.requires_grad) {
          pa.ensure_grad();
          detail::as_mat(pa.grad, p, q).noalias() +=
              g * detail::as_mat(pb.value, q, s).transpose();
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          detail::as_mat(pb.grad, q, s).noalias() +=
              detail::as_mat(pa.value, p, q).transpose() * g;
        }
      });
}

// ---------------------------------------------------------------------------
// relu, with subgradient 0 at 0.

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.data());
  for (auto& v : out)
    if (v < T(0)) v = T(0);
  return make_op<T>(x.shape(), std::move(out), {x},
                    [](detail::TensorNode<T>& self) {
                      auto& p = *self.parents[0];
                      p.ensure_grad();
                      for (size_t i = 0; i < self.grad.size(); ++i)
                        if (p.value[i] > T(0)) p.grad[i] += self.grad[i];
                    });
}

// ---------------------------------------------------------------------------
// softmax along an axis of a 1-d or 2-d tensor, with max subtraction.
// Gradient: dx = y * (g - sum(g * y)) along the softmax axis.

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const auto& sh = x.shape();
  int rank = static_cast<int>(sh.size());
  if (rank != 1 && rank != 2)
    throw DimensionError("softmax: expected 1-d or 2-d, got " +
                         shape_string(sh));
  if (axis < 0 || axis >= rank)
    throw IndexError("softmax: axis " + std::to_string(axis) +
                     " out of range for " + shape_string(sh));
  int rows = rank == 1 ? 1 : sh[0];
  int cols = rank == 1 ? sh[0] : sh[1];
  // Normalize over columns when axis is the last one, else over rows.
  bool over_cols = (rank == 1) || (axis == 1);
  int groups = over_cols ? rows : cols;
  int extent = over_cols ? cols : rows;
  auto idx = [over_cols, cols](int gr, int k) {
    return over_cols ? gr * cols + k : k * cols + gr;
  };
  const auto& v = x.data();
  std::vector<T> out(v.size());
  for (int gr = 0; gr < groups; ++gr) {
    T mx = v[idx(gr, 0)];
    for (int k = 1; k < extent; ++k) mx = std::max(mx, v[idx(gr, k)]);
    T z = T(0);
    for (int k = 0; k < extent; ++k) {
      T e = std::exp(v[idx(gr, k)] - mx);
      out[idx(gr, k)] = e;
      z += e;
    }
    for (int k = 0; k < extent; ++k) out[idx(gr, k)] /= z;
  }
  return make_op<T>(
      sh, std::move(out), {x},
      [groups, extent, idx](detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (int gr = 0; gr < groups; ++gr) {
          T dot = T(0);
          for (int k = 0; k < extent; ++k)
            dot += self.grad[idx(gr, k)] * self.value[idx(gr, k)];
          for (int k = 0; k < extent; ++k) {
            size_t i = idx(gr, k);
            p.grad[i] += self.value[i] * (self.grad[i] - dot);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// layer_norm over the last axis of [m x d], with learned gain and bias [d].
// eps sits inside the square root.

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps = T(1e-5)) {
  detail::require_2d(x, "layer_norm");
  int m = x.shape()[0], d = x.shape()[1];
  if (gain.shape() != std::vector<int>{d} || bias.shape() != std::vector<int>{d})
    throw DimensionError("layer_norm: gain " + shape_string(gain.shape()) +
                         " / bias " + shape_string(bias.shape()) +
                         " must be [" + std::to_string(d) + "] for input " +
                         shape_string(x.shape()));
  const auto& v = x.data();
  const auto& gv = gain.data();
  const auto& bv = bias.data();
  std::vector<T> out(v.size());
  auto xhat = std::make_shared<std::vector<T>>(v.size());
  auto inv_std = std::make_shared<std::vector<T>>(m);
  for (int i = 0; i < m; ++i) {
    T mu = T(0);
    for (int j = 0; j < d; ++j) mu += v[i * d + j];
    mu /= d;
    T var = T(0);
    for (int j = 0; j < d; ++j) {
      T c = v[i * d + j] - mu;
      var += c * c;
    }
    var /= d;
    T inv = T(1) / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    for (int j = 0; j < d; ++j) {
      T xh = (v[i * d + j] - mu) * inv;
      (*xhat)[i * d + j] = xh;
      out[i * d + j] = xh * gv[j] + bv[j];
    }
  }
  return make_op<T>(
      {m, d}, std::move(out), {x, gain, bias},
      [m, d, xhat, inv_std](detail::TensorNode<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        if (pg.requires_grad) {
          pg.ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < d; ++j)
              pg.grad[j] += self.grad[i * d + j] * (*xhat)[i * d + j];
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < d; ++j) pb.grad[j] += self.grad[i * d + j];
        }
        if (px.requires_grad) {
          px.ensure_grad();
          const auto& gv = pg.value;
          for (int i = 0; i < m; ++i) {
            T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
            for (int j = 0; j < d; ++j) {
              T dxh = self.grad[i * d + j] * gv[j];
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * (*xhat)[i * d + j];
            }
            mean_dxhat /= d;
            mean_dxhat_xhat /= d;
            for (int j = 0; j < d; ++j) {
              T dxh = self.grad[i * d + j] * gv[j];
              px.grad[i * d + j] += (*inv_std)[i] *
                  (dxh - mean_dxhat - (*xhat)[i * d + j] * mean_dxhat_xhat);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// embedding_lookup: rows of table [V x d] selected by token ids.
// Backward scatter-adds into the table rows.

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<int>& ids) {
  detail::require_2d(table, "embedding_lookup");
  int V = table.shape()[0], d = table.shape()[1];
  int m = static_cast<int>(ids.size());
  if (m == 0) throw ContractError("embedding_lookup: empty id list");
  std::vector<T> out(static_cast<size_t>(m) * d);
  const auto& tv = table.data();
  for (int i = 0; i < m; ++i) {
    int id = ids[i];
    if (id < 0 || id >= V)
      throw IndexError("embedding_lookup: token id " + std::to_string(id) +
                       " out of range for vocab " + std::to_string(V));
    std::copy(tv.begin() + static_cast<size_t>(id) * d,
              tv.begin() + static_cast<size_t>(id + 1) * d,
              out.begin() + static_cast<size_t>(i) * d);
  }
  auto ids_copy = std::make_shared<std::vector<int>>(ids);
  return make_op<T>({m, d}, std::move(out), {table},
                    [d, m, ids_copy](detail::TensorNode<T>& self) {
                      auto& p = *self.parents[0];
                      p.ensure_grad();
                      for (int i = 0; i < m; ++i) {
                        int id = (*ids_copy)[i];
                        for (int j = 0; j < d; ++j)
                          p.grad[static_cast<size_t>(id) * d + j] +=
                              self.grad[static_cast<size_t>(i) * d + j];
                      }
                    });
}

// ---------------------------------------------------------------------------
// Mean cross-entropy of logits [n x C] against integer labels, computed via
// logsumexp with max subtraction. Gradient: (softmax - onehot) / n.

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  detail::require_2d(logits, "cross_entropy");
  int n = logits.shape()[0], C = logits.shape()[1];
  if (static_cast<int>(labels.size()) != n)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + shape_string(logits.shape()));
  const auto& v = logits.data();
  auto probs = std::make_shared<std::vector<T>>(v.size());
  T total = T(0);
  for (int i = 0; i < n; ++i) {
    int y = labels[i];
    if (y < 0 || y >= C)
      throw IndexError("cross_entropy: label " + std::to_string(y) +
                       " out of range for " + std::to_string(C) + " classes");
    T mx = v[i * C];
    for (int c = 1; c < C; ++c) mx = std::max(mx, v[i * C + c]);
    T z = T(0);
    for (int c = 0; c < C; ++c) z += std::exp(v[i * C + c] - mx);
    T lse = mx + std::log(z);
    for (int c = 0; c < C; ++c)
      (*probs)[i * C + c] = std::exp(v[i * C + c] - lse);
    total += lse - v[i * C + y];
  }
  auto labels_copy = std::make_shared<std::vector<int>>(labels);
  return make_op<T>(
      {1}, {total / n}, {logits},
      [n, C, probs, labels_copy](detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        T g = self.grad[0] / n;
        for (int i = 0; i < n; ++i) {
          for (int c = 0; c < C; ++c) {
            T delta = (c == (*labels_copy)[i]) ? T(1) : T(0);
            p.grad[i * C + c] += g * ((*probs)[i * C + c] - delta);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Shape plumbing: transpose, reshape, concat, slice, row gathering, tiling.

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  detail::require_2d(x, "transpose");
  int p = x.shape()[0], q = x.shape()[1];
  std::vector<T> out(x.data().size());
  const auto& v = x.data();
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < q; ++j) out[j * p + i] = v[i * q + j];
  return make_op<T>({q, p}, std::move(out), {x},
                    [p, q](detail::TensorNode<T>& self) {
                      auto& par = *self.parents[0];
                      par.ensure_grad();
                      for (int i = 0; i < p; ++i)
                        for (int j = 0; j < q; ++j)
                          par.grad[i * q + j] += self.grad[j * p + i];
                    });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, std::vector<int> shape) {
  int n = detail::shape_numel(shape);
  if (n != x.numel())
    throw DimensionError("reshape: " + shape_string(x.shape()) + " to " +
                         shape_string(shape) + " changes element count");
  return make_op<T>(std::move(shape), std::vector<T>(x.data()), {x},
                    [](detail::TensorNode<T>& self) {
                      auto& p = *self.parents[0];
                      p.ensure_grad();
                      for (size_t i = 0; i < self.grad.size(); ++i)
                        p.grad[i] += self.grad[i];
                    });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  if (axis != 0 && axis != 1)
    throw IndexError("concat: axis must be 0 or 1, got " + std::to_string(axis));
  for (const auto& t : parts) {
    detail::require_2d(t, "concat");
    if (t.shape()[1 - axis] != parts[0].shape()[1 - axis])
      throw DimensionError("concat: shape mismatch " +
                           shape_string(parts[0].shape()) + " vs " +
                           shape_string(t.shape()) + " along axis " +
                           std::to_string(1 - axis));
  }
  int rows = axis == 0 ? 0 : parts[0].shape()[0];
  int cols = axis == 1 ? 0 : parts[0].shape()[1];
  for (const auto& t : parts) {
    if (axis == 0)
      rows += t.shape()[0];
    else
      cols += t.shape()[1];
  }
  std::vector<T> out(static_cast<size_t>(rows) * cols);
  int offset = 0;
  for (const auto& t : parts) {
    int tr = t.shape()[0], tc = t.shape()[1];
    const auto& v = t.data();
    if (axis == 0) {
      std::copy(v.begin(), v.end(),
                out.begin() + static_cast<size_t>(offset) * cols);
      offset += tr;
    } else {
      for (int i = 0; i < tr; ++i)
        std::copy(v.begin() + static_cast<size_t>(i) * tc,
                  v.begin() + static_cast<size_t>(i + 1) * tc,
                  out.begin() + static_cast<size_t>(i) * cols + offset);
      offset += tc;
    }
  }
  std::vector<int> sizes;
  for (const auto& t : parts) sizes.push_back(t.shape()[axis]);
  return make_op<T>(
      {rows, cols}, std::move(out), parts,
      [axis, rows, cols, sizes](detail::TensorNode<T>& self) {
        int offset = 0;
        for (size_t k = 0; k < self.parents.size(); ++k) {
          auto& p = *self.parents[k];
          int ext = sizes[k];
          if (p.requires_grad) {
            p.ensure_grad();
            if (axis == 0) {
              for (int i = 0; i < ext; ++i)
                for (int j = 0; j < cols; ++j)
                  p.grad[static_cast<size_t>(i) * cols + j] +=
                      self.grad[static_cast<size_t>(offset + i) * cols + j];
            } else {
              int pc = ext;
              for (int i = 0; i < rows; ++i)
                for (int j = 0; j < pc; ++j)
                  p.grad[static_cast<size_t>(i) * pc + j] +=
                      self.grad[static_cast<size_t>(i) * cols + offset + j];
            }
          }
          offset += ext;
        }
      });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int start, int len) {
  detail::require_2d(x, "slice");
  if (axis != 0 && axis != 1)
    throw IndexError("slice: axis must be 0 or 1, got " + std::to_string(axis));
  int rows = x.shape()[0], cols = x.shape()[1];
  int extent = axis == 0 ? rows : cols;
  if (len <= 0 || start < 0 || start + len > extent)
    throw IndexError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") out of bounds for axis " +
                     std::to_string(axis) + " of " + shape_string(x.shape()));
  int orows = axis == 0 ? len : rows;
  int ocols = axis == 0 ? cols : len;
  std::vector<T> out(static_cast<size_t>(orows) * ocols);
  const auto& v = x.data();
  for (int i = 0; i < orows; ++i) {
    int si = axis == 0 ? start + i : i;
    int sj = axis == 0 ? 0 : start;
    std::copy(v.begin() + static_cast<size_t>(si) * cols + sj,
              v.begin() + static_cast<size_t>(si) * cols + sj + ocols,
              out.begin() + static_cast<size_t>(i) * ocols);
  }
  return make_op<T>(
      {orows, ocols}, std::move(out), {x},
      [axis, start, cols, orows, ocols](detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (int i = 0; i < orows; ++i) {
          int si = axis == 0 ? start + i : i;
          int sj = axis == 0 ? 0 : start;
          for (int j = 0; j < ocols; ++j)
            p.grad[static_cast<size_t>(si) * cols + sj + j] +=
                self.grad[static_cast<size_t>(i) * ocols + j];
        }
      });
}

// out[k, :] = x[indices[k], :]; duplicate indices accumulate in backward.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<int>& indices) {
  detail::require_2d(x, "gather_rows");
  int rows = x.shape()[0], cols = x.shape()[1];
  int k = static_cast<int>(indices.size());
  if (k == 0) throw ContractError("gather_rows: empty index list");
  std::vector<T> out(static_cast<size_t>(k) * cols);
  const auto& v = x.data();
  for (int i = 0; i < k; ++i) {
    int r = indices[i];
    if (r < 0 || r >= rows)
      throw IndexError("gather_rows: row " + std::to_string(r) +
                       " out of range for " + shape_string(x.shape()));
    std::copy(v.begin() + static_cast<size_t>(r) * cols,
              v.begin() + static_cast<size_t>(r + 1) * cols,
              out.begin() + static_cast<size_t>(i) * cols);
  }
  auto idx = std::make_shared<std::vector<int>>(indices);
  return make_op<T>({k, cols}, std::move(out), {x},
                    [cols, k, idx](detail::TensorNode<T>& self) {
                      auto& p = *self.parents[0];
                      p.ensure_grad();
                      for (int i = 0; i < k; ++i) {
                        int r = (*idx)[i];
                        for (int j = 0; j < cols; ++j)
                          p.grad[static_cast<size_t>(r) * cols + j] +=
                              self.grad[static_cast<size_t>(i) * cols + j];
                      }
                    });
}

// Stack `times` copies of x along axis 0. Backward sums over the copies.
template <typename T>
Tensor<T> tile_rows(const Tensor<T>& x, int times) {
  detail::require_2d(x, "tile_rows");
  if (times <= 0) throw ContractError("tile_rows: times must be positive");
  int rows = x.shape()[0], cols = x.shape()[1];
  std::vector<T> out(static_cast<size_t>(times) * rows * cols);
  for (int t = 0; t < times; ++t)
    std::copy(x.data().begin(), x.data().end(),
              out.begin() + static_cast<size_t>(t) * rows * cols);
  return make_op<T>({times * rows, cols}, std::move(out), {x},
                    [times, rows, cols](detail::TensorNode<T>& self) {
                      auto& p = *self.parents[0];
                      p.ensure_grad();
                      size_t block = static_cast<size_t>(rows) * cols;
                      for (int t = 0; t < times; ++t)
                        for (size_t i = 0; i < block; ++i)
                          p.grad[i] += self.grad[t * block + i];
                    });
}

// ---------------------------------------------------------------------------
// Reductions to scalars.

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return make_op<T>({1}, {total}, {x}, [](detail::TensorNode<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (auto& g : p.grad) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  int n = x.numel();
  return make_op<T>({1}, {total / n}, {x}, [n](detail::TensorNode<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (auto& g : p.grad) g += self.grad[0] / n;
  });
}

}  // namespace flare
