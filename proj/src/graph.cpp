#include "betoken/graph.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

namespace betoken::numcore {

namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

template <typename T>
CMapRM<T> cmap(const Tensor<T>& t) {
  return CMapRM<T>(t.data.data(), t.rows(), t.cols());
}

template <typename T>
MapRM<T> map(Tensor<T>& t) {
  return MapRM<T>(t.data.data(), t.rows(), t.cols());
}

inline float erf_t(float x) { return ::erff(x); }
inline double erf_t(double x) { return std::erf(x); }
inline float exp_t(float x) { return ::expf(x); }
inline double exp_t(double x) { return std::exp(x); }

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

template <typename T>
NodeId Graph<T>::push(Tensor<T> out, bool req, const char* op, std::function<void(Graph&)> back) {
  ensure_finite(out, op);
  Node n;
  n.owned = std::move(out);
  n.requires_grad = req;
  n.op = op;
  if (req) {
    n.grad = Tensor<T>(n.owned.shape);
    n.back = std::move(back);
  }
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

namespace {

// Vectorizable scan: x - x is zero only for finite x.
template <typename T>
bool all_finite_fast(const T* p, size_t n) {
  T acc = T(0);
  for (size_t i = 0; i < n; ++i) acc += p[i] - p[i];
  return acc == T(0);
}

}  // namespace

template <typename T>
void Graph<T>::ensure_finite(const Tensor<T>& t, const char* op) const {
  if (all_finite_fast(t.data.data(), t.size())) return;
  for (size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(static_cast<double>(t.data[i]))) {
      throw NumericError(std::string(op) + ": non-finite value at flat index " + std::to_string(i));
    }
  }
  throw NumericError(std::string(op) + ": non-finite value");
}

template <typename T>
void Graph<T>::check_2d(NodeId id, const char* op) const {
  if (value_of(id).rank() != 2) {
    throw InvalidArgumentError(std::string(op) + ": expected rank-2 tensor, got " +
                               value_of(id).shape_str());
  }
}

template <typename T>
const Tensor<T>& Graph<T>::grad(NodeId id) const {
  const Node& n = nodes_[check_id(id)];
  if (!n.requires_grad) throw InvalidArgumentError("graph: node has no gradient");
  return n.grad;
}

// --- leaves -----------------------------------------------------------------

template <typename T>
NodeId Graph<T>::constant(const Tensor<T>* external) {
  if (!external) throw InvalidArgumentError("constant: null tensor");
  ensure_finite(*external, "constant");
  Node n;
  n.borrowed = external;
  n.op = "constant";
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

template <typename T>
NodeId Graph<T>::value(Tensor<T> owned) {
  return push(std::move(owned), false, "value", nullptr);
}

template <typename T>
NodeId Graph<T>::param(const Tensor<T>* external) {
  if (!external) throw InvalidArgumentError("param: null tensor");
  ensure_finite(*external, "param");
  Node n;
  n.borrowed = external;
  n.requires_grad = true;
  n.grad = Tensor<T>(external->shape);
  n.op = "param";
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

// --- primitives ---------------------------------------------------------------

template <typename T>
NodeId Graph<T>::matmul(NodeId a, NodeId b) {
  check_2d(a, "matmul");
  check_2d(b, "matmul");
  const Tensor<T>& av = value_of(a);
  const Tensor<T>& bv = value_of(b);
  if (av.cols() != bv.rows()) {
    throw InvalidArgumentError("matmul: inner extents differ, " + av.shape_str() + " x " +
                               bv.shape_str());
  }
  Tensor<T> out({av.rows(), bv.cols()});
  map(out).noalias() = cmap(av) * cmap(bv);
  const bool req = requires_grad(a) || requires_grad(b);
  return push(std::move(out), req, "matmul", [a, b](Graph& g) {
    const Tensor<T>& go = g.nodes_[g.cur_].grad;
    const Tensor<T>& av2 = g.value_of(a);
    const Tensor<T>& bv2 = g.value_of(b);
    if (g.requires_grad(a)) map(g.grad_of(a)).noalias() += cmap(go) * cmap(bv2).transpose();
    if (g.requires_grad(b)) map(g.grad_of(b)).noalias() += cmap(av2).transpose() * cmap(go);
  });
}

template <typename T>
NodeId Graph<T>::matmul_bias(NodeId a, NodeId b, NodeId bias) {
  check_2d(a, "matmul_bias");
  check_2d(b, "matmul_bias");
  const Tensor<T>& av = value_of(a);
  const Tensor<T>& bv = value_of(b);
  const Tensor<T>& cv = value_of(bias);
  if (av.cols() != bv.rows()) {
    throw InvalidArgumentError("matmul_bias: inner extents differ, " + av.shape_str() + " x " +
                               bv.shape_str());
  }
  if (cv.rank() != 1 || cv.shape[0] != bv.cols()) {
    throw InvalidArgumentError("matmul_bias: bias shape " + cv.shape_str() + " does not match " +
                               bv.shape_str());
  }
  const int rows = av.rows(), cols = bv.cols();
  Tensor<T> out({rows, cols});
  map(out).noalias() = cmap(av) * cmap(bv);
  for (int r = 0; r < rows; ++r) {
    T* o = out.row(r);
    for (int c = 0; c < cols; ++c) o[c] += cv.data[c];
  }
  const bool req = requires_grad(a) || requires_grad(b) || requires_grad(bias);
  return push(std::move(out), req, "matmul_bias", [a, b, bias, rows, cols](Graph& g) {
    const Tensor<T>& go = g.nodes_[g.cur_].grad;
    const Tensor<T>& av2 = g.value_of(a);
    const Tensor<T>& bv2 = g.value_of(b);
    if (g.requires_grad(a)) map(g.grad_of(a)).noalias() += cmap(go) * cmap(bv2).transpose();
    if (g.requires_grad(b)) map(g.grad_of(b)).noalias() += cmap(av2).transpose() * cmap(go);
    if (g.requires_grad(bias)) {
      Tensor<T>& gb = g.grad_of(bias);
      for (int r = 0; r < rows; ++r) {
        const T* o = go.row(r);
        for (int c = 0; c < cols; ++c) gb.data[c] += o[c];
      }
    }
  });
}

template <typename T>
NodeId Graph<T>::add(NodeId a, NodeId b) {
  const Tensor<T>& av = value_of(a);
  const Tensor<T>& bv = value_of(b);
  if (!av.same_shape(bv)) {
    throw InvalidArgumentError("add: shape mismatch, " + av.shape_str() + " vs " + bv.shape_str());
  }
  Tensor<T> out = av;
  for (size_t i = 0; i < out.size(); ++i) out.data[i] += bv.data[i];
  const bool req = requires_grad(a) || requires_grad(b);
  return push(std::move(out), req, "add", [a, b](Graph& g) {
    const Tensor<T>& go = g.nodes_[g.cur_].grad;
    if (g.requires_grad(a)) {
      Tensor<T>& ga = g.grad_of(a);
      for (size_t i = 0; i < go.size(); ++i) ga.data[i] += go.data[i];
    }
    if (g.requires_grad(b)) {
      Tensor<T>& gb = g.grad_of(b);
      for (size_t i = 0; i < go.size(); ++i) gb.data[i] += go.data[i];
    }
  });
}

template <typename T>
NodeId Graph<T>::mul(NodeId a, NodeId b) {
  const Tensor<T>& av = value_of(a);
  const Tensor<T>& bv = value_of(b);
  if (!av.same_shape(bv)) {
    throw InvalidArgumentError("mul: shape mismatch, " + av.shape_str() + " vs " + bv.shape_str());
  }
  Tensor<T> out = av;
  for (size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i];
  const bool req = requires_grad(a) || requires_grad(b);
  return push(std::move(out), req, "mul", [a, b](Graph& g) {
    const Tensor<T>& go = g.nodes_[g.cur_].grad;
    const Tensor<T>& av2 = g.value_of(a);
    const Tensor<T>& bv2 = g.value_of(b);
    if (g.requires_grad(a)) {
      Tensor<T>& ga = g.grad_of(a);
      for (size_t i = 0; i < go.size(); ++i) ga.data[i] += go.data[i] * bv2.data[i];
    }
    if (g.requires_grad(b)) {
      Tensor<T>& gb = g.grad_of(b);
      for (size_t i = 0; i < go.size(); ++i) gb.data[i] += go.data[i] * av2.data[i];
    }
  });
}

template <typename T>
NodeId Graph<T>::add_bias(NodeId x, NodeId bias) {
  check_2d(x, "add_bias");
  const Tensor<T>& xv = value_of(x);
  const Tensor<T>& bv = value_of(bias);
  if (bv.rank() != 1 || bv.shape[0] != xv.cols()) {
    throw InvalidArgumentError("add_bias: bias shape " + bv.shape_str() + " does not match " +
                               xv.shape_str());
  }
  Tensor<T> out = xv;
  const int rows = xv.rows(), cols = xv.cols();
  for (int r = 0; r < rows; ++r) {
    T* o = out.row(r);
    for (int c = 0; c < cols; ++c) o[c] += bv.data[c];
  }
  const bool req = requires_grad(x) || requires_grad(bias);
  return push(std::move(out), req, "add_bias", [x, bias, rows, cols](Graph& g) {
    const Tensor<T>& go = g.nodes_[g.cur_].grad;
    if (g.requires_grad(x)) {
      Tensor<T>& gx = g.grad_of(x);
      for (size_t i = 0; i < go.size(); ++i) gx.data[i] += go.data[i];
    }
    if (g.requires_grad(bias)) {
      Tensor<T>& gb = g.grad_of(bias);
      for (int r = 0; r < rows; ++r) {
        const T* o = go.row(r);
        for (int c = 0; c < cols; ++c) gb.data[c] += o[c];
      }
    }
  });
}

template <typename T>
NodeId Graph<T>::scale(NodeId x, T factor) {
  if (!std::isfinite(static_cast<double>(factor))) throw InvalidArgumentError("scale: non-finite factor");
  Tensor<T> out = value_of(x);
  for (auto& v : out.data) v *= factor;
  return push(std::move(out), requires_grad(x), "scale", [x, factor](Graph& g) {
    const Tensor<T>& go = g.nodes_[g.cur_].grad;
    if (g.requires_grad(x)) {
      Tensor<T>& gx = g.grad_of(x);
      for (size_t i = 0; i < go.size(); ++i) gx.data[i] += factor * go.data[i];
    }
  });
}

template <typename T>
NodeId Graph<T>::gelu(NodeId x) {
  const Tensor<T>& xv = value_of(x);
  Tensor<T> out = xv;
  for (auto& v : out.data) {
    v = static_cast<T>(0.5) * v * (static_cast<T>(1) + erf_t(static_cast<T>(v * static_cast<T>(kInvSqrt2))));
  }
  return push(std::move(out), requires_grad(x), "gelu", [x](Graph& g) {
    const Tensor<T>& go = g.nodes_[g.cur_].grad;
    if (!g.requires_grad(x)) return;
    const Tensor<T>& xv2 = g.value_of(x);
    Tensor<T>& gx = g.grad_of(x);
    for (size_t i = 0; i < go.size(); ++i) {
      const T v = xv2.data[i];
      const T cdf = static_cast<T>(0.5) * (static_cast<T>(1) + erf_t(static_cast<T>(v * static_cast<T>(kInvSqrt2))));
      const T pdf = static_cast<T>(kInvSqrt2Pi) * exp_t(static_cast<T>(-0.5) * v * v);
      gx.data[i] += go.data[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
NodeId Graph<T>::layer_norm(NodeId x, NodeId gain, NodeId bias) {
  check_2d(x, "layer_norm");
  const Tensor<T>& xv = value_of(x);
  const Tensor<T>& gv = value_of(gain);
  const Tensor<T>& bv = value_of(bias);
  const int rows = xv.rows(), cols = xv.cols();
  if (gv.rank() != 1 || gv.shape[0] != cols || bv.rank() != 1 || bv.shape[0] != cols) {
    throw InvalidArgumentError("layer_norm: gain/bias must be rank-1 of width " + std::to_string(cols));
  }
  Tensor<T> out({rows, cols});
  auto stats = std::make_shared<std::vector<T>>(static_cast<size_t>(rows) * 2);  // mean, rstd
  for (int r = 0; r < rows; ++r) {
    const T* in = xv.row(r);
    T* o = out.row(r);
    double m = 0;
    for (int c = 0; c < cols; ++c) m += in[c];
    m /= cols;
    double var = 0;
    for (int c = 0; c < cols; ++c) {
      const double d = in[c] - m;
      var += d * d;
    }
    var /= cols;
    const double rstd = 1.0 / std::sqrt(var + static_cast<double>(kLayerNormEps));
    (*stats)[2 * r] = static_cast<T>(m);
    (*stats)[2 * r + 1] = static_cast<T>(rstd);
    for (int c = 0; c < cols; ++c) {
      o[c] = static_cast<T>((in[c] - m) * rstd) * gv.data[c] + bv.data[c];
    }
  }
  const bool req = requires_grad(x) || requires_grad(gain) || requires_grad(bias);
  return push(std::move(out), req, "layer_norm", [x, gain, bias, rows, cols, stats](Graph& g) {
    const Tensor<T>& go = g.nodes_[g.cur_].grad;
    const Tensor<T>& xv2 = g.value_of(x);
    const Tensor<T>& gv2 = g.value_of(gain);
    for (int r = 0; r < rows; ++r) {
      const T m = (*stats)[2 * r];
      const T rstd = (*stats)[2 * r + 1];
      const T* in = xv2.row(r);
      const T* o = go.row(r);
      if (g.requires_grad(gain)) {
        Tensor<T>& gg = g.grad_of(gain);
        for (int c = 0; c < cols; ++c) gg.data[c] += o[c] * (in[c] - m) * rstd;
      }
      if (g.requires_grad(bias)) {
        Tensor<T>& gb = g.grad_of(bias);
        for (int c = 0; c < cols; ++c) gb.data[c] += o[c];
      }
      if (g.requires_grad(x)) {
        Tensor<T>& gx = g.grad_of(x);
        double mean_dxhat = 0, mean_dxhat_xhat = 0;
        for (int c = 0; c < cols; ++c) {
          const double xhat = (in[c] - m) * rstd;
          const double dxhat = static_cast<double>(o[c]) * gv2.data[c];
          mean_dxhat += dxhat;
          mean_dxhat_xhat += dxhat * xhat;
        }
        mean_dxhat /= cols;
        mean_dxhat_xhat /= cols;
        T* gxr = gx.row(r);
        for (int c = 0; c < cols; ++c) {
          const double xhat = (in[c] - m) * rstd;
          const double dxhat = static_cast<double>(o[c]) * gv2.data[c];
          gxr[c] += static_cast<T>(rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat));
        }
      }
    }
  });
}

template <typename T>
NodeId Graph<T>::causal_attention(NodeId q, NodeId k, NodeId v, int n_heads) {
  check_2d(q, "causal_attention");
  check_2d(k, "causal_attention");
  check_2d(v, "causal_attention");
  const Tensor<T>& qv = value_of(q);
  const Tensor<T>& kv = value_of(k);
  const Tensor<T>& vv = value_of(v);
  if (!qv.same_shape(kv) || !qv.same_shape(vv)) {
    throw InvalidArgumentError("causal_attention: q/k/v shapes differ");
  }
  const int len = qv.rows(), d = qv.cols();
  if (n_heads <= 0 || d % n_heads != 0) {
    throw InvalidArgumentError("causal_attention: d_model not divisible by n_heads");
  }
  const int dh = d / n_heads;
  const T inv_sqrt_dh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  Tensor<T> out({len, d});
  // Lower-triangular attention weights per head, kept for backward.
  auto attn = std::make_shared<std::vector<Tensor<T>>>();
  attn->reserve(n_heads);
  for (int h = 0; h < n_heads; ++h) {
    Tensor<T> a({len, len});
    auto qh = cmap(qv).block(0, h * dh, len, dh);
    auto kh = cmap(kv).block(0, h * dh, len, dh);
    auto vh = cmap(vv).block(0, h * dh, len, dh);
    MapRM<T> am = map(a);
    am.noalias() = qh * kh.transpose();
    am *= inv_sqrt_dh;
    // Masked softmax over j <= i; the strict upper triangle stays zero.
    for (int i = 0; i < len; ++i) {
      T* row = a.row(i);
      T mx = row[0];
      for (int j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
      double denom = 0;
      for (int j = 0; j <= i; ++j) {
        const T e = exp_t(static_cast<T>(row[j] - mx));
        row[j] = e;
        denom += e;
      }
      const T inv = static_cast<T>(1.0 / denom);
      for (int j = 0; j <= i; ++j) row[j] *= inv;
      for (int j = i + 1; j < len; ++j) row[j] = T(0);
    }
    map(out).block(0, h * dh, len, dh).noalias() = cmap(a) * vh;
    attn->push_back(std::move(a));
  }

  const bool req = requires_grad(q) || requires_grad(k) || requires_grad(v);
  return push(std::move(out), req, "causal_attention",
              [q, k, v, n_heads, dh, len, inv_sqrt_dh, attn](Graph& g) {
                const Tensor<T>& go = g.nodes_[g.cur_].grad;
                const Tensor<T>& qv2 = g.value_of(q);
                const Tensor<T>& kv2 = g.value_of(k);
                const Tensor<T>& vv2 = g.value_of(v);
                for (int h = 0; h < n_heads; ++h) {
                  const Tensor<T>& a = (*attn)[h];
                  auto qh = cmap(qv2).block(0, h * dh, len, dh);
                  auto kh = cmap(kv2).block(0, h * dh, len, dh);
                  auto vh = cmap(vv2).block(0, h * dh, len, dh);
                  auto goh = cmap(go).block(0, h * dh, len, dh);

                  MatRM<T> da(len, len);
                  da.noalias() = goh * vh.transpose();
                  // Softmax backward per row; rows beyond i are zero in `a`,
                  // which zeroes the masked positions automatically.
                  MatRM<T> ds(len, len);
                  for (int i = 0; i < len; ++i) {
                    double dot = 0;
                    for (int j = 0; j <= i; ++j) dot += static_cast<double>(da(i, j)) * a.at(i, j);
                    for (int j = 0; j <= i; ++j) {
                      ds(i, j) = a.at(i, j) * static_cast<T>(da(i, j) - dot);
                    }
                    for (int j = i + 1; j < len; ++j) ds(i, j) = T(0);
                  }
                  ds *= inv_sqrt_dh;
                  if (g.requires_grad(v)) {
                    map(g.grad_of(v)).block(0, h * dh, len, dh).noalias() +=
                        cmap(a).transpose() * goh;
                  }
                  if (g.requires_grad(q)) {
                    map(g.grad_of(q)).block(0, h * dh, len, dh).noalias() += ds * kh;
                  }
                  if (g.requires_grad(k)) {
                    map(g.grad_of(k)).block(0, h * dh, len, dh).noalias() += ds.transpose() * qh;
                  }
                }
              });
}

template <typename T>
NodeId Graph<T>::row_softmax(NodeId x, T temperature) {
  if (!(temperature > T(0))) throw InvalidArgumentError("row_softmax: temperature must be positive");
  const Tensor<T>& xv = value_of(x);
  if (xv.rank() < 1) throw InvalidArgumentError("row_softmax: rank must be >= 1");
  const int cols = xv.shape.back();
  const int rows = static_cast<int>(xv.size()) / cols;
  Tensor<T> out = xv;
  for (int r = 0; r < rows; ++r) {
    T* row = out.data.data() + static_cast<size_t>(r) * cols;
    T mx = row[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    double denom = 0;
    for (int c = 0; c < cols; ++c) {
      const T e = exp_t(static_cast<T>((row[c] - mx) / temperature));
      row[c] = e;
      denom += e;
    }
    const T inv = static_cast<T>(1.0 / denom);
    for (int c = 0; c < cols; ++c) row[c] *= inv;
  }
  return push(std::move(out), requires_grad(x), "row_softmax",
              [x, rows, cols, temperature](Graph& g) {
                if (!g.requires_grad(x)) return;
                const Tensor<T>& go = g.nodes_[g.cur_].grad;
                const Tensor<T>& y = g.nodes_[g.cur_].owned;
                Tensor<T>& gx = g.grad_of(x);
                for (int r = 0; r < rows; ++r) {
                  const size_t off = static_cast<size_t>(r) * cols;
                  const T* yr = y.data.data() + off;
                  const T* gor = go.data.data() + off;
                  double dot = 0;
                  for (int c = 0; c < cols; ++c) dot += static_cast<double>(gor[c]) * yr[c];
                  T* gxr = gx.data.data() + off;
                  for (int c = 0; c < cols; ++c) {
                    gxr[c] += static_cast<T>(yr[c] * (gor[c] - dot) / temperature);
                  }
                }
              });
}

template <typename T>
NodeId Graph<T>::kl_divergence(NodeId p, NodeId q) {
  const Tensor<T>& pv = value_of(p);
  const Tensor<T>& qv = value_of(q);
  if (!pv.same_shape(qv)) {
    throw InvalidArgumentError("kl_divergence: shape mismatch, " + pv.shape_str() + " vs " +
                               qv.shape_str());
  }
  const int cols = pv.shape.back();
  const int rows = static_cast<int>(pv.size()) / cols;
  // Both sides must be (near-)normalized probability rows.
  for (int r = 0; r < rows; ++r) {
    double sp = 0, sq = 0;
    for (int c = 0; c < cols; ++c) {
      sp += pv.data[static_cast<size_t>(r) * cols + c];
      sq += qv.data[static_cast<size_t>(r) * cols + c];
    }
    if (std::abs(sp - 1.0) > 1e-5 || std::abs(sq - 1.0) > 1e-5) {
      throw InvalidArgumentError("kl_divergence: row " + std::to_string(r) +
                                 " is not a probability distribution");
    }
  }
  Tensor<T> out({rows});
  for (int r = 0; r < rows; ++r) {
    double acc = 0;
    for (int c = 0; c < cols; ++c) {
      const size_t i = static_cast<size_t>(r) * cols + c;
      const double pi = pv.data[i];
      if (pi <= 0) continue;
      const double qi = std::max(static_cast<double>(qv.data[i]), static_cast<double>(kProbFloor));
      acc += pi * (std::log(pi) - std::log(qi));
    }
    out.data[r] = static_cast<T>(acc);
  }
  const bool req = requires_grad(p) || requires_grad(q);
  return push(std::move(out), req, "kl_divergence", [p, q, rows, cols](Graph& g) {
    const Tensor<T>& go = g.nodes_[g.cur_].grad;
    const Tensor<T>& pv2 = g.value_of(p);
    const Tensor<T>& qv2 = g.value_of(q);
    for (int r = 0; r < rows; ++r) {
      const T gr = go.data[r];
      if (gr == T(0)) continue;
      for (int c = 0; c < cols; ++c) {
        const size_t i = static_cast<size_t>(r) * cols + c;
        const double pi = pv2.data[i];
        const double qi = qv2.data[i];
        if (g.requires_grad(p) && pi > 0) {
          const double qc = std::max(qi, static_cast<double>(kProbFloor));
          g.grad_of(p).data[i] += gr * static_cast<T>(std::log(pi) - std::log(qc) + 1.0);
        }
        if (g.requires_grad(q) && pi > 0 && qi > static_cast<double>(kProbFloor)) {
          g.grad_of(q).data[i] += gr * static_cast<T>(-pi / qi);
        }
      }
    }
  });
}

template <typename T>
NodeId Graph<T>::cross_entropy(NodeId logits, std::vector<int> targets) {
  check_2d(logits, "cross_entropy");
  const Tensor<T>& lv = value_of(logits);
  const int rows = lv.rows(), cols = lv.cols();
  if (static_cast<int>(targets.size()) != rows) {
    throw InvalidArgumentError("cross_entropy: expected " + std::to_string(rows) + " targets, got " +
                               std::to_string(targets.size()));
  }
  for (int t : targets) {
    if (t < 0 || t >= cols) {
      throw InvalidArgumentError("cross_entropy: target id " + std::to_string(t) +
                                 " out of range [0," + std::to_string(cols) + ")");
    }
  }
  double acc = 0;
  for (int r = 0; r < rows; ++r) {
    const T* row = lv.row(r);
    T mx = row[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
    double denom = 0;
    for (int c = 0; c < cols; ++c) denom += exp_t(static_cast<T>(row[c] - mx));
    acc += static_cast<double>(mx) + std::log(denom) - static_cast<double>(row[targets[r]]);
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / rows));
  return push(std::move(out), requires_grad(logits), "cross_entropy",
              [logits, targets = std::move(targets), rows, cols](Graph& g) {
                if (!g.requires_grad(logits)) return;
                const T go = g.nodes_[g.cur_].grad.data[0];
                const Tensor<T>& lv2 = g.value_of(logits);
                Tensor<T>& gl = g.grad_of(logits);
                const T inv_rows = static_cast<T>(1.0 / rows);
                for (int r = 0; r < rows; ++r) {
                  const T* row = lv2.row(r);
                  T mx = row[0];
                  for (int c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
                  double denom = 0;
                  for (int c = 0; c < cols; ++c) denom += exp_t(static_cast<T>(row[c] - mx));
                  const T inv_denom = static_cast<T>(1.0 / denom);
                  T* gr = gl.row(r);
                  for (int c = 0; c < cols; ++c) {
                    const T soft = exp_t(static_cast<T>(row[c] - mx)) * inv_denom;
                    const T delta = (c == targets[r]) ? T(1) : T(0);
                    gr[c] += go * (soft - delta) * inv_rows;
                  }
                }
              });
}

template <typename T>
NodeId Graph<T>::row_slice(NodeId x, int first, int count) {
  check_2d(x, "row_slice");
  const Tensor<T>& xv = value_of(x);
  if (first < 0 || count <= 0 || first + count > xv.rows()) {
    throw InvalidArgumentError("row_slice: range [" + std::to_string(first) + "," +
                               std::to_string(first + count) + ") outside " + xv.shape_str());
  }
  const int cols = xv.cols();
  Tensor<T> out({count, cols});
  std::copy(xv.row(first), xv.row(first) + static_cast<size_t>(count) * cols, out.data.begin());
  return push(std::move(out), requires_grad(x), "row_slice", [x, first, count, cols](Graph& g) {
    if (!g.requires_grad(x)) return;
    const Tensor<T>& go = g.nodes_[g.cur_].grad;
    Tensor<T>& gx = g.grad_of(x);
    for (int r = 0; r < count; ++r) {
      T* dst = gx.row(first + r);
      const T* src = go.row(r);
      for (int c = 0; c < cols; ++c) dst[c] += src[c];
    }
  });
}

template <typename T>
NodeId Graph<T>::gather_rows(const std::vector<std::pair<NodeId, int>>& rows) {
  if (rows.empty()) throw InvalidArgumentError("gather_rows: empty row list");
  int cols = -1;
  bool req = false;
  for (const auto& [src, r] : rows) {
    check_2d(src, "gather_rows");
    const Tensor<T>& sv = value_of(src);
    if (r < 0 || r >= sv.rows()) {
      throw InvalidArgumentError("gather_rows: row " + std::to_string(r) + " outside " +
                                 sv.shape_str());
    }
    if (cols < 0) cols = sv.cols();
    if (sv.cols() != cols) throw InvalidArgumentError("gather_rows: sources differ in width");
    req = req || requires_grad(src);
  }
  const int n = static_cast<int>(rows.size());
  Tensor<T> out({n, cols});
  for (int i = 0; i < n; ++i) {
    const Tensor<T>& sv = value_of(rows[i].first);
    std::copy(sv.row(rows[i].second), sv.row(rows[i].second) + cols, out.row(i));
  }
  return push(std::move(out), req, "gather_rows", [rows, n, cols](Graph& g) {
    const Tensor<T>& go = g.nodes_[g.cur_].grad;
    for (int i = 0; i < n; ++i) {
      const auto& [src, r] = rows[i];
      if (!g.requires_grad(src)) continue;
      T* dst = g.grad_of(src).row(r);
      const T* s = go.row(i);
      for (int c = 0; c < cols; ++c) dst[c] += s[c];
    }
  });
}

template <typename T>
NodeId Graph<T>::mean(NodeId x) {
  const Tensor<T>& xv = value_of(x);
  double acc = 0;
  for (const T v : xv.data) acc += v;
  const size_t n = xv.size();
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / n));
  return push(std::move(out), requires_grad(x), "mean", [x, n](Graph& g) {
    if (!g.requires_grad(x)) return;
    const T go = g.nodes_[g.cur_].grad.data[0] / static_cast<T>(n);
    for (auto& v : g.grad_of(x).data) v += go;
  });
}

template <typename T>
NodeId Graph<T>::sum(NodeId x) {
  const Tensor<T>& xv = value_of(x);
  double acc = 0;
  for (const T v : xv.data) acc += v;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
  return push(std::move(out), requires_grad(x), "sum", [x](Graph& g) {
    if (!g.requires_grad(x)) return;
    const T go = g.nodes_[g.cur_].grad.data[0];
    for (auto& v : g.grad_of(x).data) v += go;
  });
}

// --- execution ----------------------------------------------------------------

template <typename T>
void Graph<T>::backward(NodeId loss) {
  check_id(loss);
  if (backward_done_) throw InvariantViolationError("backward: already run on this graph");
  backward_done_ = true;
  const Tensor<T>& lv = value_of(loss);
  if (lv.size() != 1) {
    throw InvalidArgumentError("backward: loss must be scalar, got " + lv.shape_str());
  }
  if (!lv.all_finite()) throw NumericError("backward: loss is not finite");
  if (!nodes_[loss].requires_grad) {
    throw InvalidArgumentError("backward: loss does not depend on any trainable input");
  }
  nodes_[loss].grad.data[0] = T(1);
  for (NodeId i = loss; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad) continue;
    if (!all_finite_fast(n.grad.data.data(), n.grad.size())) {
      throw NumericError(std::string("backward: non-finite gradient at node ") +
                         std::to_string(i) + " (" + n.op + ")");
    }
    if (n.back) {
      cur_ = i;
      n.back(*this);
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace betoken::numcore
