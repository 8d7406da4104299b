// Primitive set: matmul (plus transposed variants), elementwise arithmetic,
// relu/gelu/sigmoid/clamp, exp/log, softmax, layer-norm, reshape/concat/slice,
// sum/mean reductions, embedding lookup, and attention composed on top.
// Each primitive records its backward closure on the active tape.
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "moeact/nn/tensor.hpp"

namespace moeact::nn {

namespace detail {

// c[m,p] += a[m,n] * b[n,p]
template <class S>
void gemm_nn_acc(const S* a, const S* b, S* c, int m, int n, int p) {
  for (int i = 0; i < m; ++i) {
    const S* ai = a + static_cast<size_t>(i) * n;
    S* ci = c + static_cast<size_t>(i) * p;
    for (int k = 0; k < n; ++k) {
      const S aik = ai[k];
      const S* bk = b + static_cast<size_t>(k) * p;
      for (int j = 0; j < p; ++j) ci[j] += aik * bk[j];
    }
  }
}

// c[n,p] += a[m,n]^T * g[m,p]
template <class S>
void gemm_tn_acc(const S* a, const S* g, S* c, int m, int n, int p) {
  for (int i = 0; i < m; ++i) {
    const S* ai = a + static_cast<size_t>(i) * n;
    const S* gi = g + static_cast<size_t>(i) * p;
    for (int k = 0; k < n; ++k) {
      const S aik = ai[k];
      S* ck = c + static_cast<size_t>(k) * p;
      for (int j = 0; j < p; ++j) ck[j] += aik * gi[j];
    }
  }
}

template <class S>
std::vector<S> transposed(const S* x, int rows, int cols) {
  std::vector<S> t(static_cast<size_t>(rows) * cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) t[static_cast<size_t>(j) * rows + i] = x[static_cast<size_t>(i) * cols + j];
  return t;
}

// c[m,n] += x[m,k] * y[n,k]^T
template <class S>
void gemm_nt_acc(const S* x, const S* y, S* c, int m, int k, int n) {
  const std::vector<S> yt = transposed(y, n, k);  // [k,n]
  gemm_nn_acc(x, yt.data(), c, m, k, n);
}

template <class S>
bool tape_on() {
  return TapeT<S>::current() != nullptr;
}

template <class S>
void record(std::function<void(GradStoreT<S>&)> fn) {
  TapeT<S>::current()->record(std::move(fn));
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace detail

// ---------------------------------------------------------------- matmul

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                  "matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                      shape_str(b.shape()));
  const int m = a.dim(0), n = a.dim(1), p = b.dim(1);
  const bool rg = (a.requires_grad() || b.requires_grad()) && detail::tape_on<S>();
  TensorT<S> out = TensorT<S>::zeros({m, p}, rg);
  detail::gemm_nn_acc(a.ptr(), b.ptr(), out.ptr(), m, n, p);
  if (rg) {
    detail::record<S>([a, b, out, m, n, p](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      if (a.requires_grad()) detail::gemm_nt_acc(go->data(), b.ptr(), gs.accum(a).data(), m, p, n);
      if (b.requires_grad()) detail::gemm_tn_acc(a.ptr(), go->data(), gs.accum(b).data(), m, n, p);
    });
  }
  return out;
}

// a[m,k] * b[n,k]^T -> [m,n]
template <class S>
TensorT<S> matmul_nt(const TensorT<S>& a, const TensorT<S>& b) {
  detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
                  "matmul_nt: trailing dimensions disagree: " + shape_str(a.shape()) + " x " +
                      shape_str(b.shape()) + "^T");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(0);
  const bool rg = (a.requires_grad() || b.requires_grad()) && detail::tape_on<S>();
  TensorT<S> out = TensorT<S>::zeros({m, n}, rg);
  detail::gemm_nt_acc(a.ptr(), b.ptr(), out.ptr(), m, k, n);
  if (rg) {
    detail::record<S>([a, b, out, m, k, n](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      if (a.requires_grad()) detail::gemm_nn_acc(go->data(), b.ptr(), gs.accum(a).data(), m, n, k);
      if (b.requires_grad()) detail::gemm_tn_acc(go->data(), a.ptr(), gs.accum(b).data(), m, n, k);
    });
  }
  return out;
}

// -------------------------------------------------------- elementwise ops

namespace detail {

enum class BroadcastKind { Same, Row, Scalar };

template <class S>
BroadcastKind broadcast_kind(const TensorT<S>& a, const TensorT<S>& b, const char* op) {
  if (a.shape() == b.shape()) return BroadcastKind::Same;
  if (b.numel() == 1) return BroadcastKind::Scalar;
  if (b.rank() == 1 && a.rank() >= 1 && a.dim(a.rank() - 1) == b.dim(0) &&
      a.numel() % b.numel() == 0)
    return BroadcastKind::Row;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " vs " +
                   shape_str(b.shape()));
}

}  // namespace detail

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  const auto kind = detail::broadcast_kind(a, b, "add");
  const bool rg = (a.requires_grad() || b.requires_grad()) && detail::tape_on<S>();
  TensorT<S> out = TensorT<S>::zeros(a.shape(), rg);
  const size_t n = a.numel(), bn = b.numel();
  const S* ap = a.ptr();
  const S* bp = b.ptr();
  S* op = out.ptr();
  switch (kind) {
    case detail::BroadcastKind::Same:
      for (size_t i = 0; i < n; ++i) op[i] = ap[i] + bp[i];
      break;
    case detail::BroadcastKind::Scalar:
      for (size_t i = 0; i < n; ++i) op[i] = ap[i] + bp[0];
      break;
    case detail::BroadcastKind::Row:
      for (size_t i = 0; i < n; ++i) op[i] = ap[i] + bp[i % bn];
      break;
  }
  if (rg) {
    detail::record<S>([a, b, out, kind, n, bn](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      if (a.requires_grad()) {
        auto& ga = gs.accum(a);
        for (size_t i = 0; i < n; ++i) ga[i] += (*go)[i];
      }
      if (b.requires_grad()) {
        auto& gb = gs.accum(b);
        switch (kind) {
          case detail::BroadcastKind::Same:
            for (size_t i = 0; i < n; ++i) gb[i] += (*go)[i];
            break;
          case detail::BroadcastKind::Scalar:
            for (size_t i = 0; i < n; ++i) gb[0] += (*go)[i];
            break;
          case detail::BroadcastKind::Row:
            for (size_t i = 0; i < n; ++i) gb[i % bn] += (*go)[i];
            break;
        }
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
  const auto kind = detail::broadcast_kind(a, b, "sub");
  const bool rg = (a.requires_grad() || b.requires_grad()) && detail::tape_on<S>();
  TensorT<S> out = TensorT<S>::zeros(a.shape(), rg);
  const size_t n = a.numel(), bn = b.numel();
  const S* ap = a.ptr();
  const S* bp = b.ptr();
  S* op = out.ptr();
  switch (kind) {
    case detail::BroadcastKind::Same:
      for (size_t i = 0; i < n; ++i) op[i] = ap[i] - bp[i];
      break;
    case detail::BroadcastKind::Scalar:
      for (size_t i = 0; i < n; ++i) op[i] = ap[i] - bp[0];
      break;
    case detail::BroadcastKind::Row:
      for (size_t i = 0; i < n; ++i) op[i] = ap[i] - bp[i % bn];
      break;
  }
  if (rg) {
    detail::record<S>([a, b, out, kind, n, bn](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      if (a.requires_grad()) {
        auto& ga = gs.accum(a);
        for (size_t i = 0; i < n; ++i) ga[i] += (*go)[i];
      }
      if (b.requires_grad()) {
        auto& gb = gs.accum(b);
        switch (kind) {
          case detail::BroadcastKind::Same:
            for (size_t i = 0; i < n; ++i) gb[i] -= (*go)[i];
            break;
          case detail::BroadcastKind::Scalar:
            for (size_t i = 0; i < n; ++i) gb[0] -= (*go)[i];
            break;
          case detail::BroadcastKind::Row:
            for (size_t i = 0; i < n; ++i) gb[i % bn] -= (*go)[i];
            break;
        }
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  const auto kind = detail::broadcast_kind(a, b, "mul");
  const bool rg = (a.requires_grad() || b.requires_grad()) && detail::tape_on<S>();
  TensorT<S> out = TensorT<S>::zeros(a.shape(), rg);
  const size_t n = a.numel(), bn = b.numel();
  const S* ap = a.ptr();
  const S* bp = b.ptr();
  S* op = out.ptr();
  switch (kind) {
    case detail::BroadcastKind::Same:
      for (size_t i = 0; i < n; ++i) op[i] = ap[i] * bp[i];
      break;
    case detail::BroadcastKind::Scalar:
      for (size_t i = 0; i < n; ++i) op[i] = ap[i] * bp[0];
      break;
    case detail::BroadcastKind::Row:
      for (size_t i = 0; i < n; ++i) op[i] = ap[i] * bp[i % bn];
      break;
  }
  if (rg) {
    detail::record<S>([a, b, out, kind, n, bn](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      const S* ap2 = a.ptr();
      const S* bp2 = b.ptr();
      if (a.requires_grad()) {
        auto& ga = gs.accum(a);
        switch (kind) {
          case detail::BroadcastKind::Same:
            for (size_t i = 0; i < n; ++i) ga[i] += (*go)[i] * bp2[i];
            break;
          case detail::BroadcastKind::Scalar:
            for (size_t i = 0; i < n; ++i) ga[i] += (*go)[i] * bp2[0];
            break;
          case detail::BroadcastKind::Row:
            for (size_t i = 0; i < n; ++i) ga[i] += (*go)[i] * bp2[i % bn];
            break;
        }
      }
      if (b.requires_grad()) {
        auto& gb = gs.accum(b);
        switch (kind) {
          case detail::BroadcastKind::Same:
            for (size_t i = 0; i < n; ++i) gb[i] += (*go)[i] * ap2[i];
            break;
          case detail::BroadcastKind::Scalar:
            for (size_t i = 0; i < n; ++i) gb[0] += (*go)[i] * ap2[i];
            break;
          case detail::BroadcastKind::Row:
            for (size_t i = 0; i < n; ++i) gb[i % bn] += (*go)[i] * ap2[i];
            break;
        }
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> mul_scalar(const TensorT<S>& x, S c) {
  const bool rg = x.requires_grad() && detail::tape_on<S>();
  TensorT<S> out = TensorT<S>::zeros(x.shape(), rg);
  const size_t n = x.numel();
  for (size_t i = 0; i < n; ++i) out.ptr()[i] = x.ptr()[i] * c;
  if (rg) {
    detail::record<S>([x, out, c, n](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      auto& gx = gs.accum(x);
      for (size_t i = 0; i < n; ++i) gx[i] += (*go)[i] * c;
    });
  }
  return out;
}

template <class S>
TensorT<S> add_scalar(const TensorT<S>& x, S c) {
  const bool rg = x.requires_grad() && detail::tape_on<S>();
  TensorT<S> out = TensorT<S>::zeros(x.shape(), rg);
  const size_t n = x.numel();
  for (size_t i = 0; i < n; ++i) out.ptr()[i] = x.ptr()[i] + c;
  if (rg) {
    detail::record<S>([x, out, n](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      auto& gx = gs.accum(x);
      for (size_t i = 0; i < n; ++i) gx[i] += (*go)[i];
    });
  }
  return out;
}

// out[r,c] = x[r,c] * s[r]
template <class S>
TensorT<S> scale_rows(const TensorT<S>& x, const TensorT<S>& s) {
  detail::require(x.rank() == 2 && s.rank() == 1 && s.dim(0) == x.dim(0),
                  "scale_rows: " + shape_str(x.shape()) + " with " + shape_str(s.shape()));
  const int rows = x.dim(0), cols = x.dim(1);
  const bool rg = (x.requires_grad() || s.requires_grad()) && detail::tape_on<S>();
  TensorT<S> out = TensorT<S>::zeros(x.shape(), rg);
  for (int r = 0; r < rows; ++r) {
    const S sr = s.at(r);
    for (int c = 0; c < cols; ++c)
      out.ptr()[static_cast<size_t>(r) * cols + c] = x.at(r, c) * sr;
  }
  if (rg) {
    detail::record<S>([x, s, out, rows, cols](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      if (x.requires_grad()) {
        auto& gx = gs.accum(x);
        for (int r = 0; r < rows; ++r) {
          const S sr = s.at(r);
          for (int c = 0; c < cols; ++c) {
            const size_t i = static_cast<size_t>(r) * cols + c;
            gx[i] += (*go)[i] * sr;
          }
        }
      }
      if (s.requires_grad()) {
        auto& gsr = gs.accum(s);
        for (int r = 0; r < rows; ++r) {
          S acc = 0;
          for (int c = 0; c < cols; ++c) {
            const size_t i = static_cast<size_t>(r) * cols + c;
            acc += (*go)[i] * x.ptr()[i];
          }
          gsr[r] += acc;
        }
      }
    });
  }
  return out;
}

// ------------------------------------------------------------ activations

template <class S>
TensorT<S> relu(const TensorT<S>& x) {
  const bool rg = x.requires_grad() && detail::tape_on<S>();
  TensorT<S> out = TensorT<S>::zeros(x.shape(), rg);
  const size_t n = x.numel();
  for (size_t i = 0; i < n; ++i) out.ptr()[i] = x.ptr()[i] > S(0) ? x.ptr()[i] : S(0);
  if (rg) {
    detail::record<S>([x, out, n](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      auto& gx = gs.accum(x);
      for (size_t i = 0; i < n; ++i)
        if (x.ptr()[i] > S(0)) gx[i] += (*go)[i];
    });
  }
  return out;
}

// tanh-approximation gelu; smooth, so finite-difference checks stay clean
template <class S>
TensorT<S> gelu(const TensorT<S>& x) {
  const bool rg = x.requires_grad() && detail::tape_on<S>();
  TensorT<S> out = TensorT<S>::zeros(x.shape(), rg);
  const size_t n = x.numel();
  const S c = static_cast<S>(std::sqrt(2.0 / std::numbers::pi));
  const S k = static_cast<S>(0.044715);
  for (size_t i = 0; i < n; ++i) {
    const S v = x.ptr()[i];
    out.ptr()[i] = S(0.5) * v * (S(1) + std::tanh(c * (v + k * v * v * v)));
  }
  if (rg) {
    detail::record<S>([x, out, n, c, k](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      auto& gx = gs.accum(x);
      for (size_t i = 0; i < n; ++i) {
        const S v = x.ptr()[i];
        const S t = std::tanh(c * (v + k * v * v * v));
        const S d = S(0.5) * (S(1) + t) + S(0.5) * v * (S(1) - t * t) * c * (S(1) + S(3) * k * v * v);
        gx[i] += (*go)[i] * d;
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> sigmoid(const TensorT<S>& x) {
  const bool rg = x.requires_grad() && detail::tape_on<S>();
  TensorT<S> out = TensorT<S>::zeros(x.shape(), rg);
  const size_t n = x.numel();
  for (size_t i = 0; i < n; ++i) {
    const S v = x.ptr()[i];
    out.ptr()[i] = v >= S(0) ? S(1) / (S(1) + std::exp(-v)) : std::exp(v) / (S(1) + std::exp(v));
  }
  if (rg) {
    detail::record<S>([x, out, n](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      auto& gx = gs.accum(x);
      for (size_t i = 0; i < n; ++i) {
        const S s = out.ptr()[i];
        gx[i] += (*go)[i] * s * (S(1) - s);
      }
    });
  }
  return out;
}

// pass-through gradient inside [lo,hi], zero outside
template <class S>
TensorT<S> clamp(const TensorT<S>& x, S lo, S hi) {
  const bool rg = x.requires_grad() && detail::tape_on<S>();
  TensorT<S> out = TensorT<S>::zeros(x.shape(), rg);
  const size_t n = x.numel();
  for (size_t i = 0; i < n; ++i) out.ptr()[i] = std::min(hi, std::max(lo, x.ptr()[i]));
  if (rg) {
    detail::record<S>([x, out, lo, hi, n](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      auto& gx = gs.accum(x);
      for (size_t i = 0; i < n; ++i) {
        const S v = x.ptr()[i];
        if (v >= lo && v <= hi) gx[i] += (*go)[i];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> exp(const TensorT<S>& x) {
  const bool rg = x.requires_grad() && detail::tape_on<S>();
  TensorT<S> out = TensorT<S>::zeros(x.shape(), rg);
  const size_t n = x.numel();
  for (size_t i = 0; i < n; ++i) out.ptr()[i] = std::exp(x.ptr()[i]);
  if (rg) {
    detail::record<S>([x, out, n](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      auto& gx = gs.accum(x);
      for (size_t i = 0; i < n; ++i) gx[i] += (*go)[i] * out.ptr()[i];
    });
  }
  return out;
}

template <class S>
TensorT<S> log(const TensorT<S>& x) {
  const bool rg = x.requires_grad() && detail::tape_on<S>();
  TensorT<S> out = TensorT<S>::zeros(x.shape(), rg);
  const size_t n = x.numel();
  for (size_t i = 0; i < n; ++i) {
    const S v = x.ptr()[i];
    if (!(v > S(0))) throw NumericError("log: non-positive input " + std::to_string(static_cast<double>(v)));
    out.ptr()[i] = std::log(v);
  }
  if (rg) {
    detail::record<S>([x, out, n](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      auto& gx = gs.accum(x);
      for (size_t i = 0; i < n; ++i) gx[i] += (*go)[i] / x.ptr()[i];
    });
  }
  return out;
}

// ----------------------------------------------------- softmax, layer norm

// softmax over the last axis, max-subtracted
template <class S>
TensorT<S> softmax(const TensorT<S>& x) {
  detail::require(x.rank() >= 1, "softmax: rank-0 input");
  const int h = x.dim(x.rank() - 1);
  const size_t rows = x.numel() / static_cast<size_t>(h);
  const size_t n = x.numel();
  for (size_t i = 0; i < n; ++i)
    if (std::isnan(x.ptr()[i])) throw NumericError("softmax: NaN input");
  const bool rg = x.requires_grad() && detail::tape_on<S>();
  TensorT<S> out = TensorT<S>::zeros(x.shape(), rg);
  for (size_t r = 0; r < rows; ++r) {
    const S* xi = x.ptr() + r * h;
    S* oi = out.ptr() + r * h;
    S mx = xi[0];
    for (int j = 1; j < h; ++j) mx = std::max(mx, xi[j]);
    S sum = 0;
    for (int j = 0; j < h; ++j) {
      oi[j] = std::exp(xi[j] - mx);
      sum += oi[j];
    }
    for (int j = 0; j < h; ++j) oi[j] /= sum;
  }
  if (rg) {
    detail::record<S>([x, out, rows, h](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      auto& gx = gs.accum(x);
      for (size_t r = 0; r < rows; ++r) {
        const S* yi = out.ptr() + r * h;
        const S* gi = go->data() + r * h;
        S dot = 0;
        for (int j = 0; j < h; ++j) dot += gi[j] * yi[j];
        for (int j = 0; j < h; ++j) gx[r * h + j] += (gi[j] - dot) * yi[j];
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta,
                      S eps = S(1e-5)) {
  detail::require(x.rank() == 2, "layer_norm: expected rank-2 input, got " + shape_str(x.shape()));
  const int rows = x.dim(0), cols = x.dim(1);
  detail::require(gamma.numel() == static_cast<size_t>(cols) && beta.numel() == static_cast<size_t>(cols),
                  "layer_norm: affine params " + shape_str(gamma.shape()) + "/" +
                      shape_str(beta.shape()) + " for width " + std::to_string(cols));
  const bool rg =
      (x.requires_grad() || gamma.requires_grad() || beta.requires_grad()) && detail::tape_on<S>();
  TensorT<S> out = TensorT<S>::zeros(x.shape(), rg);
  TensorT<S> xhat = TensorT<S>::zeros(x.shape());  // saved for backward
  std::vector<S> inv_std(static_cast<size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const S* xi = x.ptr() + static_cast<size_t>(r) * cols;
    S mean = 0;
    for (int c = 0; c < cols; ++c) mean += xi[c];
    mean /= static_cast<S>(cols);
    S var = 0;
    for (int c = 0; c < cols; ++c) var += (xi[c] - mean) * (xi[c] - mean);
    var /= static_cast<S>(cols);
    const S is = S(1) / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = is;
    S* hi = xhat.ptr() + static_cast<size_t>(r) * cols;
    S* oi = out.ptr() + static_cast<size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) {
      hi[c] = (xi[c] - mean) * is;
      oi[c] = gamma.at(c) * hi[c] + beta.at(c);
    }
  }
  if (rg) {
    detail::record<S>([x, gamma, beta, out, xhat, inv_std, rows, cols](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      if (gamma.requires_grad()) {
        auto& gg = gs.accum(gamma);
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c)
            gg[c] += (*go)[static_cast<size_t>(r) * cols + c] * xhat.at(r, c);
      }
      if (beta.requires_grad()) {
        auto& gb = gs.accum(beta);
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c) gb[c] += (*go)[static_cast<size_t>(r) * cols + c];
      }
      if (x.requires_grad()) {
        auto& gx = gs.accum(x);
        for (int r = 0; r < rows; ++r) {
          const S* gi = go->data() + static_cast<size_t>(r) * cols;
          const S* hi = xhat.ptr() + static_cast<size_t>(r) * cols;
          S sum_dh = 0, sum_dh_h = 0;
          std::vector<S> dh(static_cast<size_t>(cols));
          for (int c = 0; c < cols; ++c) {
            dh[static_cast<size_t>(c)] = gi[c] * gamma.at(c);
            sum_dh += dh[static_cast<size_t>(c)];
            sum_dh_h += dh[static_cast<size_t>(c)] * hi[c];
          }
          const S inv_n = S(1) / static_cast<S>(cols);
          for (int c = 0; c < cols; ++c) {
            gx[static_cast<size_t>(r) * cols + c] +=
                (dh[static_cast<size_t>(c)] - sum_dh * inv_n - hi[c] * sum_dh_h * inv_n) *
                inv_std[static_cast<size_t>(r)];
          }
        }
      }
    });
  }
  return out;
}

// -------------------------------------------------- shape ops, reductions

template <class S>
TensorT<S> reshape(const TensorT<S>& x, std::vector<int> shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  detail::require(n == x.numel(),
                  "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
  const bool rg = x.requires_grad() && detail::tape_on<S>();
  TensorT<S> out = TensorT<S>::from(std::move(shape), x.values(), rg);
  if (rg) {
    detail::record<S>([x, out, n](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      auto& gx = gs.accum(x);
      for (size_t i = 0; i < n; ++i) gx[i] += (*go)[i];
    });
  }
  return out;
}

template <class S>
TensorT<S> concat_rows(const std::vector<TensorT<S>>& xs) {
  detail::require(!xs.empty(), "concat_rows: empty list");
  const int cols = xs[0].rank() == 2 ? xs[0].dim(1) : 1;
  int rows = 0;
  bool any_rg = false;
  for (const auto& x : xs) {
    detail::require(x.rank() == 2 && x.dim(1) == cols, "concat_rows: column mismatch at " + shape_str(x.shape()));
    rows += x.dim(0);
    any_rg = any_rg || x.requires_grad();
  }
  const bool rg = any_rg && detail::tape_on<S>();
  TensorT<S> out = TensorT<S>::zeros({rows, cols}, rg);
  size_t off = 0;
  for (const auto& x : xs) {
    std::copy(x.ptr(), x.ptr() + x.numel(), out.ptr() + off);
    off += x.numel();
  }
  if (rg) {
    detail::record<S>([xs, out](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      size_t off2 = 0;
      for (const auto& x : xs) {
        if (x.requires_grad()) {
          auto& gx = gs.accum(x);
          for (size_t i = 0; i < x.numel(); ++i) gx[i] += (*go)[off2 + i];
        }
        off2 += x.numel();
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> concat_cols(const std::vector<TensorT<S>>& xs) {
  detail::require(!xs.empty(), "concat_cols: empty list");
  const int rows = xs[0].dim(0);
  int cols = 0;
  bool any_rg = false;
  for (const auto& x : xs) {
    detail::require(x.rank() == 2 && x.dim(0) == rows, "concat_cols: row mismatch at " + shape_str(x.shape()));
    cols += x.dim(1);
    any_rg = any_rg || x.requires_grad();
  }
  const bool rg = any_rg && detail::tape_on<S>();
  TensorT<S> out = TensorT<S>::zeros({rows, cols}, rg);
  int coff = 0;
  for (const auto& x : xs) {
    const int xc = x.dim(1);
    for (int r = 0; r < rows; ++r)
      std::copy(x.ptr() + static_cast<size_t>(r) * xc, x.ptr() + static_cast<size_t>(r + 1) * xc,
                out.ptr() + static_cast<size_t>(r) * cols + coff);
    coff += xc;
  }
  if (rg) {
    detail::record<S>([xs, out, rows, cols](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      int coff2 = 0;
      for (const auto& x : xs) {
        const int xc = x.dim(1);
        if (x.requires_grad()) {
          auto& gx = gs.accum(x);
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < xc; ++c)
              gx[static_cast<size_t>(r) * xc + c] += (*go)[static_cast<size_t>(r) * cols + coff2 + c];
        }
        coff2 += xc;
      }
    });
  }
  return out;
}

template <class S>
TensorT<S> slice_rows(const TensorT<S>& x, int r0, int r1) {
  detail::require(x.rank() == 2 && 0 <= r0 && r0 < r1 && r1 <= x.dim(0),
                  "slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) + ") of " +
                      shape_str(x.shape()));
  const int cols = x.dim(1);
  const bool rg = x.requires_grad() && detail::tape_on<S>();
  TensorT<S> out = TensorT<S>::zeros({r1 - r0, cols}, rg);
  std::copy(x.ptr() + static_cast<size_t>(r0) * cols, x.ptr() + static_cast<size_t>(r1) * cols, out.ptr());
  if (rg) {
    detail::record<S>([x, out, r0, cols](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      auto& gx = gs.accum(x);
      for (size_t i = 0; i < out.numel(); ++i) gx[static_cast<size_t>(r0) * cols + i] += (*go)[i];
    });
  }
  return out;
}

template <class S>
TensorT<S> slice_cols(const TensorT<S>& x, int c0, int c1) {
  detail::require(x.rank() == 2 && 0 <= c0 && c0 < c1 && c1 <= x.dim(1),
                  "slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) + ") of " +
                      shape_str(x.shape()));
  const int rows = x.dim(0), cols = x.dim(1), w = c1 - c0;
  const bool rg = x.requires_grad() && detail::tape_on<S>();
  TensorT<S> out = TensorT<S>::zeros({rows, w}, rg);
  for (int r = 0; r < rows; ++r)
    std::copy(x.ptr() + static_cast<size_t>(r) * cols + c0, x.ptr() + static_cast<size_t>(r) * cols + c1,
              out.ptr() + static_cast<size_t>(r) * w);
  if (rg) {
    detail::record<S>([x, out, c0, rows, cols, w](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      auto& gx = gs.accum(x);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < w; ++c)
          gx[static_cast<size_t>(r) * cols + c0 + c] += (*go)[static_cast<size_t>(r) * w + c];
    });
  }
  return out;
}

template <class S>
TensorT<S> sum(const TensorT<S>& x) {
  const bool rg = x.requires_grad() && detail::tape_on<S>();
  S acc = 0;
  for (size_t i = 0; i < x.numel(); ++i) acc += x.ptr()[i];
  TensorT<S> out = TensorT<S>::from({1}, {acc}, rg);
  if (rg) {
    detail::record<S>([x, out](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      auto& gx = gs.accum(x);
      for (size_t i = 0; i < x.numel(); ++i) gx[i] += (*go)[0];
    });
  }
  return out;
}

template <class S>
TensorT<S> mean(const TensorT<S>& x) {
  detail::require(x.numel() > 0, "mean: empty tensor");
  return mul_scalar(sum(x), S(1) / static_cast<S>(x.numel()));
}

// rows of `table` gathered by index; backward scatter-adds
template <class S>
TensorT<S> embedding(const TensorT<S>& table, const std::vector<int>& idx) {
  detail::require(table.rank() == 2, "embedding: table must be rank-2, got " + shape_str(table.shape()));
  const int v = table.dim(0), d = table.dim(1);
  for (int i : idx)
    detail::require(0 <= i && i < v, "embedding: index " + std::to_string(i) + " out of [0," +
                                         std::to_string(v) + ")");
  const bool rg = table.requires_grad() && detail::tape_on<S>();
  TensorT<S> out = TensorT<S>::zeros({static_cast<int>(idx.size()), d}, rg);
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy(table.ptr() + static_cast<size_t>(idx[r]) * d, table.ptr() + static_cast<size_t>(idx[r] + 1) * d,
              out.ptr() + r * d);
  if (rg) {
    detail::record<S>([table, out, idx, d](GradStoreT<S>& gs) {
      const auto* go = gs.find(out.id());
      if (!go) return;
      auto& gt = gs.accum(table);
      for (size_t r = 0; r < idx.size(); ++r)
        for (int c = 0; c < d; ++c)
          gt[static_cast<size_t>(idx[r]) * d + c] += (*go)[r * static_cast<size_t>(d) + c];
    });
  }
  return out;
}

// --------------------------------------------------------------- attention

// softmax(q k^T / sqrt(d_head) + mask) v, composed from primitives.
template <class S>
TensorT<S> attention(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v,
                     const TensorT<S>* mask = nullptr) {
  detail::require(q.rank() == 2 && k.rank() == 2 && v.rank() == 2 && q.dim(1) == k.dim(1),
                  "attention: head-dimension mismatch: q " + shape_str(q.shape()) + " vs k " +
                      shape_str(k.shape()));
  detail::require(k.dim(0) == v.dim(0), "attention: k rows " + std::to_string(k.dim(0)) +
                                            " vs v rows " + std::to_string(v.dim(0)));
  TensorT<S> scores = mul_scalar(matmul_nt(q, k), S(1) / std::sqrt(static_cast<S>(q.dim(1))));
  if (mask) {
    detail::require(mask->shape() == scores.shape(),
                    "attention: mask " + shape_str(mask->shape()) + " vs scores " + shape_str(scores.shape()));
    scores = add(scores, *mask);
  }
  return matmul(softmax(scores), v);
}

// q,k,v: [T, d_model] pre-projected; splits into `heads` column blocks,
// attends per head, concatenates. Output projection is the caller's.
template <class S>
TensorT<S> multi_head_attention(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v,
                                int heads, const TensorT<S>* mask = nullptr) {
  detail::require(q.dim(1) % heads == 0, "multi_head_attention: width " + std::to_string(q.dim(1)) +
                                             " not divisible by " + std::to_string(heads) + " heads");
  const int dh = q.dim(1) / heads;
  std::vector<TensorT<S>> outs;
  outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    TensorT<S> qh = slice_cols(q, h * dh, (h + 1) * dh);
    TensorT<S> kh = slice_cols(k, h * dh, (h + 1) * dh);
    TensorT<S> vh = slice_cols(v, h * dh, (h + 1) * dh);
    outs.push_back(attention(qh, kh, vh, mask));
  }
  return concat_cols(outs);
}

// x w + b
template <class S>
TensorT<S> linear(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
  return add(matmul(x, w), b);
}

}  // namespace moeact::nn
