#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "adua/tensor.hpp"

namespace adua {

namespace detail {

// NumPy-style broadcast of two shapes, aligned on trailing dimensions.
inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("broadcast: shapes " + shape_str(a) + " and " +
                       shape_str(b) + " are incompatible");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Element strides of `s` viewed through the broadcast shape `out` (stride 0
// where `s` repeats along a dimension).
inline std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& out) {
  std::vector<std::size_t> st(out.size(), 0);
  std::size_t acc = 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::size_t si = s.size() - 1 - i;
    const std::size_t oi = out.size() - 1 - i;
    st[oi] = (s[si] == 1 && out[oi] != 1) ? 0 : acc;
    acc *= s[si];
  }
  return st;
}

// Odometer walk over `out`, handing the callback the flat output index plus
// the flat offsets into two broadcast sources.
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t r = out.size();
  const std::size_t n = numel(out);
  if (n == 0) return;
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0;
  std::size_t ob = 0;
  for (std::size_t flat = 0;;) {
    f(flat, oa, ob);
    if (++flat == n) break;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < out[d]) break;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

// C[M,N] += A[M,K] * B[K,N]
template <typename S>
void mm_acc(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const S* ai = a + i * k;
    S* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const S av = ai[p];
      if (av == S{0}) continue;
      const S* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// dA[M,K] += dC[M,N] * B^T
template <typename S>
void mm_acc_nt(const S* dc, const S* b, S* da, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const S* dci = dc + i * n;
    S* dai = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const S* bp = b + p * n;
      S s{0};
      for (std::size_t j = 0; j < n; ++j) s += dci[j] * bp[j];
      dai[p] += s;
    }
  }
}

// dB[K,N] += A^T * dC[M,N]
template <typename S>
void mm_acc_tn(const S* a, const S* dc, S* db, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const S* ai = a + i * k;
    const S* dci = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const S av = ai[p];
      if (av == S{0}) continue;
      S* dbp = db + p * n;
      for (std::size_t j = 0; j < n; ++j) dbp[j] += av * dci[j];
    }
  }
}

template <typename S>
void ensure_grad(const std::shared_ptr<TensorData<S>>& d) {
  if (d->grad.empty()) d->grad.assign(d->values.size(), S{0});
}

inline double gauss_cdf(double x) {
  return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2_v<double>));
}

inline double gauss_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi_v<double>);
}

}  // namespace detail

// Throws if any element is non-finite. Used by debug-mode training checks;
// forward ops themselves stay branch-free on the hot path.
template <typename S>
void check_finite(const Tensor<S>& t, const std::string& context) {
  for (S v : t.values()) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw TrainingError("non-finite value in " + context);
    }
  }
}

// Elementwise sum with NumPy broadcasting. Gradients reduce-sum back over
// broadcast dimensions via the same offset mapping used in the forward pass.
template <typename S>
Tensor<S> add(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  const bool track = tape.recording() && (a.requires_grad() || b.requires_grad());
  Tensor<S> out;
  if (a.shape() == b.shape()) {
    out = Tensor<S>::zeros(a.shape());
    const S* pa = a.values().data();
    const S* pb = b.values().data();
    S* po = out.values_mut().data();
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (track) {
      out.set_requires_grad(true);
      tape.record([ad = a.payload(), bd = b.payload(), od = out.payload()] {
        if (od->grad.empty()) return;
        const std::size_t n = od->grad.size();
        if (ad->requires_grad) {
          detail::ensure_grad(ad);
          for (std::size_t i = 0; i < n; ++i) ad->grad[i] += od->grad[i];
        }
        if (bd->requires_grad) {
          detail::ensure_grad(bd);
          for (std::size_t i = 0; i < n; ++i) bd->grad[i] += od->grad[i];
        }
      });
    }
    return out;
  }

  const Shape os = detail::broadcast_shapes(a.shape(), b.shape());
  const auto sa = detail::broadcast_strides(a.shape(), os);
  const auto sb = detail::broadcast_strides(b.shape(), os);
  out = Tensor<S>::zeros(os);
  {
    const S* pa = a.values().data();
    const S* pb = b.values().data();
    S* po = out.values_mut().data();
    detail::for_each_broadcast(os, sa, sb, [&](std::size_t flat, std::size_t oa, std::size_t ob) {
      po[flat] = pa[oa] + pb[ob];
    });
  }
  if (track) {
    out.set_requires_grad(true);
    tape.record([ad = a.payload(), bd = b.payload(), od = out.payload(), os, sa, sb] {
      if (od->grad.empty()) return;
      const S* g = od->grad.data();
      if (ad->requires_grad) detail::ensure_grad(ad);
      if (bd->requires_grad) detail::ensure_grad(bd);
      detail::for_each_broadcast(os, sa, sb, [&](std::size_t flat, std::size_t oa, std::size_t ob) {
        if (ad->requires_grad) ad->grad[oa] += g[flat];
        if (bd->requires_grad) bd->grad[ob] += g[flat];
      });
    });
  }
  return out;
}

// Multiplication by a compile-time-constant scalar (no gradient for c).
template <typename S>
Tensor<S> scale(Tape<S>& tape, const Tensor<S>& x, double c) {
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const S cs = static_cast<S>(c);
  const S* px = x.values().data();
  S* po = out.values_mut().data();
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) po[i] = cs * px[i];
  if (tape.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([xd = x.payload(), od = out.payload(), cs] {
      if (od->grad.empty()) return;
      detail::ensure_grad(xd);
      const std::size_t n = od->grad.size();
      for (std::size_t i = 0; i < n; ++i) xd->grad[i] += cs * od->grad[i];
    });
  }
  return out;
}

// Batched matrix product. Operands are stacks of [M,K] and [K,N] matrices;
// leading (batch) dimensions broadcast. dA = dC B^T, dB = A^T dC, with
// gradients of broadcast operands summed over the repeated batch entries.
template <typename S>
Tensor<S> matmul(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw ShapeError("matmul: operands need rank >= 2, got " + shape_str(as) +
                     " and " + shape_str(bs));
  }
  const std::size_t m = as[as.size() - 2];
  const std::size_t k = as[as.size() - 1];
  const std::size_t kb = bs[bs.size() - 2];
  const std::size_t n = bs[bs.size() - 1];
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_str(as) +
                     " and " + shape_str(bs));
  }
  const Shape abatch(as.begin(), as.end() - 2);
  const Shape bbatch(bs.begin(), bs.end() - 2);
  Shape obatch;
  try {
    obatch = detail::broadcast_shapes(abatch, bbatch);
  } catch (const ShapeError&) {
    throw ShapeError("matmul: batch dimensions of " + shape_str(as) + " and " +
                     shape_str(bs) + " do not broadcast");
  }
  const auto sa = detail::broadcast_strides(abatch, obatch);
  const auto sb = detail::broadcast_strides(bbatch, obatch);

  Shape os = obatch;
  os.push_back(m);
  os.push_back(n);
  Tensor<S> out = Tensor<S>::zeros(os);
  {
    const S* pa = a.values().data();
    const S* pb = b.values().data();
    S* po = out.values_mut().data();
    detail::for_each_broadcast(obatch, sa, sb, [&](std::size_t flat, std::size_t oa, std::size_t ob) {
      detail::mm_acc(pa + oa * m * k, pb + ob * k * n, po + flat * m * n, m, k, n);
    });
  }
  if (tape.recording() && (a.requires_grad() || b.requires_grad())) {
    out.set_requires_grad(true);
    tape.record([ad = a.payload(), bd = b.payload(), od = out.payload(), obatch, sa, sb, m, k, n] {
      if (od->grad.empty()) return;
      const S* dc = od->grad.data();
      if (ad->requires_grad) detail::ensure_grad(ad);
      if (bd->requires_grad) detail::ensure_grad(bd);
      detail::for_each_broadcast(obatch, sa, sb, [&](std::size_t flat, std::size_t oa, std::size_t ob) {
        if (ad->requires_grad) {
          detail::mm_acc_nt(dc + flat * m * n, bd->values.data() + ob * k * n,
                            ad->grad.data() + oa * m * k, m, k, n);
        }
        if (bd->requires_grad) {
          detail::mm_acc_tn(ad->values.data() + oa * m * k, dc + flat * m * n,
                            bd->grad.data() + ob * k * n, m, k, n);
        }
      });
    });
  }
  return out;
}

// Row gather from an embedding table [V,H]. Ids are plain integers (never
// differentiated); the gradient scatter-adds into the table.
template <typename S>
Tensor<S> embedding(Tape<S>& tape, const Tensor<S>& table,
                    std::span<const TokenId> ids, Shape id_shape) {
  if (table.rank() != 2) {
    throw ShapeError("embedding: table must be [V,H], got " + shape_str(table.shape()));
  }
  if (ids.size() != numel(id_shape)) {
    throw ShapeError("embedding: " + std::to_string(ids.size()) +
                     " ids do not fill shape " + shape_str(id_shape));
  }
  const std::size_t v = table.dim(0);
  const std::size_t h = table.dim(1);
  Shape os = id_shape;
  os.push_back(h);
  Tensor<S> out = Tensor<S>::zeros(os);
  const S* pt = table.values().data();
  S* po = out.values_mut().data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const TokenId id = ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw DataError("embedding: token id " + std::to_string(id) +
                      " out of range [0, " + std::to_string(v) +
                      ") at flat position " + std::to_string(i));
    }
    std::copy_n(pt + static_cast<std::size_t>(id) * h, h, po + i * h);
  }
  if (tape.recording() && table.requires_grad()) {
    out.set_requires_grad(true);
    std::vector<TokenId> ids_copy(ids.begin(), ids.end());
    tape.record([td = table.payload(), od = out.payload(), ids_copy, h] {
      if (od->grad.empty()) return;
      detail::ensure_grad(td);
      const S* g = od->grad.data();
      for (std::size_t i = 0; i < ids_copy.size(); ++i) {
        S* row = td->grad.data() + static_cast<std::size_t>(ids_copy[i]) * h;
        const S* gi = g + i * h;
        for (std::size_t j = 0; j < h; ++j) row[j] += gi[j];
      }
    });
  }
  return out;
}

// Exact GELU: x * Phi(x) with the Gaussian CDF via erf (no tanh shortcut).
// Derivative: Phi(x) + x * pdf(x).
template <typename S>
Tensor<S> gelu(Tape<S>& tape, const Tensor<S>& x) {
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const S* px = x.values().data();
  S* po = out.values_mut().data();
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = static_cast<double>(px[i]);
    po[i] = static_cast<S>(xi * detail::gauss_cdf(xi));
  }
  if (tape.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([xd = x.payload(), od = out.payload()] {
      if (od->grad.empty()) return;
      detail::ensure_grad(xd);
      const std::size_t n = od->grad.size();
      for (std::size_t i = 0; i < n; ++i) {
        const double xi = static_cast<double>(xd->values[i]);
        const double d = detail::gauss_cdf(xi) + xi * detail::gauss_pdf(xi);
        xd->grad[i] += od->grad[i] * static_cast<S>(d);
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> tanh_op(Tape<S>& tape, const Tensor<S>& x) {
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const S* px = x.values().data();
  S* po = out.values_mut().data();
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    po[i] = static_cast<S>(std::tanh(static_cast<double>(px[i])));
  }
  if (tape.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([xd = x.payload(), od = out.payload()] {
      if (od->grad.empty()) return;
      detail::ensure_grad(xd);
      const std::size_t n = od->grad.size();
      for (std::size_t i = 0; i < n; ++i) {
        const S y = od->values[i];
        xd->grad[i] += od->grad[i] * (S{1} - y * y);
      }
    });
  }
  return out;
}

// Softmax along `axis` (negative counts from the end). Max-subtracted for
// stability. Backward: dx = s * (dy - sum(dy * s)) along the axis.
template <typename S>
Tensor<S> softmax(Tape<S>& tape, const Tensor<S>& x, int axis = -1) {
  const int r = static_cast<int>(x.rank());
  const int requested = axis;
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("softmax: axis " + std::to_string(requested) +
                     " out of range for shape " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(static_cast<std::size_t>(axis));
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(static_cast<std::size_t>(i));
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(static_cast<std::size_t>(i));

  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const S* px = x.values().data();
  S* po = out.values_mut().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        mx = std::max(mx, static_cast<double>(px[base + j * inner]));
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        sum += std::exp(static_cast<double>(px[base + j * inner]) - mx);
      }
      for (std::size_t j = 0; j < n; ++j) {
        po[base + j * inner] = static_cast<S>(
            std::exp(static_cast<double>(px[base + j * inner]) - mx) / sum);
      }
    }
  }
  if (tape.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([xd = x.payload(), od = out.payload(), outer, inner, n] {
      if (od->grad.empty()) return;
      detail::ensure_grad(xd);
      const S* s = od->values.data();
      const S* dy = od->grad.data();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          S dot{0};
          for (std::size_t j = 0; j < n; ++j) {
            dot += dy[base + j * inner] * s[base + j * inner];
          }
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t p = base + j * inner;
            xd->grad[p] += s[p] * (dy[p] - dot);
          }
        }
      }
    });
  }
  return out;
}

// Layer normalization over the last dimension with learned gain and bias.
// Variance uses the biased 1/H estimator.
template <typename S>
Tensor<S> layer_norm(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& gamma,
                     const Tensor<S>& beta, double eps = 1e-5) {
  if (x.rank() < 1) throw ShapeError("layer_norm: input must have rank >= 1");
  const std::size_t h = x.shape().back();
  if (h < 2) {
    throw ContractError("layer_norm: last dimension must be >= 2, got shape " +
                        shape_str(x.shape()));
  }
  const Shape want{h};
  if (gamma.shape() != want || beta.shape() != want) {
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(h) +
                     "], got " + shape_str(gamma.shape()) + " and " +
                     shape_str(beta.shape()));
  }
  const std::size_t rows = x.size() / h;
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  std::vector<S> xhat(x.size());
  std::vector<S> inv_std(rows);
  {
    const S* px = x.values().data();
    const S* pg = gamma.values().data();
    const S* pb = beta.values().data();
    S* po = out.values_mut().data();
    for (std::size_t rix = 0; rix < rows; ++rix) {
      const S* row = px + rix * h;
      double mean = 0.0;
      for (std::size_t j = 0; j < h; ++j) mean += static_cast<double>(row[j]);
      mean /= static_cast<double>(h);
      double var = 0.0;
      for (std::size_t j = 0; j < h; ++j) {
        const double d = static_cast<double>(row[j]) - mean;
        var += d * d;
      }
      var /= static_cast<double>(h);
      const double inv = 1.0 / std::sqrt(var + eps);
      inv_std[rix] = static_cast<S>(inv);
      for (std::size_t j = 0; j < h; ++j) {
        const S xh = static_cast<S>((static_cast<double>(row[j]) - mean) * inv);
        xhat[rix * h + j] = xh;
        po[rix * h + j] = pg[j] * xh + pb[j];
      }
    }
  }
  const bool track = tape.recording() &&
                     (x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
  if (track) {
    out.set_requires_grad(true);
    tape.record([xd = x.payload(), gd = gamma.payload(), bd = beta.payload(),
                 od = out.payload(), xhat = std::move(xhat),
                 inv_std = std::move(inv_std), rows, h] {
      if (od->grad.empty()) return;
      const S* dy = od->grad.data();
      const S* pg = gd->values.data();
      if (xd->requires_grad) detail::ensure_grad(xd);
      if (gd->requires_grad) detail::ensure_grad(gd);
      if (bd->requires_grad) detail::ensure_grad(bd);
      for (std::size_t rix = 0; rix < rows; ++rix) {
        const S* dyr = dy + rix * h;
        const S* xhr = xhat.data() + rix * h;
        if (gd->requires_grad || bd->requires_grad) {
          for (std::size_t j = 0; j < h; ++j) {
            if (gd->requires_grad) gd->grad[j] += dyr[j] * xhr[j];
            if (bd->requires_grad) bd->grad[j] += dyr[j];
          }
        }
        if (xd->requires_grad) {
          double m1 = 0.0;
          double m2 = 0.0;
          for (std::size_t j = 0; j < h; ++j) {
            const double dxh = static_cast<double>(dyr[j]) * static_cast<double>(pg[j]);
            m1 += dxh;
            m2 += dxh * static_cast<double>(xhr[j]);
          }
          m1 /= static_cast<double>(h);
          m2 /= static_cast<double>(h);
          const double inv = static_cast<double>(inv_std[rix]);
          S* dxr = xd->grad.data() + rix * h;
          for (std::size_t j = 0; j < h; ++j) {
            const double dxh = static_cast<double>(dyr[j]) * static_cast<double>(pg[j]);
            dxr[j] += static_cast<S>(inv * (dxh - m1 - static_cast<double>(xhr[j]) * m2));
          }
        }
      }
    });
  }
  return out;
}

// Mean cross-entropy over the unmasked rows of [N,C] logits. `mask` selects
// the rows that contribute (empty means all); the mean divides by the count
// of contributing rows only. Computed via log-softmax for stability.
template <typename S>
Tensor<S> cross_entropy(Tape<S>& tape, const Tensor<S>& logits,
                        std::span<const TokenId> targets,
                        std::span<const std::uint8_t> mask = {}) {
  if (logits.rank() != 2) {
    throw ShapeError("cross_entropy: logits must be [N,C], got " +
                     shape_str(logits.shape()));
  }
  const std::size_t n = logits.dim(0);
  const std::size_t c = logits.dim(1);
  if (targets.size() != n) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                     " targets for " + std::to_string(n) + " rows");
  }
  if (!mask.empty() && mask.size() != n) {
    throw ShapeError("cross_entropy: mask size " + std::to_string(mask.size()) +
                     " does not match " + std::to_string(n) + " rows");
  }

  std::vector<S> probs(n * c, S{0});
  const S* px = logits.values().data();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.empty() && mask[i] == 0) continue;
    const TokenId t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw DataError("cross_entropy: target " + std::to_string(t) +
                      " out of range [0, " + std::to_string(c) + ") at row " +
                      std::to_string(i));
    }
    const S* row = px + i * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
    const double log_z = mx + std::log(sum);
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = static_cast<S>(std::exp(static_cast<double>(row[j]) - log_z));
    }
    total += log_z - static_cast<double>(row[t]);
    ++count;
  }
  if (count == 0) {
    throw ContractError("cross_entropy: every position is masked; the mean over an empty set is undefined");
  }
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(total / static_cast<double>(count)));

  if (tape.recording() && logits.requires_grad()) {
    out.set_requires_grad(true);
    std::vector<TokenId> tcopy(targets.begin(), targets.end());
    std::vector<std::uint8_t> mcopy(mask.begin(), mask.end());
    tape.record([xd = logits.payload(), od = out.payload(), probs = std::move(probs),
                 tcopy = std::move(tcopy), mcopy = std::move(mcopy), n, c, count] {
      if (od->grad.empty()) return;
      detail::ensure_grad(xd);
      const S g = od->grad[0] / static_cast<S>(count);
      for (std::size_t i = 0; i < n; ++i) {
        if (!mcopy.empty() && mcopy[i] == 0) continue;
        const S* pr = probs.data() + i * c;
        S* dx = xd->grad.data() + i * c;
        for (std::size_t j = 0; j < c; ++j) dx[j] += g * pr[j];
        dx[static_cast<std::size_t>(tcopy[i])] -= g;
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> reshape(Tape<S>& tape, const Tensor<S>& x, Shape new_shape) {
  if (numel(new_shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  }
  Tensor<S> out = Tensor<S>::from(std::move(new_shape),
                                  std::vector<S>(x.values().begin(), x.values().end()));
  if (tape.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([xd = x.payload(), od = out.payload()] {
      if (od->grad.empty()) return;
      detail::ensure_grad(xd);
      const std::size_t n = od->grad.size();
      for (std::size_t i = 0; i < n; ++i) xd->grad[i] += od->grad[i];
    });
  }
  return out;
}

// Axis permutation (materialized, not a view).
template <typename S>
Tensor<S> permute(Tape<S>& tape, const Tensor<S>& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  if (perm.size() != r) {
    throw ShapeError("permute: permutation of length " + std::to_string(perm.size()) +
                     " for rank " + std::to_string(r) + " tensor");
  }
  std::vector<bool> seen(r, false);
  for (std::size_t p : perm) {
    if (p >= r || seen[p]) throw ShapeError("permute: invalid permutation");
    seen[p] = true;
  }
  Shape os(r);
  for (std::size_t i = 0; i < r; ++i) os[i] = x.dim(perm[i]);

  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
  // Stride in the input for a step along each output dimension.
  std::vector<std::size_t> step(r);
  for (std::size_t i = 0; i < r; ++i) step[i] = in_strides[perm[i]];

  Tensor<S> out = Tensor<S>::zeros(os);
  const std::vector<std::size_t> zero(r, 0);
  {
    const S* px = x.values().data();
    S* po = out.values_mut().data();
    detail::for_each_broadcast(os, step, zero, [&](std::size_t flat, std::size_t src, std::size_t) {
      po[flat] = px[src];
    });
  }
  if (tape.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([xd = x.payload(), od = out.payload(), os, step, zero] {
      if (od->grad.empty()) return;
      detail::ensure_grad(xd);
      const S* g = od->grad.data();
      detail::for_each_broadcast(os, step, zero, [&](std::size_t flat, std::size_t src, std::size_t) {
        xd->grad[src] += g[flat];
      });
    });
  }
  return out;
}

// Selects one time step from [B,T,H], yielding [B,H].
template <typename S>
Tensor<S> take_token(Tape<S>& tape, const Tensor<S>& x, std::size_t t) {
  if (x.rank() != 3) {
    throw ShapeError("take_token: expected [B,T,H], got " + shape_str(x.shape()));
  }
  const std::size_t b = x.dim(0);
  const std::size_t tt = x.dim(1);
  const std::size_t h = x.dim(2);
  if (t >= tt) {
    throw ShapeError("take_token: position " + std::to_string(t) +
                     " out of range for " + shape_str(x.shape()));
  }
  Tensor<S> out = Tensor<S>::zeros({b, h});
  const S* px = x.values().data();
  S* po = out.values_mut().data();
  for (std::size_t i = 0; i < b; ++i) {
    std::copy_n(px + (i * tt + t) * h, h, po + i * h);
  }
  if (tape.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([xd = x.payload(), od = out.payload(), b, tt, h, t] {
      if (od->grad.empty()) return;
      detail::ensure_grad(xd);
      const S* g = od->grad.data();
      for (std::size_t i = 0; i < b; ++i) {
        S* dst = xd->grad.data() + (i * tt + t) * h;
        const S* src = g + i * h;
        for (std::size_t j = 0; j < h; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> sum_all(Tape<S>& tape, const Tensor<S>& x) {
  double total = 0.0;
  for (S v : x.values()) total += static_cast<double>(v);
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(total));
  if (tape.recording() && x.requires_grad()) {
    out.set_requires_grad(true);
    tape.record([xd = x.payload(), od = out.payload()] {
      if (od->grad.empty()) return;
      detail::ensure_grad(xd);
      const S g = od->grad[0];
      for (S& v : xd->grad) v += g;
    });
  }
  return out;
}

}  // namespace adua
