#include "phantom/ndtensor/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace phantom::nd {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

[[noreturn]] void bad_shape(const char* op, const Shape& a, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what + ", got " + shape_str(a));
}

template <typename T>
void check_same_tape(const char* op, const Var<T>& a, const Var<T>& b) {
  if (&a.tape() != &b.tape()) throw std::logic_error(std::string(op) + ": operands live on different tapes");
}

// Decomposes a shape around `axis` into (outer, axis length, inner).
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  check_same_tape("matmul", a, b);
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) mismatch("matmul", as, bs);
  const auto m = as[0], k = as[1], n = bs[1];
  Tensor<T> out({m, n});
  MapM<T>(out.data().data(), m, n).noalias() =
      MapC<T>(a.value().data().data(), m, k) * MapC<T>(b.value().data().data(), k, n);
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape<T>& t, std::size_t self) {
    MapC<T> g(t.upstream(self).data().data(), m, n);
    if (t.requires_grad(ia)) {
      MapM<T>(t.accumulate(ia).data().data(), m, k).noalias() +=
          g * MapC<T>(t.value(ib).data().data(), k, n).transpose();
    }
    if (t.requires_grad(ib)) {
      MapM<T>(t.accumulate(ib).data().data(), k, n).noalias() +=
          MapC<T>(t.value(ia).data().data(), m, k).transpose() * g;
    }
  });
}

template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b) {
  check_same_tape("bmm", a, b);
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] || as[2] != bs[1]) mismatch("bmm", as, bs);
  const auto nb = as[0], m = as[1], k = as[2], n = bs[2];
  Tensor<T> out({nb, m, n});
  const T* pa = a.value().data().data();
  const T* pb = b.value().data().data();
  for (std::size_t i = 0; i < nb; ++i) {
    MapM<T>(out.data().data() + i * m * n, m, n).noalias() =
        MapC<T>(pa + i * m * k, m, k) * MapC<T>(pb + i * k * n, k, n);
  }
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [=](Tape<T>& t, std::size_t self) {
    const T* g = t.upstream(self).data().data();
    const T* va = t.value(ia).data().data();
    const T* vb = t.value(ib).data().data();
    T* ga = t.requires_grad(ia) ? t.accumulate(ia).data().data() : nullptr;
    T* gb = t.requires_grad(ib) ? t.accumulate(ib).data().data() : nullptr;
    for (std::size_t i = 0; i < nb; ++i) {
      MapC<T> gi(g + i * m * n, m, n);
      if (ga) MapM<T>(ga + i * m * k, m, k).noalias() += gi * MapC<T>(vb + i * k * n, k, n).transpose();
      if (gb) MapM<T>(gb + i * k * n, k, n).noalias() += MapC<T>(va + i * m * k, m, k).transpose() * gi;
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  const auto& s = a.shape();
  if (s.size() != 2 && s.size() != 3) bad_shape("transpose", s, "expected rank 2 or 3");
  const std::size_t nb = s.size() == 3 ? s[0] : 1;
  const std::size_t r = s[s.size() - 2], c = s.back();
  Shape os = s;
  std::swap(os[os.size() - 1], os[os.size() - 2]);
  Tensor<T> out(os);
  const auto& v = a.value();
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = v[b * r * c + i * c + j];
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& ga = t.accumulate(ia);
    for (std::size_t b = 0; b < nb; ++b)
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[b * r * c + i * c + j] += g[b * r * c + j * r + i];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  if (numel(shape) != a.value().size()) mismatch("reshape", a.shape(), shape);
  Tensor<T> out(std::move(shape), a.value().vec());
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape<T>& t, std::size_t self) {
    auto& ga = t.accumulate(ia);
    const auto& g = t.upstream(self);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same_tape("add", a, b);
  if (a.shape() != b.shape()) mismatch("add", a.shape(), b.shape());
  Tensor<T> out = a.value();
  add_into(out, b.value());
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    if (t.requires_grad(ia)) add_into(t.accumulate(ia), g);
    if (t.requires_grad(ib)) add_into(t.accumulate(ib), g);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_same_tape("sub", a, b);
  if (a.shape() != b.shape()) mismatch("sub", a.shape(), b.shape());
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    if (t.requires_grad(ia)) add_into(t.accumulate(ia), g);
    if (t.requires_grad(ib)) {
      auto& gb = t.accumulate(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_same_tape("mul", a, b);
  if (a.shape() != b.shape()) mismatch("mul", a.shape(), b.shape());
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {ia, ib}, [ia, ib](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    if (t.requires_grad(ia)) {
      auto& ga = t.accumulate(ia);
      const auto& vb = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.accumulate(ib);
      const auto& va = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
    }
  });
}

template <typename T>
Var<T> add_bias(const Var<T>& a, const Var<T>& bias) {
  check_same_tape("add_bias", a, bias);
  const auto& as = a.shape();
  const auto& bs = bias.shape();
  if (as.empty() || bs.size() != 1 || bs[0] != as.back()) mismatch("add_bias", as, bs);
  const std::size_t n = bs[0];
  const std::size_t rows = a.value().size() / std::max<std::size_t>(n, 1);
  Tensor<T> out = a.value();
  const auto& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bv[j];
  const auto ia = a.id(), ib = bias.id();
  return a.tape().record(std::move(out), {ia, ib}, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    if (t.requires_grad(ia)) add_into(t.accumulate(ia), g);
    if (t.requires_grad(ib)) {
      auto& gb = t.accumulate(ib);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& x : out.data()) x *= s;
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, s](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& ga = t.accumulate(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

template <typename T>
Var<T> softmax(const Var<T>& a) {
  const auto& s = a.shape();
  if (s.empty()) bad_shape("softmax", s, "expected rank >= 1");
  const std::size_t n = s.back();
  const std::size_t rows = n ? a.value().size() / n : 0;
  Tensor<T> out(s);
  const auto& v = a.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = v.data().data() + r * n;
    T* y = out.data().data() + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x[j]);
    T z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::isinf(x[j]) && x[j] < 0 ? T{0} : std::exp(x[j] - mx);
      z += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, n, rows](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    const auto& y = t.value(self);
    auto& ga = t.accumulate(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta) {
  check_same_tape("layer_norm", x, gamma);
  check_same_tape("layer_norm", x, beta);
  const auto& s = x.shape();
  if (s.empty()) bad_shape("layer_norm", s, "expected rank >= 1");
  const std::size_t n = s.back();
  if (gamma.shape() != Shape{n}) mismatch("layer_norm", s, gamma.shape());
  if (beta.shape() != Shape{n}) mismatch("layer_norm", s, beta.shape());
  const std::size_t rows = n ? x.value().size() / n : 0;
  const T eps = static_cast<T>(kLayerNormEps);

  Tensor<T> out(s);
  std::vector<T> xhat(rows * n), rstd(rows);
  const auto& xv = x.value();
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data().data() + r * n;
    T mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += xr[j];
    mean /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(n);
    rstd[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (xr[j] - mean) * rstd[r];
      out[r * n + j] = xhat[r * n + j] * gv[j] + bv[j];
    }
  }
  const auto ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(
      std::move(out), {ix, ig, ib},
      [ix, ig, ib, n, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Tape<T>& t, std::size_t self) {
        const auto& g = t.upstream(self);
        if (t.requires_grad(ig)) {
          auto& gg = t.accumulate(ig);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) gg[j] += g[r * n + j] * xhat[r * n + j];
        }
        if (t.requires_grad(ib)) {
          auto& gb = t.accumulate(ib);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
        }
        if (t.requires_grad(ix)) {
          const auto& gv = t.value(ig);
          auto& gx = t.accumulate(ix);
          for (std::size_t r = 0; r < rows; ++r) {
            T m1 = 0, m2 = 0;
            for (std::size_t j = 0; j < n; ++j) {
              const T d = g[r * n + j] * gv[j];
              m1 += d;
              m2 += d * xhat[r * n + j];
            }
            m1 /= static_cast<T>(n);
            m2 /= static_cast<T>(n);
            for (std::size_t j = 0; j < n; ++j) {
              const T d = g[r * n + j] * gv[j];
              gx[r * n + j] += rstd[r] * (d - m1 - xhat[r * n + j] * m2);
            }
          }
        }
      });
}

template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const std::int32_t> ids) {
  const auto& s = table.shape();
  if (s.size() != 2) bad_shape("embedding", s, "table must be rank 2");
  const std::size_t vocab = s[0], d = s[1];
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  Tensor<T> out({idv.size(), d});
  const auto& tv = table.value();
  for (std::size_t i = 0; i < idv.size(); ++i) {
    if (idv[i] < 0 || static_cast<std::size_t>(idv[i]) >= vocab) {
      throw std::out_of_range("embedding: id " + std::to_string(idv[i]) + " outside table of " +
                              std::to_string(vocab) + " rows");
    }
    std::copy_n(tv.data().data() + static_cast<std::size_t>(idv[i]) * d, d, out.data().data() + i * d);
  }
  const auto it = table.id();
  return table.tape().record(std::move(out), {it}, [it, d, idv = std::move(idv)](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& gt = t.accumulate(it);
    for (std::size_t i = 0; i < idv.size(); ++i) {
      T* dst = gt.data().data() + static_cast<std::size_t>(idv[i]) * d;
      const T* src = g.data().data() + i * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::int32_t> targets) {
  const auto& s = logits.shape();
  if (s.size() != 2) bad_shape("cross_entropy", s, "logits must be rank 2");
  const std::size_t rows = s[0], v = s[1];
  if (targets.size() != rows) {
    mismatch("cross_entropy", s, Shape{targets.size()});
  }
  std::vector<std::int32_t> tg(targets.begin(), targets.end());
  Tensor<T> out({rows});
  Tensor<T> probs({rows, v});
  const auto& lv = logits.value();
  for (std::size_t r = 0; r < rows; ++r) {
    if (tg[r] >= static_cast<std::int32_t>(v)) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(tg[r]) + " >= vocab " + std::to_string(v));
    }
    const T* x = lv.data().data() + r * v;
    T* p = probs.data().data() + r * v;
    T mx = *std::max_element(x, x + v);
    T z = 0;
    for (std::size_t j = 0; j < v; ++j) {
      p[j] = std::exp(x[j] - mx);
      z += p[j];
    }
    for (std::size_t j = 0; j < v; ++j) p[j] /= z;
    out[r] = tg[r] < 0 ? T{0} : (std::log(z) + mx - x[tg[r]]);
  }
  const auto il = logits.id();
  return logits.tape().record(
      std::move(out), {il}, [il, rows, v, tg = std::move(tg), probs = std::move(probs)](Tape<T>& t, std::size_t self) {
        const auto& g = t.upstream(self);
        auto& gl = t.accumulate(il);
        for (std::size_t r = 0; r < rows; ++r) {
          if (tg[r] < 0) continue;
          const T gr = g[r];
          for (std::size_t j = 0; j < v; ++j) gl[r * v + j] += gr * probs[r * v + j];
          gl[r * v + static_cast<std::size_t>(tg[r])] -= gr;
        }
      });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) bad_shape("concat", s0, "axis " + std::to_string(axis) + " out of range");
  Shape os = s0;
  os[axis] = 0;
  for (const auto& p : parts) {
    check_same_tape("concat", parts[0], p);
    const auto& s = p.shape();
    if (s.size() != s0.size()) mismatch("concat", s0, s);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != s0[i]) mismatch("concat", s0, s);
    os[axis] += s[axis];
  }
  const AxisSplit out_split = split_at(os, axis);
  Tensor<T> out(os);
  std::vector<std::size_t> ids, lens, offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[axis];
    const auto& pv = p.value();
    for (std::size_t o = 0; o < out_split.outer; ++o)
      std::copy_n(pv.data().data() + o * len * out_split.inner, len * out_split.inner,
                  out.data().data() + (o * out_split.len + off) * out_split.inner);
    ids.push_back(p.id());
    lens.push_back(len);
    offsets.push_back(off);
    off += len;
  }
  std::vector<std::size_t> parents = ids;
  return parts[0].tape().record(std::move(out), std::move(parents), [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      auto& gp = t.accumulate(ids[k]);
      for (std::size_t o = 0; o < out_split.outer; ++o) {
        const T* src = g.data().data() + (o * out_split.len + offsets[k]) * out_split.inner;
        T* dst = gp.data().data() + o * lens[k] * out_split.inner;
        for (std::size_t i = 0; i < lens[k] * out_split.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto& s = a.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    bad_shape("slice", s,
              "range [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " + std::to_string(axis));
  }
  const AxisSplit sp = split_at(s, axis);
  Shape os = s;
  os[axis] = end - begin;
  const std::size_t len = end - begin;
  Tensor<T> out(os);
  const auto& v = a.value();
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(v.data().data() + (o * sp.len + begin) * sp.inner, len * sp.inner,
                out.data().data() + o * len * sp.inner);
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [=](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& ga = t.accumulate(ia);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      T* dst = ga.data().data() + (o * sp.len + begin) * sp.inner;
      const T* src = g.data().data() + o * len * sp.inner;
      for (std::size_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  const T k = static_cast<T>(0.044715);
  Tensor<T> out = a.value();
  for (auto& x : out.data()) {
    const T u = c * (x + k * x * x * x);
    x = T{0.5} * x * (T{1} + std::tanh(u));
  }
  const auto ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia, c, k](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    const auto& xv = t.value(ia);
    auto& ga = t.accumulate(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T x = xv[i];
      const T u = c * (x + k * x * x * x);
      const T th = std::tanh(u);
      const T du = c * (T{1} + T{3} * k * x * x);
      ga[i] += g[i] * (T{0.5} * (T{1} + th) + T{0.5} * x * (T{1} - th * th) * du);
    }
  });
}

template <typename T>
Var<T> causal_mask(const Var<T>& scores) {
  const auto& s = scores.shape();
  if (s.size() < 2 || s[s.size() - 1] != s[s.size() - 2]) bad_shape("causal_mask", s, "trailing block must be square");
  const std::size_t n = s.back();
  const std::size_t blocks = scores.value().size() / (n * n);
  Tensor<T> out = scores.value();
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) out[b * n * n + i * n + j] = -std::numeric_limits<T>::infinity();
  const auto ia = scores.id();
  return scores.tape().record(std::move(out), {ia}, [ia, n, blocks](Tape<T>& t, std::size_t self) {
    const auto& g = t.upstream(self);
    auto& ga = t.accumulate(ia);
    for (std::size_t b = 0; b < blocks; ++b)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) ga[b * n * n + i * n + j] += g[b * n * n + i * n + j];
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T acc = 0;
  for (auto x : a.value().data()) acc += x;
  const auto ia = a.id();
  return a.tape().record(Tensor<T>::scalar(acc), {ia}, [ia](Tape<T>& t, std::size_t self) {
    const T g = t.upstream(self)[0];
    auto& ga = t.accumulate(ia);
    for (auto& x : ga.data()) x += g;
  });
}

#define PHANTOM_INSTANTIATE_OPS(T)                                                      \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                 \
  template Var<T> bmm(const Var<T>&, const Var<T>&);                                    \
  template Var<T> transpose(const Var<T>&);                                             \
  template Var<T> reshape(const Var<T>&, Shape);                                        \
  template Var<T> add(const Var<T>&, const Var<T>&);                                    \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                    \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                    \
  template Var<T> add_bias(const Var<T>&, const Var<T>&);                               \
  template Var<T> scale(const Var<T>&, T);                                              \
  template Var<T> softmax(const Var<T>&);                                               \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&);              \
  template Var<T> embedding(const Var<T>&, std::span<const std::int32_t>);              \
  template Var<T> cross_entropy(const Var<T>&, std::span<const std::int32_t>);          \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                      \
  template Var<T> slice(const Var<T>&, std::size_t, std::size_t, std::size_t);          \
  template Var<T> gelu(const Var<T>&);                                                  \
  template Var<T> causal_mask(const Var<T>&);                                           \
  template Var<T> sum(const Var<T>&);

PHANTOM_INSTANTIATE_OPS(float)
PHANTOM_INSTANTIATE_OPS(double)

#undef PHANTOM_INSTANTIATE_OPS

}  // namespace phantom::nd
