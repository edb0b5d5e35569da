#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "mvsr/nn/tensor.hpp"

namespace mvsr::nn {

/// Handle into a tape. Valid only for the tape that produced it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape at tensor granularity. Nodes are recorded in program
/// order; backward() walks them in reverse, so creation order is the
/// topological order. Reductions accumulate in double regardless of T.
template <typename T>
class TapeT {
 public:
  using Tensor = TensorT<T>;

  // ---- recording ----------------------------------------------------------

  Var leaf(Tensor value, bool requires_grad) {
    return push(std::move(value), requires_grad, nullptr);
  }
  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }

  const Tensor& val(Var v) const { return nodes_[idx(v)].value; }
  bool needs_grad(Var v) const { return nodes_[idx(v)].wants_grad; }

  /// Gradient of the last backward() target w.r.t. v. Empty tensor if the
  /// node was never reached.
  const Tensor& grad(Var v) const { return nodes_[idx(v)].grad; }

  size_t size() const { return nodes_.size(); }

  /// Watermark for rewind(): drops every node recorded after it, freeing
  /// scratch sub-graphs. Handles above the watermark become invalid.
  size_t mark() const { return nodes_.size(); }
  void rewind(size_t m) {
    check(m <= nodes_.size(), "tape: rewind past end");
    nodes_.resize(m);
  }

  void backward(Var loss) {
    Node& top = nodes_[idx(loss)];
    check(top.value.numel() == 1, "backward: loss must be scalar");
    check(top.wants_grad, "backward: loss does not depend on any leaf");
    for (Node& n : nodes_) n.grad = Tensor();
    ensure_grad(loss).data[0] = T(1);
    for (size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (n.wants_grad && n.back && !n.grad.data.empty()) n.back(*this, n.grad);
    }
  }

  // ---- elementwise --------------------------------------------------------

  Var add(Var a, Var b) {
    return ew2(a, b, [](T x, T y) { return x + y; },
               [](T, T, T g, T& dx, T& dy) { dx += g; dy += g; });
  }
  Var sub(Var a, Var b) {
    return ew2(a, b, [](T x, T y) { return x - y; },
               [](T, T, T g, T& dx, T& dy) { dx += g; dy -= g; });
  }
  Var mul(Var a, Var b) {
    return ew2(a, b, [](T x, T y) { return x * y; },
               [](T x, T y, T g, T& dx, T& dy) { dx += g * y; dy += g * x; });
  }
  /// Elementwise quotient. Callers must keep the denominator bounded away
  /// from zero wherever gradients flow.
  Var div(Var a, Var b) {
    return ew2(a, b, [](T x, T y) { return x / y; },
               [](T x, T y, T g, T& dx, T& dy) {
                 dx += g / y;
                 dy -= g * x / (y * y);
               });
  }

  /// y = s * x + c with scalar coefficients.
  Var affine(Var a, T s, T c) {
    Tensor out = val(a);
    for (T& v : out.data) v = s * v + c;
    return push(std::move(out), needs_grad(a), [a, s](TapeT& t, const Tensor& g) {
      if (!t.needs_grad(a)) return;
      Tensor& da = t.ensure_grad(a);
      for (size_t i = 0; i < g.data.size(); ++i) da.data[i] += s * g.data[i];
    });
  }

  /// Elementwise product with a constant tensor of the same shape.
  Var mul_const(Var a, Tensor c) {
    const Tensor& x = val(a);
    check(x.same_shape(c), "mul_const: shape mismatch");
    Tensor out = x;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= c.data[i];
    auto cc = std::make_shared<Tensor>(std::move(c));
    return push(std::move(out), needs_grad(a), [a, cc](TapeT& t, const Tensor& g) {
      if (!t.needs_grad(a)) return;
      Tensor& da = t.ensure_grad(a);
      for (size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i] * cc->data[i];
    });
  }

  /// y[c, ...] = x[c, ...] * s[c] + b[c] with s, b of shape {C}. Stands in
  /// for batch norm: per-channel learnable scale and bias, no statistics.
  Var channel_affine(Var x, Var s, Var b) {
    const Tensor& xv = val(x);
    const Tensor& sv = val(s);
    const Tensor& bv = val(b);
    const int c = xv.dim(0);
    check(sv.rank() == 1 && sv.dim(0) == c && bv.rank() == 1 && bv.dim(0) == c,
          "channel_affine: scale/bias shape");
    const size_t rest = xv.numel() / c;
    Tensor out(xv.shape);
    for (int ch = 0; ch < c; ++ch) {
      const T sc = sv.data[ch], bc = bv.data[ch];
      const T* src = xv.data.data() + ch * rest;
      T* dst = out.data.data() + ch * rest;
      for (size_t i = 0; i < rest; ++i) dst[i] = sc * src[i] + bc;
    }
    bool req = needs_grad(x) || needs_grad(s) || needs_grad(b);
    return push(std::move(out), req, [x, s, b, c, rest](TapeT& t, const Tensor& g) {
      const Tensor& xv = t.val(x);
      const Tensor& sv = t.val(s);
      if (t.needs_grad(x)) {
        Tensor& dx = t.ensure_grad(x);
        for (int ch = 0; ch < c; ++ch) {
          const T sc = sv.data[ch];
          const T* gp = g.data.data() + ch * rest;
          T* dp = dx.data.data() + ch * rest;
          for (size_t i = 0; i < rest; ++i) dp[i] += sc * gp[i];
        }
      }
      if (t.needs_grad(s)) {
        Tensor& ds = t.ensure_grad(s);
        for (int ch = 0; ch < c; ++ch) {
          double acc = 0;
          const T* gp = g.data.data() + ch * rest;
          const T* xp = xv.data.data() + ch * rest;
          for (size_t i = 0; i < rest; ++i) acc += double(gp[i]) * double(xp[i]);
          ds.data[ch] += T(acc);
        }
      }
      if (t.needs_grad(b)) {
        Tensor& db = t.ensure_grad(b);
        for (int ch = 0; ch < c; ++ch) {
          double acc = 0;
          const T* gp = g.data.data() + ch * rest;
          for (size_t i = 0; i < rest; ++i) acc += double(gp[i]);
          db.data[ch] += T(acc);
        }
      }
    });
  }

  Var relu(Var a) {
    return ew1(a, [](T x) { return x > T(0) ? x : T(0); },
               [](T x) { return x > T(0) ? T(1) : T(0); });
  }
  Var tanh_(Var a) {
    return ew1(a, [](T x) { return std::tanh(x); },
               [](T x) { T y = std::tanh(x); return T(1) - y * y; });
  }
  Var sigmoid_(Var a) {
    return ew1(a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
               [](T x) {
                 T y = T(1) / (T(1) + std::exp(-x));
                 return y * (T(1) - y);
               });
  }
  Var cube(Var a) {
    return ew1(a, [](T x) { return x * x * x; }, [](T x) { return T(3) * x * x; });
  }
  Var exp_(Var a) {
    return ew1(a, [](T x) { return std::exp(x); }, [](T x) { return std::exp(x); });
  }
  /// Clamp with zero gradient outside [lo, hi].
  Var clamp(Var a, T lo, T hi) {
    return ew1(a, [lo, hi](T x) { return x < lo ? lo : (x > hi ? hi : x); },
               [lo, hi](T x) { return (x >= lo && x <= hi) ? T(1) : T(0); });
  }

  // ---- dense linear algebra ----------------------------------------------

  /// W {m, n} times x {n} -> {m}.
  Var matvec(Var w, Var x) {
    const Tensor& wv = val(w);
    const Tensor& xv = val(x);
    check(wv.rank() == 2 && xv.rank() == 1 && wv.dim(1) == xv.dim(0),
          "matvec: shape mismatch");
    const int m = wv.dim(0), n = wv.dim(1);
    Tensor out({m});
    for (int i = 0; i < m; ++i) {
      double acc = 0;
      const T* row = wv.data.data() + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) acc += double(row[j]) * double(xv.data[j]);
      out.data[i] = T(acc);
    }
    return push(std::move(out), needs_grad(w) || needs_grad(x),
                [w, x, m, n](TapeT& t, const Tensor& g) {
                  const Tensor& wv = t.val(w);
                  const Tensor& xv = t.val(x);
                  if (t.needs_grad(w)) {
                    Tensor& dw = t.ensure_grad(w);
                    for (int i = 0; i < m; ++i)
                      for (int j = 0; j < n; ++j)
                        dw.data[static_cast<size_t>(i) * n + j] += g.data[i] * xv.data[j];
                  }
                  if (t.needs_grad(x)) {
                    Tensor& dx = t.ensure_grad(x);
                    for (int i = 0; i < m; ++i)
                      for (int j = 0; j < n; ++j)
                        dx.data[j] += g.data[i] * wv.data[static_cast<size_t>(i) * n + j];
                  }
                });
  }

  // ---- convolutions -------------------------------------------------------

  /// x {Ci, H, W}, w {Co, Ci, kh, kw}, optional bias {Co} (pass Var{} for
  /// none); zero padding, floor output size: Ho = (H + 2p - kh) / s + 1.
  Var conv2d(Var x, Var w, Var b, int stride, int pad) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(w);
    check(xv.rank() == 3 && wv.rank() == 4 && wv.dim(1) == xv.dim(0),
          "conv2d: shape mismatch");
    const int h = xv.dim(1), wdt = xv.dim(2);
    const int co = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (wdt + 2 * pad - kw) / stride + 1;
    check(ho > 0 && wo > 0, "conv2d: empty output");
    Tensor out({co, ho, wo});
    if (b.valid()) {
      const Tensor& bv = val(b);
      check(bv.rank() == 1 && bv.dim(0) == co, "conv2d: bias shape");
      for (int c = 0; c < co; ++c)
        std::fill_n(out.data.begin() + static_cast<size_t>(c) * ho * wo,
                    static_cast<size_t>(ho) * wo, bv.data[c]);
    }
    conv_forward(xv, wv, out, stride, pad);
    bool req = needs_grad(x) || needs_grad(w) || (b.valid() && needs_grad(b));
    return push(std::move(out), req,
                [x, w, b, stride, pad](TapeT& t, const Tensor& g) {
                  const Tensor& xv = t.val(x);
                  const Tensor& wv = t.val(w);
                  if (t.needs_grad(x))
                    conv_backward_input(t.ensure_grad(x), wv, g, stride, pad);
                  if (t.needs_grad(w))
                    conv_backward_weight(xv, t.ensure_grad(w), g, stride, pad);
                  if (b.valid() && t.needs_grad(b)) bias_backward(t.ensure_grad(b), g);
                });
  }

  /// Transposed conv, kernel 4, stride 2, padding 1: {Ci, H, W} -> {Co, 2H, 2W}.
  /// Weight layout {Ci, Co, 4, 4}.
  Var deconv2d_k4s2(Var x, Var w, Var b) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(w);
    check(xv.rank() == 3 && wv.rank() == 4 && wv.dim(0) == xv.dim(0) &&
              wv.dim(2) == 4 && wv.dim(3) == 4,
          "deconv2d: shape mismatch");
    const int co = wv.dim(1);
    const int ho = 2 * xv.dim(1), wo = 2 * xv.dim(2);
    Tensor out({co, ho, wo});
    if (b.valid()) {
      const Tensor& bv = val(b);
      check(bv.rank() == 1 && bv.dim(0) == co, "deconv2d: bias shape");
      for (int c = 0; c < co; ++c)
        std::fill_n(out.data.begin() + static_cast<size_t>(c) * ho * wo,
                    static_cast<size_t>(ho) * wo, bv.data[c]);
    }
    deconv_forward(xv, wv, out);
    bool req = needs_grad(x) || needs_grad(w) || (b.valid() && needs_grad(b));
    return push(std::move(out), req, [x, w, b](TapeT& t, const Tensor& g) {
      const Tensor& xv = t.val(x);
      const Tensor& wv = t.val(w);
      if (t.needs_grad(x)) deconv_backward_input(t.ensure_grad(x), wv, g);
      if (t.needs_grad(w)) deconv_backward_weight(xv, t.ensure_grad(w), g);
      if (b.valid() && t.needs_grad(b)) bias_backward(t.ensure_grad(b), g);
    });
  }

  // ---- shape / resampling -------------------------------------------------

  /// Free reshape (same element order).
  Var reshape(Var x, std::vector<int> shape) {
    const Tensor& xv = val(x);
    check(Tensor::numel_of(shape) == xv.numel(), "reshape: numel mismatch");
    Tensor out(shape, xv.data);
    return push(std::move(out), needs_grad(x), [x](TapeT& t, const Tensor& g) {
      if (!t.needs_grad(x)) return;
      Tensor& dx = t.ensure_grad(x);
      for (size_t i = 0; i < g.data.size(); ++i) dx.data[i] += g.data[i];
    });
  }

  /// Concatenate along axis 0; trailing extents must match.
  Var concat0(const std::vector<Var>& xs) {
    check(!xs.empty(), "concat0: empty input");
    const Tensor& first = val(xs[0]);
    std::vector<int> shape = first.shape;
    const size_t rest = first.numel() / first.dim(0);
    int c_total = 0;
    for (Var v : xs) {
      const Tensor& tv = val(v);
      check(tv.rank() == first.rank(), "concat0: rank mismatch");
      check(tv.numel() / tv.dim(0) == rest, "concat0: trailing shape mismatch");
      c_total += tv.dim(0);
    }
    shape[0] = c_total;
    Tensor out(shape);
    size_t off = 0;
    bool req = false;
    for (Var v : xs) {
      const Tensor& tv = val(v);
      std::copy(tv.data.begin(), tv.data.end(), out.data.begin() + off);
      off += tv.numel();
      req = req || needs_grad(v);
    }
    auto parts = std::make_shared<std::vector<Var>>(xs);
    return push(std::move(out), req, [parts](TapeT& t, const Tensor& g) {
      size_t off = 0;
      for (Var v : *parts) {
        size_t n = t.val(v).numel();
        if (t.needs_grad(v)) {
          Tensor& dv = t.ensure_grad(v);
          for (size_t i = 0; i < n; ++i) dv.data[i] += g.data[off + i];
        }
        off += n;
      }
    });
  }

  /// Slice [c0, c1) along axis 0.
  Var slice0(Var x, int c0, int c1) {
    const Tensor& xv = val(x);
    check(0 <= c0 && c0 < c1 && c1 <= xv.dim(0), "slice0: bad range");
    std::vector<int> shape = xv.shape;
    shape[0] = c1 - c0;
    const size_t rest = xv.numel() / xv.dim(0);
    Tensor out(shape);
    std::copy_n(xv.data.begin() + c0 * rest, out.numel(), out.data.begin());
    return push(std::move(out), needs_grad(x),
                [x, c0, rest](TapeT& t, const Tensor& g) {
                  if (!t.needs_grad(x)) return;
                  Tensor& dx = t.ensure_grad(x);
                  size_t off = c0 * rest;
                  for (size_t i = 0; i < g.data.size(); ++i) dx.data[off + i] += g.data[i];
                });
  }

  /// 2x2 area downsample of {C, H, W}; H and W must be even.
  Var area_down2(Var x) {
    const Tensor& xv = val(x);
    check(xv.rank() == 3 && xv.dim(1) % 2 == 0 && xv.dim(2) % 2 == 0,
          "area_down2: need even {C,H,W}");
    const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    Tensor out({c, h / 2, w / 2});
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h / 2; ++y)
        for (int x2 = 0; x2 < w / 2; ++x2)
          out.at3(ch, y, x2) =
              T(0.25) *
              (xv.at3(ch, 2 * y, 2 * x2) + xv.at3(ch, 2 * y, 2 * x2 + 1) +
               xv.at3(ch, 2 * y + 1, 2 * x2) + xv.at3(ch, 2 * y + 1, 2 * x2 + 1));
    return push(std::move(out), needs_grad(x), [x](TapeT& t, const Tensor& g) {
      if (!t.needs_grad(x)) return;
      Tensor& dx = t.ensure_grad(x);
      const int c = g.dim(0), ho = g.dim(1), wo = g.dim(2);
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < ho; ++y)
          for (int x2 = 0; x2 < wo; ++x2) {
            T q = T(0.25) * g.at3(ch, y, x2);
            dx.at3(ch, 2 * y, 2 * x2) += q;
            dx.at3(ch, 2 * y, 2 * x2 + 1) += q;
            dx.at3(ch, 2 * y + 1, 2 * x2) += q;
            dx.at3(ch, 2 * y + 1, 2 * x2 + 1) += q;
          }
    });
  }

  /// Bilinear resize of {C, H, W} to {C, ho, wo}. Output pixel x samples
  /// input (x + 0.5) * W/wo - 0.5, clamped (edge replication).
  Var resize_bilinear(Var x, int ho, int wo) {
    const Tensor& xv = val(x);
    check(xv.rank() == 3, "resize_bilinear: need {C,H,W}");
    const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    auto taps = std::make_shared<ResizeTaps>(make_taps(h, ho), make_taps(w, wo));
    Tensor out({c, ho, wo});
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < ho; ++y) {
        const Tap& ty = taps->y[y];
        for (int xo = 0; xo < wo; ++xo) {
          const Tap& tx = taps->x[xo];
          out.at3(ch, y, xo) =
              T(ty.w0 * (tx.w0 * xv.at3(ch, ty.i0, tx.i0) + tx.w1 * xv.at3(ch, ty.i0, tx.i1)) +
                ty.w1 * (tx.w0 * xv.at3(ch, ty.i1, tx.i0) + tx.w1 * xv.at3(ch, ty.i1, tx.i1)));
        }
      }
    return push(std::move(out), needs_grad(x), [x, taps](TapeT& t, const Tensor& g) {
      if (!t.needs_grad(x)) return;
      Tensor& dx = t.ensure_grad(x);
      const int c = g.dim(0), ho = g.dim(1), wo = g.dim(2);
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < ho; ++y) {
          const Tap& ty = taps->y[y];
          for (int xo = 0; xo < wo; ++xo) {
            const Tap& tx = taps->x[xo];
            T gv = g.at3(ch, y, xo);
            dx.at3(ch, ty.i0, tx.i0) += T(ty.w0 * tx.w0) * gv;
            dx.at3(ch, ty.i0, tx.i1) += T(ty.w0 * tx.w1) * gv;
            dx.at3(ch, ty.i1, tx.i0) += T(ty.w1 * tx.w0) * gv;
            dx.at3(ch, ty.i1, tx.i1) += T(ty.w1 * tx.w1) * gv;
          }
        }
    });
  }

  /// Bilinear gather at P continuous positions (pixel-index coordinates) from
  /// a {C, H, W} map, with edge replication. Invalid positions yield zeros
  /// and carry no gradient. Output {C, P}.
  Var gather_bilinear(Var map, const std::vector<double>& px,
                      const std::vector<double>& py,
                      const std::vector<uint8_t>& valid) {
    const Tensor& mv = val(map);
    check(mv.rank() == 3, "gather_bilinear: need {C,H,W}");
    check(px.size() == py.size() && px.size() == valid.size(),
          "gather_bilinear: position arrays disagree");
    const int c = mv.dim(0), h = mv.dim(1), w = mv.dim(2);
    const int p = static_cast<int>(px.size());
    check(p > 0, "gather_bilinear: no positions");
    auto taps = std::make_shared<std::vector<Tap2>>(p);
    for (int i = 0; i < p; ++i) {
      Tap2& tp = (*taps)[i];
      if (!valid[i]) continue;
      tp.valid = true;
      tp.x = make_tap(px[i], w);
      tp.y = make_tap(py[i], h);
    }
    Tensor out({c, p});
    for (int ch = 0; ch < c; ++ch) {
      T* dst = out.data.data() + static_cast<size_t>(ch) * p;
      for (int i = 0; i < p; ++i) {
        const Tap2& tp = (*taps)[i];
        if (!tp.valid) { dst[i] = T(0); continue; }
        dst[i] = T(
            tp.y.w0 * (tp.x.w0 * mv.at3(ch, tp.y.i0, tp.x.i0) +
                       tp.x.w1 * mv.at3(ch, tp.y.i0, tp.x.i1)) +
            tp.y.w1 * (tp.x.w0 * mv.at3(ch, tp.y.i1, tp.x.i0) +
                       tp.x.w1 * mv.at3(ch, tp.y.i1, tp.x.i1)));
      }
    }
    return push(std::move(out), needs_grad(map),
                [map, taps](TapeT& t, const Tensor& g) {
                  if (!t.needs_grad(map)) return;
                  Tensor& dm = t.ensure_grad(map);
                  const int c = g.dim(0), p = g.dim(1);
                  for (int ch = 0; ch < c; ++ch) {
                    const T* gp = g.data.data() + static_cast<size_t>(ch) * p;
                    for (int i = 0; i < p; ++i) {
                      const Tap2& tp = (*taps)[i];
                      if (!tp.valid) continue;
                      T gv = gp[i];
                      dm.at3(ch, tp.y.i0, tp.x.i0) += T(tp.y.w0 * tp.x.w0) * gv;
                      dm.at3(ch, tp.y.i0, tp.x.i1) += T(tp.y.w0 * tp.x.w1) * gv;
                      dm.at3(ch, tp.y.i1, tp.x.i0) += T(tp.y.w1 * tp.x.w0) * gv;
                      dm.at3(ch, tp.y.i1, tp.x.i1) += T(tp.y.w1 * tp.x.w1) * gv;
                    }
                  }
                });
  }

  // ---- per-column channel reductions (axis 0, trailing axes flattened) ----

  /// L2-normalize per column: y = x / sqrt(|x|^2 + eps).
  Var l2norm0(Var x, T eps = T(1e-12)) {
    const Tensor& xv = val(x);
    const int c = xv.dim(0);
    const size_t rest = xv.numel() / c;
    auto norms = std::make_shared<std::vector<T>>(rest);
    Tensor out(xv.shape);
    for (size_t i = 0; i < rest; ++i) {
      double s = 0;
      for (int ch = 0; ch < c; ++ch) {
        double v = xv.data[ch * rest + i];
        s += v * v;
      }
      T n = T(std::sqrt(s + double(eps)));
      (*norms)[i] = n;
      for (int ch = 0; ch < c; ++ch)
        out.data[ch * rest + i] = xv.data[ch * rest + i] / n;
    }
    return push(std::move(out), needs_grad(x),
                [x, norms, c, rest](TapeT& t, const Tensor& g) {
                  if (!t.needs_grad(x)) return;
                  const Tensor& xv = t.val(x);
                  Tensor& dx = t.ensure_grad(x);
                  for (size_t i = 0; i < rest; ++i) {
                    T n = (*norms)[i];
                    double dot = 0;
                    for (int ch = 0; ch < c; ++ch)
                      dot += double(g.data[ch * rest + i]) * double(xv.data[ch * rest + i]);
                    T n3 = n * n * n;
                    for (int ch = 0; ch < c; ++ch)
                      dx.data[ch * rest + i] +=
                          g.data[ch * rest + i] / n - xv.data[ch * rest + i] * T(dot) / n3;
                  }
                });
  }

  /// Sum along axis 0: {C, ...} -> {1, ...}.
  Var sum0(Var x) {
    const Tensor& xv = val(x);
    const int c = xv.dim(0);
    const size_t rest = xv.numel() / c;
    std::vector<int> shape = xv.shape;
    shape[0] = 1;
    Tensor out(shape);
    for (size_t i = 0; i < rest; ++i) {
      double s = 0;
      for (int ch = 0; ch < c; ++ch) s += double(xv.data[ch * rest + i]);
      out.data[i] = T(s);
    }
    return push(std::move(out), needs_grad(x),
                [x, c, rest](TapeT& t, const Tensor& g) {
                  if (!t.needs_grad(x)) return;
                  Tensor& dx = t.ensure_grad(x);
                  for (size_t i = 0; i < rest; ++i)
                    for (int ch = 0; ch < c; ++ch) dx.data[ch * rest + i] += g.data[i];
                });
  }

  /// Softmax along axis 0 per column.
  Var softmax0(Var x) {
    const Tensor& xv = val(x);
    const int c = xv.dim(0);
    const size_t rest = xv.numel() / c;
    Tensor out(xv.shape);
    for (size_t i = 0; i < rest; ++i) {
      double m = -1e300;
      for (int ch = 0; ch < c; ++ch) m = std::max(m, double(xv.data[ch * rest + i]));
      double z = 0;
      for (int ch = 0; ch < c; ++ch) {
        double e = std::exp(double(xv.data[ch * rest + i]) - m);
        out.data[ch * rest + i] = T(e);
        z += e;
      }
      for (int ch = 0; ch < c; ++ch)
        out.data[ch * rest + i] = T(double(out.data[ch * rest + i]) / z);
    }
    Var y = push(std::move(out), needs_grad(x), nullptr);
    if (needs_grad(x)) {
      nodes_.back().back = [x, y, c, rest](TapeT& t, const Tensor& g) {
        const Tensor& s = t.val(y);
        Tensor& dx = t.ensure_grad(x);
        for (size_t i = 0; i < rest; ++i) {
          double dot = 0;
          for (int ch = 0; ch < c; ++ch)
            dot += double(g.data[ch * rest + i]) * double(s.data[ch * rest + i]);
          for (int ch = 0; ch < c; ++ch)
            dx.data[ch * rest + i] +=
                s.data[ch * rest + i] * (g.data[ch * rest + i] - T(dot));
        }
      };
    }
    return y;
  }

  /// log sum exp along axis 0 restricted to masked entries: {C, ...} -> {1, ...}.
  /// mask matches x's shape (0/1). Columns with an empty mask yield 0 and
  /// carry no gradient; callers must exclude them downstream.
  Var logsumexp0_masked(Var x, const std::vector<uint8_t>& mask) {
    const Tensor& xv = val(x);
    check(mask.size() == xv.numel(), "logsumexp0_masked: mask size");
    const int c = xv.dim(0);
    const size_t rest = xv.numel() / c;
    std::vector<int> shape = xv.shape;
    shape[0] = 1;
    Tensor out(shape);
    auto mk = std::make_shared<std::vector<uint8_t>>(mask);
    for (size_t i = 0; i < rest; ++i) {
      double m = -1e300;
      bool any = false;
      for (int ch = 0; ch < c; ++ch)
        if (mask[ch * rest + i]) {
          m = std::max(m, double(xv.data[ch * rest + i]));
          any = true;
        }
      if (!any) { out.data[i] = T(0); continue; }
      double z = 0;
      for (int ch = 0; ch < c; ++ch)
        if (mask[ch * rest + i]) z += std::exp(double(xv.data[ch * rest + i]) - m);
      out.data[i] = T(m + std::log(z));
    }
    Var y = push(std::move(out), needs_grad(x), nullptr);
    if (needs_grad(x)) {
      nodes_.back().back = [x, y, c, rest, mk](TapeT& t, const Tensor& g) {
        const Tensor& xv = t.val(x);
        const Tensor& lv = t.val(y);
        Tensor& dx = t.ensure_grad(x);
        for (size_t i = 0; i < rest; ++i)
          for (int ch = 0; ch < c; ++ch) {
            if (!(*mk)[ch * rest + i]) continue;
            dx.data[ch * rest + i] +=
                g.data[i] *
                T(std::exp(double(xv.data[ch * rest + i]) - double(lv.data[i])));
          }
      };
    }
    return y;
  }

  // ---- scalar reductions --------------------------------------------------

  Var sum_all(Var x) {
    const Tensor& xv = val(x);
    double s = 0;
    for (T v : xv.data) s += double(v);
    return push(Tensor::scalar(T(s)), needs_grad(x),
                [x](TapeT& t, const Tensor& g) {
                  if (!t.needs_grad(x)) return;
                  Tensor& dx = t.ensure_grad(x);
                  for (T& v : dx.data) v += g.data[0];
                });
  }

  /// Mean over masked entries; mask matches x's shape. Empty mask yields 0.
  Var mean_masked(Var x, const std::vector<uint8_t>& mask) {
    const Tensor& xv = val(x);
    check(mask.size() == xv.numel(), "mean_masked: mask size");
    double s = 0;
    size_t cnt = 0;
    for (size_t i = 0; i < xv.numel(); ++i)
      if (mask[i]) { s += double(xv.data[i]); ++cnt; }
    auto mk = std::make_shared<std::vector<uint8_t>>(mask);
    T v = cnt ? T(s / double(cnt)) : T(0);
    return push(Tensor::scalar(v), needs_grad(x),
                [x, mk, cnt](TapeT& t, const Tensor& g) {
                  if (!t.needs_grad(x) || cnt == 0) return;
                  Tensor& dx = t.ensure_grad(x);
                  T w = g.data[0] / T(double(cnt));
                  for (size_t i = 0; i < dx.data.size(); ++i)
                    if ((*mk)[i]) dx.data[i] += w;
                });
  }

  /// Smooth-L1 against a constant target, averaged over masked entries.
  /// Per entry: 0.5 r^2 / delta for |r| <= delta, else |r| - 0.5 delta.
  Var smooth_l1_masked(Var x, Tensor target, const std::vector<uint8_t>& mask,
                       T delta = T(1)) {
    const Tensor& xv = val(x);
    check(xv.same_shape(target), "smooth_l1_masked: target shape");
    check(mask.size() == xv.numel(), "smooth_l1_masked: mask size");
    double s = 0;
    size_t cnt = 0;
    for (size_t i = 0; i < xv.numel(); ++i) {
      if (!mask[i]) continue;
      double r = double(xv.data[i]) - double(target.data[i]);
      double a = std::abs(r);
      s += a <= double(delta) ? 0.5 * r * r / double(delta) : a - 0.5 * double(delta);
      ++cnt;
    }
    auto tgt = std::make_shared<Tensor>(std::move(target));
    auto mk = std::make_shared<std::vector<uint8_t>>(mask);
    T v = cnt ? T(s / double(cnt)) : T(0);
    return push(Tensor::scalar(v), needs_grad(x),
                [x, tgt, mk, cnt, delta](TapeT& t, const Tensor& g) {
                  if (!t.needs_grad(x) || cnt == 0) return;
                  const Tensor& xv = t.val(x);
                  Tensor& dx = t.ensure_grad(x);
                  T w = g.data[0] / T(double(cnt));
                  for (size_t i = 0; i < dx.data.size(); ++i) {
                    if (!(*mk)[i]) continue;
                    T r = xv.data[i] - tgt->data[i];
                    T d = std::abs(r) <= delta ? r / delta : (r > T(0) ? T(1) : T(-1));
                    dx.data[i] += w * d;
                  }
                });
  }

  Tensor& ensure_grad(Var v) {
    Node& n = nodes_[idx(v)];
    if (n.grad.data.empty()) n.grad = Tensor(n.value.shape);
    return n.grad;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool wants_grad = false;
    std::function<void(TapeT&, const Tensor&)> back;
  };

  struct Tap {
    int i0 = 0, i1 = 0;
    double w0 = 1, w1 = 0;
  };
  struct Tap2 {
    Tap x, y;
    bool valid = false;
  };
  struct ResizeTaps {
    std::vector<Tap> y, x;
    ResizeTaps(std::vector<Tap> yy, std::vector<Tap> xx)
        : y(std::move(yy)), x(std::move(xx)) {}
  };

  static Tap make_tap(double pos, int n) {
    Tap t;
    double p = std::min(std::max(pos, 0.0), double(n - 1));
    t.i0 = static_cast<int>(std::floor(p));
    if (t.i0 > n - 2) t.i0 = std::max(0, n - 2);
    t.i1 = std::min(t.i0 + 1, n - 1);
    double f = p - t.i0;
    t.w0 = 1.0 - f;
    t.w1 = f;
    return t;
  }

  static std::vector<Tap> make_taps(int n_in, int n_out) {
    std::vector<Tap> taps(n_out);
    double s = double(n_in) / double(n_out);
    for (int i = 0; i < n_out; ++i) taps[i] = make_tap((i + 0.5) * s - 0.5, n_in);
    return taps;
  }

  size_t idx(Var v) const {
    check(v.id >= 0 && static_cast<size_t>(v.id) < nodes_.size(), "tape: bad handle");
    return static_cast<size_t>(v.id);
  }

  Var push(Tensor value, bool wants_grad,
           std::function<void(TapeT&, const Tensor&)> back) {
    Node n;
    n.value = std::move(value);
    n.wants_grad = wants_grad;
    n.back = wants_grad ? std::move(back) : nullptr;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  template <typename F, typename DF>
  Var ew1(Var a, F f, DF df) {
    Tensor out = val(a);
    for (T& v : out.data) v = f(v);
    return push(std::move(out), needs_grad(a), [a, df](TapeT& t, const Tensor& g) {
      if (!t.needs_grad(a)) return;
      const Tensor& xv = t.val(a);
      Tensor& dx = t.ensure_grad(a);
      for (size_t i = 0; i < g.data.size(); ++i)
        dx.data[i] += g.data[i] * df(xv.data[i]);
    });
  }

  template <typename F, typename DF>
  Var ew2(Var a, Var b, F f, DF df) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    check(av.same_shape(bv), "elementwise: shape mismatch");
    Tensor out(av.shape);
    for (size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = f(av.data[i], bv.data[i]);
    return push(std::move(out), needs_grad(a) || needs_grad(b),
                [a, b, df](TapeT& t, const Tensor& g) {
                  const Tensor& av = t.val(a);
                  const Tensor& bv = t.val(b);
                  Tensor scratch;
                  Tensor* pa = t.needs_grad(a) ? &t.ensure_grad(a) : nullptr;
                  Tensor* pb = t.needs_grad(b) ? &t.ensure_grad(b) : nullptr;
                  if (!pa || !pb) {
                    scratch = Tensor(av.shape);
                    if (!pa) pa = &scratch;
                    if (!pb) pb = &scratch;
                  }
                  for (size_t i = 0; i < g.data.size(); ++i)
                    df(av.data[i], bv.data[i], g.data[i], pa->data[i], pb->data[i]);
                });
  }

  static void bias_backward(Tensor& db, const Tensor& g) {
    const int co = g.dim(0);
    const size_t plane = static_cast<size_t>(g.dim(1)) * g.dim(2);
    for (int c = 0; c < co; ++c) {
      double acc = 0;
      const T* gp = g.data.data() + c * plane;
      for (size_t i = 0; i < plane; ++i) acc += double(gp[i]);
      db.data[c] += T(acc);
    }
  }

  // ---- conv kernels (loop order keeps the inner x walk contiguous) --------

  static void conv_forward(const Tensor& x, const Tensor& w, Tensor& out,
                           int stride, int pad) {
    const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int ho = out.dim(1), wo = out.dim(2);
    for (int c = 0; c < co; ++c)
      for (int i = 0; i < ci; ++i)
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            const T wv = w.data[((static_cast<size_t>(c) * ci + i) * kh + ky) * kw + kx];
            for (int oy = 0; oy < ho; ++oy) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= h) continue;
              const T* xr = x.data.data() + (static_cast<size_t>(i) * h + iy) * wd;
              T* orow = out.data.data() + (static_cast<size_t>(c) * ho + oy) * wo;
              int lo = 0, hi = wo;
              clip_range(lo, hi, stride, kx - pad, wd);
              if (stride == 1) {
                const T* xs = xr + (kx - pad);
                for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * xs[ox];
              } else {
                for (int ox = lo; ox < hi; ++ox)
                  orow[ox] += wv * xr[ox * stride + kx - pad];
              }
            }
          }
  }

  static void conv_backward_input(Tensor& dx, const Tensor& w, const Tensor& g,
                                  int stride, int pad) {
    const int ci = dx.dim(0), h = dx.dim(1), wd = dx.dim(2);
    const int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int ho = g.dim(1), wo = g.dim(2);
    for (int c = 0; c < co; ++c)
      for (int i = 0; i < ci; ++i)
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            const T wv = w.data[((static_cast<size_t>(c) * ci + i) * kh + ky) * kw + kx];
            for (int oy = 0; oy < ho; ++oy) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= h) continue;
              T* dxr = dx.data.data() + (static_cast<size_t>(i) * h + iy) * wd;
              const T* gr = g.data.data() + (static_cast<size_t>(c) * ho + oy) * wo;
              int lo = 0, hi = wo;
              clip_range(lo, hi, stride, kx - pad, wd);
              if (stride == 1) {
                T* ds = dxr + (kx - pad);
                for (int ox = lo; ox < hi; ++ox) ds[ox] += wv * gr[ox];
              } else {
                for (int ox = lo; ox < hi; ++ox)
                  dxr[ox * stride + kx - pad] += wv * gr[ox];
              }
            }
          }
  }

  static void conv_backward_weight(const Tensor& x, Tensor& dw, const Tensor& g,
                                   int stride, int pad) {
    const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int co = dw.dim(0), kh = dw.dim(2), kw = dw.dim(3);
    const int ho = g.dim(1), wo = g.dim(2);
    for (int c = 0; c < co; ++c)
      for (int i = 0; i < ci; ++i)
        for (int ky = 0; ky < kh; ++ky)
          for (int kx = 0; kx < kw; ++kx) {
            double acc = 0;
            for (int oy = 0; oy < ho; ++oy) {
              const int iy = oy * stride + ky - pad;
              if (iy < 0 || iy >= h) continue;
              const T* xr = x.data.data() + (static_cast<size_t>(i) * h + iy) * wd;
              const T* gr = g.data.data() + (static_cast<size_t>(c) * ho + oy) * wo;
              int lo = 0, hi = wo;
              clip_range(lo, hi, stride, kx - pad, wd);
              if (stride == 1) {
                const T* xs = xr + (kx - pad);
                double row = 0;
                for (int ox = lo; ox < hi; ++ox) row += double(xs[ox]) * double(gr[ox]);
                acc += row;
              } else {
                for (int ox = lo; ox < hi; ++ox)
                  acc += double(xr[ox * stride + kx - pad]) * double(gr[ox]);
              }
            }
            dw.data[((static_cast<size_t>(c) * ci + i) * kh + ky) * kw + kx] += T(acc);
          }
  }

  static void deconv_forward(const Tensor& x, const Tensor& w, Tensor& out) {
    const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int co = w.dim(1);
    const int ho = out.dim(1), wo = out.dim(2);
    for (int i = 0; i < ci; ++i)
      for (int c = 0; c < co; ++c)
        for (int ky = 0; ky < 4; ++ky)
          for (int kx = 0; kx < 4; ++kx) {
            const T wv = w.data[((static_cast<size_t>(i) * co + c) * 4 + ky) * 4 + kx];
            for (int iy = 0; iy < h; ++iy) {
              const int oy = 2 * iy + ky - 1;
              if (oy < 0 || oy >= ho) continue;
              const T* xr = x.data.data() + (static_cast<size_t>(i) * h + iy) * wd;
              T* orow = out.data.data() + (static_cast<size_t>(c) * ho + oy) * wo;
              for (int ix = 0; ix < wd; ++ix) {
                const int ox = 2 * ix + kx - 1;
                if (ox < 0 || ox >= wo) continue;
                orow[ox] += wv * xr[ix];
              }
            }
          }
  }

  static void deconv_backward_input(Tensor& dx, const Tensor& w, const Tensor& g) {
    const int ci = dx.dim(0), h = dx.dim(1), wd = dx.dim(2);
    const int co = w.dim(1);
    const int ho = g.dim(1), wo = g.dim(2);
    for (int i = 0; i < ci; ++i)
      for (int c = 0; c < co; ++c)
        for (int ky = 0; ky < 4; ++ky)
          for (int kx = 0; kx < 4; ++kx) {
            const T wv = w.data[((static_cast<size_t>(i) * co + c) * 4 + ky) * 4 + kx];
            for (int iy = 0; iy < h; ++iy) {
              const int oy = 2 * iy + ky - 1;
              if (oy < 0 || oy >= ho) continue;
              T* dxr = dx.data.data() + (static_cast<size_t>(i) * h + iy) * wd;
              const T* gr = g.data.data() + (static_cast<size_t>(c) * ho + oy) * wo;
              for (int ix = 0; ix < wd; ++ix) {
                const int ox = 2 * ix + kx - 1;
                if (ox < 0 || ox >= wo) continue;
                dxr[ix] += wv * gr[ox];
              }
            }
          }
  }

  static void deconv_backward_weight(const Tensor& x, Tensor& dw, const Tensor& g) {
    const int ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int co = dw.dim(1);
    const int ho = g.dim(1), wo = g.dim(2);
    for (int i = 0; i < ci; ++i)
      for (int c = 0; c < co; ++c)
        for (int ky = 0; ky < 4; ++ky)
          for (int kx = 0; kx < 4; ++kx) {
            double acc = 0;
            for (int iy = 0; iy < h; ++iy) {
              const int oy = 2 * iy + ky - 1;
              if (oy < 0 || oy >= ho) continue;
              const T* xr = x.data.data() + (static_cast<size_t>(i) * h + iy) * wd;
              const T* gr = g.data.data() + (static_cast<size_t>(c) * ho + oy) * wo;
              for (int ix = 0; ix < wd; ++ix) {
                const int ox = 2 * ix + kx - 1;
                if (ox < 0 || ox >= wo) continue;
                acc += double(xr[ix]) * double(gr[ox]);
              }
            }
            dw.data[((static_cast<size_t>(i) * co + c) * 4 + ky) * 4 + kx] += T(acc);
          }
  }

  /// Restrict [lo, hi) so that ox*stride + off lies in [0, w).
  static void clip_range(int& lo, int& hi, int stride, int off, int w) {
    if (off < 0) lo = std::max(lo, (-off + stride - 1) / stride);
    int top = w - 1 - off;
    if (top < 0)
      hi = lo;
    else
      hi = std::min(hi, top / stride + 1);
  }

  std::vector<Node> nodes_;
};

using Tape = TapeT<float>;
using TapeD = TapeT<double>;

extern template class TapeT<float>;
extern template class TapeT<double>;

}  // namespace mvsr::nn
