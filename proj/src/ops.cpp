#include "mvss/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <tuple>
#include <utility>

#include "mvss/error.hpp"

namespace mvss::ops {

namespace {

using std::int64_t;

bool want_grad(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::recording_enabled()) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// Applies f(y_value, dy/dx_value) elementwise; dydx is computed at forward
// time and captured so backward never re-reads possibly-stale inputs.
template <typename Fwd>
Tensor unary_with_grad(const Tensor& x, Fwd fwd) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& xv = x.data();
  auto& ov = out.data();
  const bool need = want_grad({&x});
  std::vector<double> dydx;
  if (need) dydx.resize(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    auto [y, d] = fwd(xv[i]);
    ov[i] = y;
    if (need) dydx[i] = d;
  }
  if (need) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::active().record([xc, oc, dydx = std::move(dydx)]() mutable {
      const auto& g = oc.grad();
      auto& gx = xc.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dydx[i];
    });
  }
  return out;
}

// Validates that b broadcasts up to a (each axis equal, or 1 on b's side).
void check_broadcast(const Shape& a, const Shape& b, const char* op) {
  auto ok = [](int ea, int eb) { return ea == eb || eb == 1; };
  if (!ok(a.n, b.n) || !ok(a.c, b.c) || !ok(a.h, b.h) || !ok(a.w, b.w)) {
    throw DimensionError(std::string(op) + ": shape " + b.str() +
                         " does not broadcast to " + a.str());
  }
}

// Calls fn(ia, ib) for every position of a, with ib the broadcast-mapped
// position in b.
template <typename Fn>
void for_each_pair(const Shape& a, const Shape& b, Fn fn) {
  int64_t ia = 0;
  for (int n = 0; n < a.n; ++n) {
    const int64_t bn = (b.n == 1) ? 0 : n;
    for (int c = 0; c < a.c; ++c) {
      const int64_t bc = (b.c == 1) ? 0 : c;
      for (int h = 0; h < a.h; ++h) {
        const int64_t bh = (b.h == 1) ? 0 : h;
        const int64_t brow = ((bn * b.c + bc) * b.h + bh) * b.w;
        for (int w = 0; w < a.w; ++w, ++ia) {
          const int64_t ib = brow + ((b.w == 1) ? 0 : w);
          fn(ia, ib);
        }
      }
    }
  }
}

}  // namespace

// ---- elementwise unary -----------------------------------------------------

Tensor relu(const Tensor& x) {
  return unary_with_grad(x, [](double v) {
    return v > 0.0 ? std::pair{v, 1.0} : std::pair{0.0, 0.0};
  });
}

Tensor sigmoid(const Tensor& x) {
  return unary_with_grad(x, [](double v) {
    const double y = 1.0 / (1.0 + std::exp(-v));
    return std::pair{y, y * (1.0 - y)};
  });
}

Tensor ln(const Tensor& x) {
  for (double v : x.data()) {
    if (v <= 0.0) throw DomainError("ln of nonpositive value");
  }
  return unary_with_grad(
      x, [](double v) { return std::pair{std::log(v), 1.0 / v}; });
}

Tensor sqrt_eps(const Tensor& x, double eps) {
  for (double v : x.data()) {
    if (v + eps <= 0.0) throw DomainError("sqrt_eps of nonpositive value");
  }
  return unary_with_grad(x, [eps](double v) {
    const double y = std::sqrt(v + eps);
    return std::pair{y, 0.5 / y};
  });
}

Tensor pow_scalar(const Tensor& x, double e) {
  for (double v : x.data()) {
    if (v <= 0.0) throw DomainError("pow_scalar of nonpositive base");
  }
  return unary_with_grad(x, [e](double v) {
    const double y = std::pow(v, e);
    return std::pair{y, e * y / v};
  });
}

Tensor scale(const Tensor& x, double k) {
  return unary_with_grad(x, [k](double v) { return std::pair{k * v, k}; });
}

Tensor add_scalar(const Tensor& x, double k) {
  return unary_with_grad(x, [k](double v) { return std::pair{v + k, 1.0}; });
}

Tensor neg(const Tensor& x) {
  return unary_with_grad(x, [](double v) { return std::pair{-v, -1.0}; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw UsageError("clamp with lo > hi");
  return unary_with_grad(x, [lo, hi](double v) {
    if (v < lo) return std::pair{lo, 0.0};
    if (v > hi) return std::pair{hi, 0.0};
    return std::pair{v, 1.0};
  });
}

// ---- elementwise binary ------------------------------------------------------

namespace {

// Shared skeleton: forward value plus the two local partials, all computed at
// forward time.
template <typename Fwd>
Tensor binary_with_grad(const Tensor& a, const Tensor& b, const char* name,
                        Fwd fwd) {
  check_broadcast(a.shape(), b.shape(), name);
  Tensor out = Tensor::zeros(a.shape());
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  const bool need = want_grad({&a, &b});
  std::vector<double> da, db;
  if (need) {
    da.resize(ov.size());
    db.resize(ov.size());
  }
  for_each_pair(a.shape(), b.shape(), [&](int64_t ia, int64_t ib) {
    auto [y, dya, dyb] = fwd(av[ia], bv[ib]);
    ov[ia] = y;
    if (need) {
      da[ia] = dya;
      db[ia] = dyb;
    }
  });
  if (need) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    Tape::active().record(
        [ac, bc, oc, da = std::move(da), db = std::move(db)]() mutable {
          const auto& g = oc.grad();
          if (ac.requires_grad()) {
            auto& ga = ac.grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da[i];
          }
          if (bc.requires_grad()) {
            auto& gb = bc.grad();
            for_each_pair(ac.shape(), bc.shape(), [&](int64_t ia, int64_t ib) {
              gb[ib] += g[ia] * db[ia];
            });
          }
        });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_with_grad(a, b, "add", [](double x, double y) {
    return std::tuple{x + y, 1.0, 1.0};
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_with_grad(a, b, "sub", [](double x, double y) {
    return std::tuple{x - y, 1.0, -1.0};
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_with_grad(a, b, "mul", [](double x, double y) {
    return std::tuple{x * y, y, x};
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0) throw DomainError("division by zero");
  }
  return binary_with_grad(a, b, "div", [](double x, double y) {
    return std::tuple{x / y, 1.0 / y, -x / (y * y)};
  });
}

Tensor pow_elem(const Tensor& a, const Tensor& b) {
  for (double v : a.data()) {
    if (v <= 0.0) throw DomainError("pow_elem of nonpositive base");
  }
  return binary_with_grad(a, b, "pow_elem", [](double x, double y) {
    const double z = std::pow(x, y);
    return std::tuple{z, y * z / x, z * std::log(x)};
  });
}

// ---- structural ------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape s) {
  if (s.numel() != x.numel()) {
    throw DimensionError("reshape from " + x.shape().str() + " to " + s.str() +
                         " changes element count");
  }
  Tensor out = Tensor::from_vector(s, x.data());
  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::active().record([xc, oc]() mutable {
      const auto& g = oc.grad();
      auto& gx = xc.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor transpose_hw(const Tensor& x) {
  const Shape s = x.shape();
  Tensor out = Tensor::zeros({s.n, s.c, s.w, s.h});
  const auto& xv = x.data();
  auto& ov = out.data();
  int64_t plane = 0;
  for (int nc = 0; nc < s.n * s.c; ++nc, plane += int64_t{s.h} * s.w) {
    for (int h = 0; h < s.h; ++h) {
      for (int w = 0; w < s.w; ++w) {
        ov[plane + int64_t{w} * s.h + h] = xv[plane + int64_t{h} * s.w + w];
      }
    }
  }
  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::active().record([xc, oc, s]() mutable {
      const auto& g = oc.grad();
      auto& gx = xc.grad();
      int64_t base = 0;
      for (int nc = 0; nc < s.n * s.c; ++nc, base += int64_t{s.h} * s.w) {
        for (int h = 0; h < s.h; ++h) {
          for (int w = 0; w < s.w; ++w) {
            gx[base + int64_t{h} * s.w + w] += g[base + int64_t{w} * s.h + h];
          }
        }
      }
    });
  }
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw UsageError("concat_channels of zero tensors");
  const Shape first = xs[0].shape();
  int total_c = 0;
  for (const Tensor& t : xs) {
    const Shape s = t.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw DimensionError("concat_channels operand " + s.str() +
                           " does not match " + first.str());
    }
    total_c += s.c;
  }
  Tensor out = Tensor::zeros({first.n, total_c, first.h, first.w});
  const int64_t hw = int64_t{first.h} * first.w;
  int c_off = 0;
  for (const Tensor& t : xs) {
    const Shape s = t.shape();
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < s.c; ++c) {
        const double* src = t.data().data() + (int64_t{n} * s.c + c) * hw;
        double* dst =
            out.data().data() + (int64_t{n} * total_c + c_off + c) * hw;
        std::copy(src, src + hw, dst);
      }
    }
    c_off += s.c;
  }
  bool need = false;
  for (const Tensor& t : xs) {
    if (Tape::recording_enabled() && t.requires_grad()) need = true;
  }
  if (need) {
    out.set_requires_grad(true);
    std::vector<Tensor> parts = xs;
    Tensor oc = out;
    Tape::active().record([parts, oc, first, total_c, hw]() mutable {
      const auto& g = oc.grad();
      int off = 0;
      for (Tensor& t : parts) {
        const Shape s = t.shape();
        if (t.requires_grad()) {
          auto& gt = t.grad();
          for (int n = 0; n < s.n; ++n) {
            for (int c = 0; c < s.c; ++c) {
              const double* src =
                  g.data() + (int64_t{n} * total_c + off + c) * hw;
              double* dst = gt.data() + (int64_t{n} * s.c + c) * hw;
              for (int64_t i = 0; i < hw; ++i) dst[i] += src[i];
            }
          }
        }
        off += s.c;
      }
    });
  }
  return out;
}

Tensor replicate_pad(const Tensor& x, int pad) {
  if (pad < 0) throw UsageError("replicate_pad with negative pad");
  const Shape s = x.shape();
  const int oh = s.h + 2 * pad, ow = s.w + 2 * pad;
  Tensor out = Tensor::zeros({s.n, s.c, oh, ow});
  const auto& xv = x.data();
  auto& ov = out.data();
  const int64_t iplane = int64_t{s.h} * s.w;
  const int64_t oplane = int64_t{oh} * ow;
  auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    const double* xp = xv.data() + nc * iplane;
    double* op = ov.data() + nc * oplane;
    for (int y = 0; y < oh; ++y) {
      const int sy = clampi(y - pad, s.h - 1);
      for (int w = 0; w < ow; ++w) {
        const int sx = clampi(w - pad, s.w - 1);
        op[int64_t{y} * ow + w] = xp[int64_t{sy} * s.w + sx];
      }
    }
  }
  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::active().record([xc, oc, s, pad, oh, ow, iplane, oplane]() mutable {
      const auto& g = oc.grad();
      auto& gx = xc.grad();
      auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
      for (int nc = 0; nc < s.n * s.c; ++nc) {
        const double* gp = g.data() + nc * oplane;
        double* gxp = gx.data() + nc * iplane;
        for (int y = 0; y < oh; ++y) {
          const int sy = clampi(y - pad, s.h - 1);
          for (int w = 0; w < ow; ++w) {
            const int sx = clampi(w - pad, s.w - 1);
            gxp[int64_t{sy} * s.w + sx] += gp[int64_t{y} * ow + w];
          }
        }
      }
    });
  }
  return out;
}

// ---- reductions ------------------------------------------------------------

Tensor reduce(const Tensor& x, Reduce kind, Axes axes) {
  const Shape s = x.shape();
  const Shape os{axes.n ? 1 : s.n, axes.c ? 1 : s.c, axes.h ? 1 : s.h,
                 axes.w ? 1 : s.w};
  const int64_t count = s.numel() / os.numel();
  if (count < 1) throw DimensionError("reduce over empty tensor");

  Tensor out = Tensor::zeros(os);
  const auto& xv = x.data();
  auto& ov = out.data();
  std::vector<int64_t> argmax;
  if (kind == Reduce::Max) {
    ov.assign(ov.size(), -std::numeric_limits<double>::infinity());
    argmax.assign(ov.size(), -1);
  }

  auto out_index = [&](int n, int c, int h, int w) {
    return ((int64_t{axes.n ? 0 : n} * os.c + (axes.c ? 0 : c)) * os.h +
            (axes.h ? 0 : h)) *
               os.w +
           (axes.w ? 0 : w);
  };

  int64_t ix = 0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int h = 0; h < s.h; ++h) {
        for (int w = 0; w < s.w; ++w, ++ix) {
          const int64_t oi = out_index(n, c, h, w);
          if (kind == Reduce::Max) {
            if (xv[ix] > ov[oi]) {
              ov[oi] = xv[ix];
              argmax[oi] = ix;
            }
          } else {
            ov[oi] += xv[ix];
          }
        }
      }
    }
  }
  if (kind == Reduce::Mean) {
    for (double& v : ov) v /= static_cast<double>(count);
  }

  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::active().record(
        [xc, oc, kind, s, os, count, axes,
         argmax = std::move(argmax)]() mutable {
          const auto& g = oc.grad();
          auto& gx = xc.grad();
          if (kind == Reduce::Max) {
            for (std::size_t i = 0; i < g.size(); ++i) {
              gx[static_cast<std::size_t>(argmax[i])] += g[i];
            }
            return;
          }
          const double inv =
              kind == Reduce::Mean ? 1.0 / static_cast<double>(count) : 1.0;
          int64_t ix = 0;
          for (int n = 0; n < s.n; ++n) {
            for (int c = 0; c < s.c; ++c) {
              for (int h = 0; h < s.h; ++h) {
                for (int w = 0; w < s.w; ++w, ++ix) {
                  const int64_t oi =
                      ((int64_t{axes.n ? 0 : n} * os.c + (axes.c ? 0 : c)) *
                           os.h +
                       (axes.h ? 0 : h)) *
                          os.w +
                      (axes.w ? 0 : w);
                  gx[ix] += g[oi] * inv;
                }
              }
            }
          }
        });
  }
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  if (axis < 0 || axis > 3) throw UsageError("softmax axis out of range");
  const Shape s = x.shape();
  const int ext[4] = {s.n, s.c, s.h, s.w};
  const int64_t str[4] = {int64_t{s.c} * s.h * s.w, int64_t{s.h} * s.w, s.w, 1};
  const int L = ext[axis];
  const int64_t stride = str[axis];

  // The three non-axis extents/strides keep their relative order.
  int oext[3];
  int64_t ostr[3];
  int k = 0;
  for (int a = 0; a < 4; ++a) {
    if (a == axis) continue;
    oext[k] = ext[a];
    ostr[k] = str[a];
    ++k;
  }

  Tensor out = Tensor::zeros(s);
  const auto& xv = x.data();
  auto& ov = out.data();
  for (int i0 = 0; i0 < oext[0]; ++i0) {
    for (int i1 = 0; i1 < oext[1]; ++i1) {
      for (int i2 = 0; i2 < oext[2]; ++i2) {
        const int64_t base = i0 * ostr[0] + i1 * ostr[1] + i2 * ostr[2];
        double m = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < L; ++i) m = std::max(m, xv[base + i * stride]);
        double sum = 0.0;
        for (int i = 0; i < L; ++i) {
          const double e = std::exp(xv[base + i * stride] - m);
          ov[base + i * stride] = e;
          sum += e;
        }
        for (int i = 0; i < L; ++i) ov[base + i * stride] /= sum;
      }
    }
  }

  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::active().record([xc, oc, oext = std::array<int, 3>{oext[0], oext[1],
                                                             oext[2]},
                           ostr = std::array<int64_t, 3>{ostr[0], ostr[1],
                                                         ostr[2]},
                           L, stride]() mutable {
      const auto& g = oc.grad();
      const auto& y = oc.data();
      auto& gx = xc.grad();
      for (int i0 = 0; i0 < oext[0]; ++i0) {
        for (int i1 = 0; i1 < oext[1]; ++i1) {
          for (int i2 = 0; i2 < oext[2]; ++i2) {
            const int64_t base = i0 * ostr[0] + i1 * ostr[1] + i2 * ostr[2];
            double dot = 0.0;
            for (int i = 0; i < L; ++i) {
              const int64_t ix = base + i * stride;
              dot += g[ix] * y[ix];
            }
            for (int i = 0; i < L; ++i) {
              const int64_t ix = base + i * stride;
              gx[ix] += y[ix] * (g[ix] - dot);
            }
          }
        }
      }
    });
  }
  return out;
}

// ---- convolution -----------------------------------------------------------

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
  const Shape xs = input.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c) {
    throw DimensionError("conv2d weight " + ws.str() +
                         " does not match input " + xs.str());
  }
  if (stride < 1 || padding < 0) throw UsageError("conv2d bad stride/padding");
  const int oh = (xs.h + 2 * padding - ws.h) / stride + 1;
  const int ow = (xs.w + 2 * padding - ws.w) / stride + 1;
  if (xs.h + 2 * padding < ws.h || xs.w + 2 * padding < ws.w || oh < 1 ||
      ow < 1) {
    throw DimensionError("conv2d kernel larger than padded input");
  }
  if (bias.defined()) {
    const Shape bs = bias.shape();
    if (bs.n != 1 || bs.c != ws.n || bs.h != 1 || bs.w != 1) {
      throw DimensionError("conv2d bias " + bs.str() + " must be (1," +
                           std::to_string(ws.n) + ",1,1)");
    }
  }

  Tensor out = Tensor::zeros({xs.n, ws.n, oh, ow});
  const auto& xv = input.data();
  const auto& wv = weight.data();
  auto& ov = out.data();
  const int64_t xplane = int64_t{xs.h} * xs.w;
  const int64_t wplane = int64_t{ws.h} * ws.w;

  for (int n = 0; n < xs.n; ++n) {
    for (int co = 0; co < ws.n; ++co) {
      const double b0 = bias.defined() ? bias.data()[co] : 0.0;
      double* op = ov.data() + ((int64_t{n} * ws.n + co) * oh) * ow;
      for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
          double acc = b0;
          for (int ci = 0; ci < xs.c; ++ci) {
            const double* xp = xv.data() + (int64_t{n} * xs.c + ci) * xplane;
            const double* wp = wv.data() + (int64_t{co} * ws.c + ci) * wplane;
            for (int ky = 0; ky < ws.h; ++ky) {
              const int iy = y * stride - padding + ky;
              if (iy < 0 || iy >= xs.h) continue;
              const double* xrow = xp + int64_t{iy} * xs.w;
              const double* wrow = wp + int64_t{ky} * ws.w;
              for (int kx = 0; kx < ws.w; ++kx) {
                const int ix = x * stride - padding + kx;
                if (ix < 0 || ix >= xs.w) continue;
                acc += xrow[ix] * wrow[kx];
              }
            }
          }
          op[int64_t{y} * ow + x] = acc;
        }
      }
    }
  }

  if (want_grad({&input, &weight, &bias})) {
    out.set_requires_grad(true);
    Tensor xc = input, wc = weight, bc = bias, oc = out;
    Tape::active().record([xc, wc, bc, oc, stride, padding, oh, ow, xs, ws,
                           xplane, wplane]() mutable {
      const auto& g = oc.grad();
      const auto& xv = xc.data();
      const auto& wv = wc.data();
      const bool gi = xc.requires_grad();
      const bool gw = wc.requires_grad();
      const bool gb = bc.defined() && bc.requires_grad();
      for (int n = 0; n < xs.n; ++n) {
        for (int co = 0; co < ws.n; ++co) {
          const double* gp = g.data() + ((int64_t{n} * ws.n + co) * oh) * ow;
          for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
              const double gv = gp[int64_t{y} * ow + x];
              if (gb) bc.grad()[co] += gv;
              if (gv == 0.0 || (!gi && !gw)) continue;
              for (int ci = 0; ci < xs.c; ++ci) {
                const int64_t xbase = (int64_t{n} * xs.c + ci) * xplane;
                const int64_t wbase = (int64_t{co} * ws.c + ci) * wplane;
                for (int ky = 0; ky < ws.h; ++ky) {
                  const int iy = y * stride - padding + ky;
                  if (iy < 0 || iy >= xs.h) continue;
                  for (int kx = 0; kx < ws.w; ++kx) {
                    const int ix = x * stride - padding + kx;
                    if (ix < 0 || ix >= xs.w) continue;
                    const int64_t xi = xbase + int64_t{iy} * xs.w + ix;
                    const int64_t wi = wbase + int64_t{ky} * ws.w + kx;
                    if (gi) xc.grad()[xi] += gv * wv[wi];
                    if (gw) wc.grad()[wi] += gv * xv[xi];
                  }
                }
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor depthwise3x3(const Tensor& x, const double (&kernel)[3][3]) {
  const Shape s = x.shape();
  Tensor out = Tensor::zeros(s);
  const auto& xv = x.data();
  auto& ov = out.data();
  const int64_t plane = int64_t{s.h} * s.w;
  double k[3][3];
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) k[i][j] = kernel[i][j];
  }

  for (int nc = 0; nc < s.n * s.c; ++nc) {
    const double* xp = xv.data() + nc * plane;
    double* op = ov.data() + nc * plane;
    for (int y = 0; y < s.h; ++y) {
      for (int x2 = 0; x2 < s.w; ++x2) {
        double acc = 0.0;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = std::clamp(y - 1 + ky, 0, s.h - 1);
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = std::clamp(x2 - 1 + kx, 0, s.w - 1);
            acc += xp[int64_t{iy} * s.w + ix] * k[ky][kx];
          }
        }
        op[int64_t{y} * s.w + x2] = acc;
      }
    }
  }

  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    std::array<double, 9> kf{k[0][0], k[0][1], k[0][2], k[1][0], k[1][1],
                             k[1][2], k[2][0], k[2][1], k[2][2]};
    Tape::active().record([xc, oc, s, plane, kf]() mutable {
      const auto& g = oc.grad();
      auto& gx = xc.grad();
      for (int nc = 0; nc < s.n * s.c; ++nc) {
        const double* gp = g.data() + nc * plane;
        double* gxp = gx.data() + nc * plane;
        for (int y = 0; y < s.h; ++y) {
          for (int x2 = 0; x2 < s.w; ++x2) {
            const double gv = gp[int64_t{y} * s.w + x2];
            if (gv == 0.0) continue;
            for (int ky = 0; ky < 3; ++ky) {
              const int iy = std::clamp(y - 1 + ky, 0, s.h - 1);
              for (int kx = 0; kx < 3; ++kx) {
                const int ix = std::clamp(x2 - 1 + kx, 0, s.w - 1);
                gxp[int64_t{iy} * s.w + ix] += gv * kf[ky * 3 + kx];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.c != sb.c || sa.w != sb.h) {
    throw DimensionError("matmul shapes " + sa.str() + " x " + sb.str());
  }
  const int r = sa.h, kk = sa.w, cols = sb.w;
  Tensor out = Tensor::zeros({sa.n, sa.c, r, cols});
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  const int64_t ap = int64_t{r} * kk, bp = int64_t{kk} * cols,
                op = int64_t{r} * cols;
  for (int nc = 0; nc < sa.n * sa.c; ++nc) {
    const double* A = av.data() + nc * ap;
    const double* B = bv.data() + nc * bp;
    double* O = ov.data() + nc * op;
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < cols; ++j) {
        double acc = 0.0;
        for (int t = 0; t < kk; ++t) acc += A[i * kk + t] * B[t * cols + j];
        O[i * cols + j] = acc;
      }
    }
  }
  if (want_grad({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    Tape::active().record([ac, bc, oc, sa, r, kk, cols, ap, bp, op]() mutable {
      const auto& g = oc.grad();
      const auto& av = ac.data();
      const auto& bv = bc.data();
      for (int nc = 0; nc < sa.n * sa.c; ++nc) {
        const double* G = g.data() + nc * op;
        const double* A = av.data() + nc * ap;
        const double* B = bv.data() + nc * bp;
        if (ac.requires_grad()) {
          double* GA = ac.grad().data() + nc * ap;
          for (int i = 0; i < r; ++i) {
            for (int t = 0; t < kk; ++t) {
              double acc = 0.0;
              for (int j = 0; j < cols; ++j) {
                acc += G[i * cols + j] * B[t * cols + j];
              }
              GA[i * kk + t] += acc;
            }
          }
        }
        if (bc.requires_grad()) {
          double* GB = bc.grad().data() + nc * bp;
          for (int t = 0; t < kk; ++t) {
            for (int j = 0; j < cols; ++j) {
              double acc = 0.0;
              for (int i = 0; i < r; ++i) {
                acc += A[i * kk + t] * G[i * cols + j];
              }
              GB[t * cols + j] += acc;
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) {
    throw DimensionError("bilinear_resize target must be positive, got " +
                         std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  const Shape s = x.shape();
  Tensor out = Tensor::zeros({s.n, s.c, out_h, out_w});

  // align_corners mapping: corners of the grids coincide, so equal sizes give
  // an exact identity.
  auto src_pos = [](int i, int out_e, int in_e) {
    if (out_e == 1) return 0.0;
    return static_cast<double>(i) * (in_e - 1) / (out_e - 1);
  };

  struct Lerp {
    int lo, hi;
    double t;
  };
  std::vector<Lerp> ys(static_cast<std::size_t>(out_h)),
      xsm(static_cast<std::size_t>(out_w));
  for (int i = 0; i < out_h; ++i) {
    const double p = src_pos(i, out_h, s.h);
    const int lo = std::min(static_cast<int>(p), s.h - 1);
    ys[i] = {lo, std::min(lo + 1, s.h - 1), p - lo};
  }
  for (int i = 0; i < out_w; ++i) {
    const double p = src_pos(i, out_w, s.w);
    const int lo = std::min(static_cast<int>(p), s.w - 1);
    xsm[i] = {lo, std::min(lo + 1, s.w - 1), p - lo};
  }

  const auto& xv = x.data();
  auto& ov = out.data();
  const int64_t iplane = int64_t{s.h} * s.w;
  const int64_t oplane = int64_t{out_h} * out_w;
  for (int nc = 0; nc < s.n * s.c; ++nc) {
    const double* xp = xv.data() + nc * iplane;
    double* op = ov.data() + nc * oplane;
    for (int y = 0; y < out_h; ++y) {
      const Lerp& ly = ys[y];
      for (int w = 0; w < out_w; ++w) {
        const Lerp& lx = xsm[w];
        const double v00 = xp[int64_t{ly.lo} * s.w + lx.lo];
        const double v01 = xp[int64_t{ly.lo} * s.w + lx.hi];
        const double v10 = xp[int64_t{ly.hi} * s.w + lx.lo];
        const double v11 = xp[int64_t{ly.hi} * s.w + lx.hi];
        const double top = v00 + (v01 - v00) * lx.t;
        const double bot = v10 + (v11 - v10) * lx.t;
        op[int64_t{y} * out_w + w] = top + (bot - top) * ly.t;
      }
    }
  }

  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::active().record([xc, oc, s, out_h, out_w, iplane, oplane, ys,
                           xsm]() mutable {
      const auto& g = oc.grad();
      auto& gx = xc.grad();
      for (int nc = 0; nc < s.n * s.c; ++nc) {
        const double* gp = g.data() + nc * oplane;
        double* gxp = gx.data() + nc * iplane;
        for (int y = 0; y < out_h; ++y) {
          const Lerp& ly = ys[y];
          for (int w = 0; w < out_w; ++w) {
            const Lerp& lx = xsm[w];
            const double gv = gp[int64_t{y} * out_w + w];
            gxp[int64_t{ly.lo} * s.w + lx.lo] +=
                gv * (1.0 - ly.t) * (1.0 - lx.t);
            gxp[int64_t{ly.lo} * s.w + lx.hi] += gv * (1.0 - ly.t) * lx.t;
            gxp[int64_t{ly.hi} * s.w + lx.lo] += gv * ly.t * (1.0 - lx.t);
            gxp[int64_t{ly.hi} * s.w + lx.hi] += gv * ly.t * lx.t;
          }
        }
      }
    });
  }
  return out;
}

// ---- batch normalization ------------------------------------------------------

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, Mode mode) {
  const Shape s = x.shape();
  const int C = s.c;
  auto check_param = [&](const Tensor& p, const char* name) {
    const Shape ps = p.shape();
    if (ps.n != 1 || ps.c != C || ps.h != 1 || ps.w != 1) {
      throw DimensionError(std::string("batchnorm2d ") + name + " shape " +
                           ps.str() + " must be (1," + std::to_string(C) +
                           ",1,1)");
    }
  };
  check_param(gamma, "gamma");
  check_param(beta, "beta");
  if (static_cast<int>(state.running_mean.size()) != C ||
      static_cast<int>(state.running_var.size()) != C) {
    throw DimensionError("batchnorm2d state does not match channel count");
  }
  const int64_t m = int64_t{s.n} * s.h * s.w;
  if (mode == Mode::Train && m < 2) {
    throw DomainError("batchnorm2d training needs at least 2 values per channel");
  }

  std::vector<double> mean(C, 0.0), var(C, 0.0);
  const auto& xv = x.data();
  const int64_t plane = int64_t{s.h} * s.w;
  if (mode == Mode::Train) {
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < C; ++c) {
        const double* xp = xv.data() + (int64_t{n} * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) mean[c] += xp[i];
      }
    }
    for (int c = 0; c < C; ++c) mean[c] /= static_cast<double>(m);
    for (int n = 0; n < s.n; ++n) {
      for (int c = 0; c < C; ++c) {
        const double* xp = xv.data() + (int64_t{n} * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const double d = xp[i] - mean[c];
          var[c] += d * d;
        }
      }
    }
    for (int c = 0; c < C; ++c) var[c] /= static_cast<double>(m);
    for (int c = 0; c < C; ++c) {
      state.running_mean[c] =
          state.momentum * state.running_mean[c] + (1.0 - state.momentum) * mean[c];
      state.running_var[c] =
          state.momentum * state.running_var[c] + (1.0 - state.momentum) * var[c];
    }
  } else {
    mean = state.running_mean;
    var = state.running_var;
  }

  std::vector<double> inv_sigma(C);
  for (int c = 0; c < C; ++c) inv_sigma[c] = 1.0 / std::sqrt(var[c] + state.eps);

  Tensor out = Tensor::zeros(s);
  auto& ov = out.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < C; ++c) {
      const double* xp = xv.data() + (int64_t{n} * C + c) * plane;
      double* op = ov.data() + (int64_t{n} * C + c) * plane;
      const double mu = mean[c], is = inv_sigma[c], ga = gv[c], be = bv[c];
      for (int64_t i = 0; i < plane; ++i) {
        op[i] = ga * (xp[i] - mu) * is + be;
      }
    }
  }

  if (want_grad({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    Tensor xc = x, gc = gamma, bc = beta, oc = out;
    const bool train = mode == Mode::Train;
    Tape::active().record([xc, gc, bc, oc, s, plane, m, train,
                           mean = std::move(mean),
                           inv_sigma = std::move(inv_sigma)]() mutable {
      const int C = s.c;
      const auto& g = oc.grad();
      const auto& xv = xc.data();
      const auto& gav = gc.data();
      // Per-channel sums of the incoming gradient and gradient * x_hat.
      std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
      for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < C; ++c) {
          const double* gp = g.data() + (int64_t{n} * C + c) * plane;
          const double* xp = xv.data() + (int64_t{n} * C + c) * plane;
          double a = 0.0, b = 0.0;
          for (int64_t i = 0; i < plane; ++i) {
            a += gp[i];
            b += gp[i] * (xp[i] - mean[c]) * inv_sigma[c];
          }
          sum_g[c] += a;
          sum_gx[c] += b;
        }
      }
      if (gc.requires_grad()) {
        auto& gg = gc.grad();
        for (int c = 0; c < C; ++c) gg[c] += sum_gx[c];
      }
      if (bc.requires_grad()) {
        auto& gb = bc.grad();
        for (int c = 0; c < C; ++c) gb[c] += sum_g[c];
      }
      if (xc.requires_grad()) {
        auto& gx = xc.grad();
        const double invm = 1.0 / static_cast<double>(m);
        for (int n = 0; n < s.n; ++n) {
          for (int c = 0; c < C; ++c) {
            const double* gp = g.data() + (int64_t{n} * C + c) * plane;
            const double* xp = xv.data() + (int64_t{n} * C + c) * plane;
            double* gxp = gx.data() + (int64_t{n} * C + c) * plane;
            const double k = gav[c] * inv_sigma[c];
            for (int64_t i = 0; i < plane; ++i) {
              if (train) {
                const double xhat = (xp[i] - mean[c]) * inv_sigma[c];
                gxp[i] +=
                    k * (gp[i] - invm * sum_g[c] - xhat * invm * sum_gx[c]);
              } else {
                gxp[i] += k * gp[i];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace mvss::ops
