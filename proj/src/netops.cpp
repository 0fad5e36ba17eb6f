#include "spm/netops.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "spm/simd/kernels.hpp"

namespace spm {

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t padding, const char* dim) {
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (in + 2 * padding < kernel) {
    throw ShapeError(std::string("conv2d: ") + dim + " " + std::to_string(in) + " with padding " +
                     std::to_string(padding) + " is smaller than kernel " + std::to_string(kernel));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

namespace {

struct ConvDims {
  std::size_t cin, h, w, cout, kh, kw, stride, pad, oh, ow;
  std::size_t k() const { return cin * kh * kw; }
  std::size_t out_plane() const { return oh * ow; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// Column buffer layout: row r = (ci, ky, kx), column = b·oh·ow + oy·ow + ox,
// where `ld` is the row stride (batch·oh·ow).
template <typename T>
void im2col(const T* x, const ConvDims& d, T* col, std::size_t ld) {
  for (std::size_t ci = 0; ci < d.cin; ++ci) {
    const T* plane = x + ci * d.h * d.w;
    for (std::size_t ky = 0; ky < d.kh; ++ky) {
      for (std::size_t kx = 0; kx < d.kw; ++kx) {
        T* row = col + ((ci * d.kh + ky) * d.kw + kx) * ld;
        // Valid output columns: 0 <= ox·s + kx − pad < w.
        const long off = static_cast<long>(kx) - static_cast<long>(d.pad);
        const long s = static_cast<long>(d.stride);
        long lo = off >= 0 ? 0 : (-off + s - 1) / s;
        long hi = (static_cast<long>(d.w) - 1 - off) < 0 ? 0 : (static_cast<long>(d.w) - 1 - off) / s + 1;
        lo = std::min<long>(lo, static_cast<long>(d.ow));
        hi = std::clamp<long>(hi, lo, static_cast<long>(d.ow));
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const long iy = static_cast<long>(oy * d.stride + ky) - static_cast<long>(d.pad);
          T* dst = row + oy * d.ow;
          if (iy < 0 || iy >= static_cast<long>(d.h)) {
            std::fill_n(dst, d.ow, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * d.w;
          std::fill(dst, dst + lo, T(0));
          if (d.stride == 1) {
            std::copy(src + lo + off, src + hi + off, dst + lo);
          } else {
            for (long ox = lo; ox < hi; ++ox) dst[ox] = src[ox * s + off];
          }
          std::fill(dst + hi, dst + d.ow, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvDims& d, T* dx, std::size_t ld) {
  for (std::size_t ci = 0; ci < d.cin; ++ci) {
    T* plane = dx + ci * d.h * d.w;
    for (std::size_t ky = 0; ky < d.kh; ++ky) {
      for (std::size_t kx = 0; kx < d.kw; ++kx) {
        const T* row = col + ((ci * d.kh + ky) * d.kw + kx) * ld;
        const long off = static_cast<long>(kx) - static_cast<long>(d.pad);
        const long s = static_cast<long>(d.stride);
        long lo = off >= 0 ? 0 : (-off + s - 1) / s;
        long hi = (static_cast<long>(d.w) - 1 - off) < 0 ? 0 : (static_cast<long>(d.w) - 1 - off) / s + 1;
        lo = std::min<long>(lo, static_cast<long>(d.ow));
        hi = std::clamp<long>(hi, lo, static_cast<long>(d.ow));
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const long iy = static_cast<long>(oy * d.stride + ky) - static_cast<long>(d.pad);
          if (iy < 0 || iy >= static_cast<long>(d.h)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * d.w;
          const T* src = row + oy * d.ow;
          for (long ox = lo; ox < hi; ++ox) dst[ox * s + off] += src[ox];
        }
      }
    }
  }
}

ConvDims conv_dims(const Shape& xs, const Shape& ws, ConvGeometry g) {
  if (ws.c != xs.c) {
    throw ShapeError("conv2d: input channels " + std::to_string(xs.c) + " do not match kernel C_in " +
                     std::to_string(ws.c));
  }
  ConvDims d{xs.c, xs.h, xs.w, ws.n, ws.h, ws.w, g.stride, g.padding, 0, 0};
  d.oh = conv_output_size(xs.h, ws.h, g.stride, g.padding, "height");
  d.ow = conv_output_size(xs.w, ws.w, g.stride, g.padding, "width");
  return d;
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry geom) {
  const Shape xs = x.shape();
  const ConvDims d = conv_dims(xs, weight.shape(), geom);
  if (bias.defined() && bias.value().numel() != d.cout) {
    throw ShapeError("conv2d: bias has " + std::to_string(bias.value().numel()) + " entries, C_out is " +
                     std::to_string(d.cout));
  }
  const auto& kt = simd::kernels<T>();
  const std::size_t batch = xs.n;
  const std::size_t op = d.out_plane();
  const std::size_t cols = batch * op;
  // All samples share one GEMM: W (C_out × K) · col (K × N·oh·ow).
  // The column buffer is kept for the weight gradient.
  auto col = std::make_shared<std::vector<T>>(d.k() * cols);
  for (std::size_t n = 0; n < batch; ++n) {
    if (d.pointwise()) {
      for (std::size_t ci = 0; ci < d.cin; ++ci) {
        std::copy_n(x.value().plane(n, ci), op, col->data() + ci * cols + n * op);
      }
    } else {
      im2col(x.value().plane(n, 0), d, col->data() + n * op, cols);
    }
  }
  std::vector<T> y(d.cout * cols);
  kt.gemm({false, false, d.cout, cols, d.k(), weight.value().data(), d.k(), col->data(), cols, y.data(), cols, false});
  Tensor<T> out(Shape{batch, d.cout, d.oh, d.ow});
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t co = 0; co < d.cout; ++co) {
      T* p = out.plane(n, co);
      const T* src = y.data() + co * cols + n * op;
      if (bias.defined()) {
        const T bv = bias.value()[co];
        for (std::size_t i = 0; i < op; ++i) p[i] = src[i] + bv;
      } else {
        std::copy_n(src, op, p);
      }
    }
  }
  std::vector<Var<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  if (!weight.requires_grad()) col.reset();
  return make_op<T>(std::move(out), inputs, [d, col](Node<T>& self) {
    auto& xn = *self.inputs[0];
    auto& wn = *self.inputs[1];
    Node<T>* bn = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
    const auto& kt = simd::kernels<T>();
    const std::size_t batch = xn.value.shape().n;
    const std::size_t op = d.out_plane();
    const std::size_t cols = batch * op;
    std::vector<T> gy(d.cout * cols);
    for (std::size_t n = 0; n < batch; ++n) {
      for (std::size_t co = 0; co < d.cout; ++co) {
        std::copy_n(self.grad.plane(n, co), op, gy.data() + co * cols + n * op);
      }
    }
    if (wn.requires_grad && col) {
      kt.gemm({false, true, d.cout, d.k(), cols, gy.data(), cols, col->data(), cols, wn.grad_buffer().data(), d.k(),
               true});
    }
    if (xn.requires_grad) {
      std::vector<T> dcol(d.k() * cols);
      kt.gemm({true, false, d.k(), cols, d.cout, wn.value.data(), d.k(), gy.data(), cols, dcol.data(), cols, false});
      Tensor<T>& gx = xn.grad_buffer();
      for (std::size_t n = 0; n < batch; ++n) {
        if (d.pointwise()) {
          for (std::size_t ci = 0; ci < d.cin; ++ci) {
            kt.axpy(op, T(1), dcol.data() + ci * cols + n * op, gx.plane(n, ci));
          }
        } else {
          col2im_add(dcol.data() + n * op, d, gx.plane(n, 0), cols);
        }
      }
    }
    if (bn && bn->requires_grad) {
      Tensor<T>& gb = bn->grad_buffer();
      for (std::size_t co = 0; co < d.cout; ++co) {
        const T* p = gy.data() + co * cols;
        T acc = T(0);
        for (std::size_t i = 0; i < cols; ++i) acc += p[i];
        gb[co] += acc;
      }
    }
  });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvSpec<T>& spec) {
  Var<T> bias;
  if (!spec.bias.empty()) bias = Var<T>(spec.bias);
  return conv2d(Var<T>(x), Var<T>(spec.kernel), bias, ConvGeometry{spec.stride, spec.padding}).value();
}

namespace {

// One output sample as up to four weighted taps along each axis.
struct Taps {
  std::size_t i0, i1;
  double w0, w1;
};

std::vector<Taps> axis_taps(std::size_t in, std::size_t out, ResizeMode mode) {
  std::vector<Taps> taps(out);
  for (std::size_t o = 0; o < out; ++o) {
    if (mode == ResizeMode::Nearest) {
      const std::size_t s = o * in / out;
      taps[o] = {s, s, 1.0, 0.0};
      continue;
    }
    double src = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    if (src < 0) src = 0;
    std::size_t i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double frac = src - static_cast<double>(i0);
    taps[o] = {i0, i1, 1.0 - frac, frac};
  }
  return taps;
}

}  // namespace

template <typename T>
Var<T> resize(const Var<T>& x, std::size_t out_h, std::size_t out_w, ResizeMode mode) {
  if (out_h == 0 || out_w == 0) throw ShapeError("resize: target dims must be >= 1");
  const Shape s = x.shape();
  const auto ty = axis_taps(s.h, out_h, mode);
  const auto tx = axis_taps(s.w, out_w, mode);
  Tensor<T> out(Shape{s.n, s.c, out_h, out_w});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = x.value().plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t y = 0; y < out_h; ++y) {
        const Taps& a = ty[y];
        for (std::size_t xx = 0; xx < out_w; ++xx) {
          const Taps& b = tx[xx];
          if (mode == ResizeMode::Nearest) {
            dst[y * out_w + xx] = src[a.i0 * s.w + b.i0];
            continue;
          }
          const double v = a.w0 * (b.w0 * src[a.i0 * s.w + b.i0] + b.w1 * src[a.i0 * s.w + b.i1]) +
                           a.w1 * (b.w0 * src[a.i1 * s.w + b.i0] + b.w1 * src[a.i1 * s.w + b.i1]);
          dst[y * out_w + xx] = static_cast<T>(v);
        }
      }
    }
  }
  return make_op<T>(std::move(out), {x}, [ty, tx, mode](Node<T>& self) {
    auto& in = *self.inputs[0];
    const Shape s = in.value.shape();
    const std::size_t oh = ty.size(), ow = tx.size();
    Tensor<T> g(s);
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const T* go = self.grad.plane(n, c);
        T* gi = g.plane(n, c);
        for (std::size_t y = 0; y < oh; ++y) {
          const Taps& a = ty[y];
          for (std::size_t xx = 0; xx < ow; ++xx) {
            const Taps& b = tx[xx];
            const T v = go[y * ow + xx];
            if (mode == ResizeMode::Nearest) {
              gi[a.i0 * s.w + b.i0] += v;
              continue;
            }
            gi[a.i0 * s.w + b.i0] += static_cast<T>(a.w0 * b.w0 * v);
            gi[a.i0 * s.w + b.i1] += static_cast<T>(a.w0 * b.w1 * v);
            gi[a.i1 * s.w + b.i0] += static_cast<T>(a.w1 * b.w0 * v);
            gi[a.i1 * s.w + b.i1] += static_cast<T>(a.w1 * b.w1 * v);
          }
        }
      }
    }
    in.accumulate(g);
  });
}

template <typename T>
Tensor<T> resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w, ResizeMode mode) {
  return resize(Var<T>(x), out_h, out_w, mode).value();
}

namespace {

template <typename T>
void normalize_vec(std::vector<T>& v, const std::vector<T>& fallback) {
  long double n2 = 0;
  for (T e : v) n2 += static_cast<long double>(e) * e;
  const long double n = std::sqrt(n2);
  if (n < 1e-30L) {
    v = fallback;
    return;
  }
  for (T& e : v) e = static_cast<T>(e / n);
}

template <typename T>
T bilinear_form(const Tensor<T>& w, const SpectralState<T>& st) {
  const std::size_t rows = st.u.size(), cols = st.v.size();
  long double acc = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    long double row = 0;
    for (std::size_t c = 0; c < cols; ++c) row += static_cast<long double>(w[r * cols + c]) * st.v[c];
    acc += row * st.u[r];
  }
  return static_cast<T>(acc);
}

}  // namespace

template <typename T>
SpectralState<T> SpectralState<T>::init(const Shape& ks, std::mt19937_64& rng) {
  SpectralState<T> st;
  std::normal_distribution<double> dist(0.0, 1.0);
  st.u.resize(ks.n);
  st.v.resize(ks.c * ks.h * ks.w);
  for (auto& e : st.u) e = static_cast<T>(dist(rng));
  for (auto& e : st.v) e = static_cast<T>(dist(rng));
  normalize_vec(st.u, std::vector<T>(st.u.size(), T(1) / std::sqrt(static_cast<T>(st.u.size()))));
  normalize_vec(st.v, std::vector<T>(st.v.size(), T(1) / std::sqrt(static_cast<T>(st.v.size()))));
  return st;
}

template <typename T>
T power_iterate(const Tensor<T>& kernel, SpectralState<T>& st, int iters) {
  const std::size_t rows = kernel.shape().n;
  const std::size_t cols = kernel.numel() / rows;
  if (st.u.size() != rows || st.v.size() != cols) {
    throw ShapeError("spectral state does not match kernel " + kernel.shape().str());
  }
  if (iters < 1) throw std::invalid_argument("power iteration needs iters >= 1");
  for (int it = 0; it < iters; ++it) {
    std::vector<T> v(cols, T(0));
    for (std::size_t r = 0; r < rows; ++r) {
      const T ur = st.u[r];
      for (std::size_t c = 0; c < cols; ++c) v[c] += kernel[r * cols + c] * ur;
    }
    normalize_vec(v, st.v);
    st.v = std::move(v);
    std::vector<T> u(rows, T(0));
    for (std::size_t r = 0; r < rows; ++r) {
      long double acc = 0;
      for (std::size_t c = 0; c < cols; ++c) acc += static_cast<long double>(kernel[r * cols + c]) * st.v[c];
      u[r] = static_cast<T>(acc);
    }
    normalize_vec(u, st.u);
    st.u = std::move(u);
  }
  st.iterations += static_cast<std::uint64_t>(iters);
  return bilinear_form(kernel, st);
}

template <typename T>
Var<T> spectral_divide(const Var<T>& kernel, const SpectralState<T>& st) {
  const std::size_t rows = kernel.shape().n;
  const std::size_t cols = kernel.value().numel() / rows;
  if (st.u.size() != rows || st.v.size() != cols) {
    throw ShapeError("spectral state does not match kernel " + kernel.shape().str());
  }
  const T denom = bilinear_form(kernel.value(), st) + static_cast<T>(kEps);
  Tensor<T> out(kernel.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = kernel.value()[i] / denom;
  return make_op<T>(std::move(out), {kernel}, [u = st.u, v = st.v, denom](Node<T>& self) {
    auto& in = *self.inputs[0];
    const std::size_t cols = v.size();
    // d/dW of W/(uᵀWv + ε) contracted with G: (G − ⟨G, W_sn⟩ u vᵀ) / denom.
    long double inner = 0;
    for (std::size_t i = 0; i < self.grad.numel(); ++i) {
      inner += static_cast<long double>(self.grad[i]) * self.value[i];
    }
    Tensor<T> g(in.value.shape());
    for (std::size_t r = 0; r < u.size(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        g[i] = static_cast<T>((self.grad[i] - inner * u[r] * v[c]) / denom);
      }
    }
    in.accumulate(g);
  });
}

template <typename T>
Tensor<T> spectral_normalize(const Tensor<T>& kernel, int iters, SpectralState<T>& state) {
  power_iterate(kernel, state, iters);
  return spectral_divide(Var<T>(kernel), state).value();
}

namespace {

std::array<std::size_t, 4> unravel(const Shape& s, std::size_t i) {
  const std::size_t w = i % s.w;
  i /= s.w;
  const std::size_t h = i % s.h;
  i /= s.h;
  const std::size_t c = i % s.c;
  return {i / s.c, c, h, w};
}

double finite_scalar(const Var<double>& v) {
  if (v.value().numel() != 1) throw ShapeError("grad_check: f must return a scalar");
  const double out = v.value()[0];
  if (!std::isfinite(out)) throw std::domain_error("grad_check: f is not finite at the probe point");
  return out;
}

GradCheckReport compare(const Tensor<double>& analytic, const std::function<double(std::size_t, double)>& probe,
                        const Tensor<double>& base, GradCheckOptions opts) {
  GradCheckReport rep;
  rep.step_size = opts.step;
  for (std::size_t i = 0; i < base.numel(); ++i) {
    const double x0 = base[i];
    const double fp = probe(i, x0 + opts.step);
    const double fm = probe(i, x0 - opts.step);
    const double numeric = (fp - fm) / (2.0 * opts.step);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), opts.denominator_floor});
    const double rel = std::abs(a - numeric) / denom;
    if (i == 0 || rel > rep.max_relative_error) {
      rep.max_relative_error = rel;
      rep.worst_coordinate = unravel(base.shape(), i);
      rep.analytic_at_worst = a;
      rep.numeric_at_worst = numeric;
    }
  }
  return rep;
}

}  // namespace

GradCheckReport grad_check(const std::function<Var<double>(const Var<double>&)>& f,
                           const Tensor<double>& x, GradCheckOptions opts) {
  Var<double> leaf(x, true);
  Var<double> out = f(leaf);
  finite_scalar(out);
  out.backward();
  const Tensor<double> analytic = leaf.grad();
  Tensor<double> probe_x = x;
  auto probe = [&](std::size_t i, double value) {
    const double keep = probe_x[i];
    probe_x[i] = value;
    const double r = finite_scalar(f(Var<double>(probe_x)));
    probe_x[i] = keep;
    return r;
  };
  return compare(analytic, probe, x, opts);
}

GradCheckReport grad_check_leaf(const std::function<Var<double>()>& f, Var<double>& leaf,
                                GradCheckOptions opts) {
  const bool was = leaf.requires_grad();
  leaf.set_requires_grad(true);
  leaf.zero_grad();
  Var<double> out = f();
  finite_scalar(out);
  out.backward();
  const Tensor<double> analytic = leaf.grad();
  const Tensor<double> base = leaf.value();
  auto probe = [&](std::size_t i, double value) {
    leaf.mutable_value()[i] = value;
    const double r = finite_scalar(f());
    leaf.mutable_value()[i] = base[i];
    return r;
  };
  GradCheckReport rep = compare(analytic, probe, base, opts);
  leaf.zero_grad();
  leaf.set_requires_grad(was);
  return rep;
}

#define SPM_INSTANTIATE(T)                                                                       \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, ConvGeometry);          \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const ConvSpec<T>&);                            \
  template Var<T> resize<T>(const Var<T>&, std::size_t, std::size_t, ResizeMode);                \
  template Tensor<T> resize<T>(const Tensor<T>&, std::size_t, std::size_t, ResizeMode);          \
  template struct SpectralState<T>;                                                              \
  template T power_iterate<T>(const Tensor<T>&, SpectralState<T>&, int);                         \
  template Var<T> spectral_divide<T>(const Var<T>&, const SpectralState<T>&);                    \
  template Tensor<T> spectral_normalize<T>(const Tensor<T>&, int, SpectralState<T>&);

SPM_INSTANTIATE(float)
SPM_INSTANTIATE(double)

#undef SPM_INSTANTIATE

}  // namespace spm
