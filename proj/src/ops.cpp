#include "hstr/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hstr/parallel.hpp"

namespace hstr {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

using detail::Node;

// Geometry shared by im2col/col2im: a (channels, in_h, in_w) plane stack read
// through a k_h x k_w window producing (out_h, out_w) positions.
struct Window {
  int64_t channels, in_h, in_w, k_h, k_w, stride, pad, out_h, out_w;
  int64_t rows() const { return channels * k_h * k_w; }
  int64_t cols() const { return out_h * out_w; }
};

// Output columns [lo, hi) whose tap kx lands inside the row.
inline void valid_span(const Window& g, int64_t kx, int64_t& lo, int64_t& hi) {
  int64_t first = g.pad - kx;  // smallest ox * stride that is in range
  lo = first <= 0 ? 0 : (first + g.stride - 1) / g.stride;
  int64_t last = g.in_w - 1 + g.pad - kx;
  hi = last < 0 ? 0 : std::min(g.out_w, last / g.stride + 1);
  if (hi < lo) hi = lo;
}

// Writes only the in-bounds taps. col must start zeroed; the padding entries
// are never written, so a buffer reused with the same geometry stays valid.
template <typename T>
void im2col(const T* src, const Window& g, T* col) {
  parallel_for(g.channels, [&](int64_t c0, int64_t c1) {
    for (int64_t c = c0; c < c1; ++c) {
      const T* plane = src + c * g.in_h * g.in_w;
      for (int64_t ky = 0; ky < g.k_h; ++ky) {
        for (int64_t kx = 0; kx < g.k_w; ++kx) {
          T* row = col + ((c * g.k_h + ky) * g.k_w + kx) * g.cols();
          int64_t lo, hi;
          valid_span(g, kx, lo, hi);
          const int64_t shift = kx - g.pad;
          for (int64_t oy = 0; oy < g.out_h; ++oy) {
            int64_t iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.in_h) continue;
            const T* src_row = plane + iy * g.in_w;
            T* dst = row + oy * g.out_w;
            if (g.stride == 1) {
              for (int64_t ox = lo; ox < hi; ++ox) dst[ox] = src_row[ox + shift];
            } else {
              for (int64_t ox = lo; ox < hi; ++ox) dst[ox] = src_row[ox * g.stride + shift];
            }
          }
        }
      }
    }
  });
}

// Adds col back into the plane stack (adjoint of im2col).
template <typename T>
void col2im(const T* col, const Window& g, T* dst) {
  parallel_for(g.channels, [&](int64_t c0, int64_t c1) {
    for (int64_t c = c0; c < c1; ++c) {
      T* plane = dst + c * g.in_h * g.in_w;
      for (int64_t ky = 0; ky < g.k_h; ++ky) {
        for (int64_t kx = 0; kx < g.k_w; ++kx) {
          const T* row = col + ((c * g.k_h + ky) * g.k_w + kx) * g.cols();
          int64_t lo, hi;
          valid_span(g, kx, lo, hi);
          for (int64_t oy = 0; oy < g.out_h; ++oy) {
            int64_t iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.in_h) continue;
            T* dst_row = plane + iy * g.in_w;
            const int64_t shift = kx - g.pad;
            const T* src = row + oy * g.out_w;
            if (g.stride == 1) {
              for (int64_t ox = lo; ox < hi; ++ox) dst_row[ox + shift] += src[ox];
            } else {
              for (int64_t ox = lo; ox < hi; ++ox) dst_row[ox * g.stride + shift] += src[ox];
            }
          }
        }
      }
    }
  });
}

bool is_pointwise(const Window& g) {
  return g.k_h == 1 && g.k_w == 1 && g.stride == 1 && g.pad == 0;
}

template <typename T>
void add_bias(T* out, const T* bias, int64_t channels, int64_t plane) {
  for (int64_t c = 0; c < channels; ++c) {
    T b = bias[c];
    T* p = out + c * plane;
    for (int64_t i = 0; i < plane; ++i) p[i] += b;
  }
}

template <typename T>
void accumulate_bias_grad(std::span<T> gbias, const std::vector<T>& gout, Shape s) {
  for (int64_t c = 0; c < s.c; ++c) {
    double acc = 0.0;
    for (int64_t n = 0; n < s.n; ++n) {
      const T* p = gout.data() + (n * s.c + c) * s.plane();
      for (int64_t i = 0; i < s.plane(); ++i) acc += p[i];
    }
    gbias[static_cast<size_t>(c)] += static_cast<T>(acc);
  }
}

template <typename T>
void check_conv_params(const BasicDiffArray<T>& input, const BasicConvParams<T>& p, const char* op) {
  if (!p.weight.defined() || !p.bias.defined()) throw ShapeError(std::string(op) + ": undefined parameters");
  const Shape& ws = p.weight.shape();
  if (ws.h % 2 == 0 || ws.w % 2 == 0)
    throw ShapeError(std::string(op) + ": kernel must be odd, got weight " + ws.str());
  if (p.bias.numel() != ws.n)
    throw ShapeError(std::string(op) + ": bias " + p.bias.shape().str() + " does not match weight " + ws.str());
  if (p.stride < 1 || p.padding < 0) throw ShapeError(std::string(op) + ": invalid stride/padding");
  if (input.shape().c != ws.c)
    throw ShapeError(std::string(op) + ": input " + input.shape().str() + " incompatible with weight " +
                     ws.str());
  if (input.shape().h + 2 * p.padding < ws.h || input.shape().w + 2 * p.padding < ws.w)
    throw ShapeError(std::string(op) + ": input " + input.shape().str() + " smaller than kernel " + ws.str());
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  auto dim = [&](int64_t x, int64_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw ShapeError(std::string(op) + ": cannot broadcast " + a.str() + " with " + b.str());
  };
  return {dim(a.n, b.n), dim(a.c, b.c), dim(a.h, b.h), dim(a.w, b.w)};
}

// Flat index into a possibly broadcast operand for output coordinate (n,c,y,x).
struct Broadcaster {
  int64_t sn, sc, sh, sw;
  explicit Broadcaster(const Shape& s)
      : sn(s.n == 1 ? 0 : s.c * s.h * s.w),
        sc(s.c == 1 ? 0 : s.h * s.w),
        sh(s.h == 1 ? 0 : s.w),
        sw(s.w == 1 ? 0 : 1) {}
  int64_t operator()(int64_t n, int64_t c, int64_t y, int64_t x) const {
    return n * sn + c * sc + y * sh + x * sw;
  }
};

// Sums an output-shaped gradient down to an operand's (broadcast) shape,
// scaled elementwise by factor(i_out), accumulating in double.
template <typename T, typename Factor>
void reduce_broadcast_grad(const std::vector<T>& gout, const Shape& out, Node<T>& operand, Factor factor) {
  auto g = operand.grad_buffer();
  if (operand.shape == out) {
    for (size_t i = 0; i < gout.size(); ++i) g[i] += gout[i] * factor(static_cast<int64_t>(i));
    return;
  }
  std::vector<double> acc(g.size(), 0.0);
  Broadcaster idx(operand.shape);
  int64_t i = 0;
  for (int64_t n = 0; n < out.n; ++n)
    for (int64_t c = 0; c < out.c; ++c)
      for (int64_t y = 0; y < out.h; ++y)
        for (int64_t x = 0; x < out.w; ++x, ++i)
          acc[static_cast<size_t>(idx(n, c, y, x))] += static_cast<double>(gout[static_cast<size_t>(i)]) * factor(i);
  for (size_t k = 0; k < g.size(); ++k) g[k] += static_cast<T>(acc[k]);
}

template <typename T, typename Fn>
BasicDiffArray<T> broadcast_binary(const BasicDiffArray<T>& a, const BasicDiffArray<T>& b, const char* op, Fn fn) {
  Shape out = broadcast_shape(a.shape(), b.shape(), op);
  std::vector<T> values(static_cast<size_t>(out.numel()));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  if (a.shape() == out && b.shape() == out) {
    for (size_t i = 0; i < values.size(); ++i) values[i] = fn(pa[i], pb[i]);
  } else {
    Broadcaster ia(a.shape()), ib(b.shape());
    int64_t i = 0;
    for (int64_t n = 0; n < out.n; ++n)
      for (int64_t c = 0; c < out.c; ++c)
        for (int64_t y = 0; y < out.h; ++y)
          for (int64_t x = 0; x < out.w; ++x, ++i)
            values[static_cast<size_t>(i)] = fn(pa[ia(n, c, y, x)], pb[ib(n, c, y, x)]);
  }
  return BasicDiffArray<T>::from(out, std::move(values));
}

// Wraps a precomputed result array into a graph node.
template <typename T>
BasicDiffArray<T> attach(BasicDiffArray<T> value, std::vector<std::shared_ptr<Node<T>>> inputs, std::function<void(Node<T>&)> fn) {
  BasicDiffArray<T> result = detail::make_result<T>(value.shape(), std::move(inputs), std::move(fn));
  result.node()->data = std::move(value.node()->data);
  return result;
}

}  // namespace

// -----------------------------------------------------------------------------
// conv2d

template <typename T>
BasicDiffArray<T> conv2d(const BasicDiffArray<T>& input, const BasicConvParams<T>& params) {
  check_conv_params(input, params, "conv2d");
  const Shape is = input.shape();
  const Shape ws = params.weight.shape();
  Window g{is.c, is.h, is.w, ws.h, ws.w, params.stride, params.padding,
           params.out_size(is.h, ws.h), params.out_size(is.w, ws.w)};
  Shape os{is.n, ws.n, g.out_h, g.out_w};

  BasicDiffArray<T> result = detail::make_result<T>(
      os, {input.node(), params.weight.node(), params.bias.node()}, [g](Node<T>& self) {
        Node<T>& in = *self.inputs[0];
        Node<T>& weight = *self.inputs[1];
        Node<T>& bias = *self.inputs[2];
        const int64_t cout = weight.shape.n;
        ConstMatMap<T> w(weight.data.data(), cout, g.rows());
        std::vector<T> col(is_pointwise(g) ? 0 : static_cast<size_t>(g.rows() * g.cols()));
        std::vector<T> dcol(static_cast<size_t>(g.rows() * g.cols()));
        for (int64_t n = 0; n < in.shape.n; ++n) {
          const T* x = in.data.data() + n * g.channels * g.in_h * g.in_w;
          ConstMatMap<T> gy(self.grad.data() + n * cout * g.cols(), cout, g.cols());
          if (weight.requires_grad) {
            const T* cp = x;
            if (!is_pointwise(g)) {
              im2col(x, g, col.data());
              cp = col.data();
            }
            MatMap<T> gw(weight.grad_buffer().data(), cout, g.rows());
            gw.noalias() += gy * ConstMatMap<T>(cp, g.rows(), g.cols()).transpose();
          }
          if (in.requires_grad) {
            T* gx = in.grad_buffer().data() + n * g.channels * g.in_h * g.in_w;
            if (is_pointwise(g)) {
              MatMap<T>(gx, g.rows(), g.cols()).noalias() += w.transpose() * gy;
            } else {
              MatMap<T>(dcol.data(), g.rows(), g.cols()).noalias() = w.transpose() * gy;
              col2im(dcol.data(), g, gx);
            }
          }
        }
        if (bias.requires_grad) accumulate_bias_grad(bias.grad_buffer(), self.grad, self.shape);
      });

  T* out = result.node()->data.data();
  ConstMatMap<T> w(params.weight.data().data(), ws.n, g.rows());
  std::vector<T> col(is_pointwise(g) ? 0 : static_cast<size_t>(g.rows() * g.cols()));
  for (int64_t n = 0; n < is.n; ++n) {
    const T* x = input.data().data() + n * is.c * is.plane();
    const T* cp = x;
    if (!is_pointwise(g)) {
      im2col(x, g, col.data());
      cp = col.data();
    }
    T* y = out + n * ws.n * g.cols();
    MatMap<T>(y, ws.n, g.cols()).noalias() = w * ConstMatMap<T>(cp, g.rows(), g.cols());
    add_bias(y, params.bias.data().data(), ws.n, g.cols());
  }
  return result;
}

// -----------------------------------------------------------------------------
// conv_transpose2d

template <typename T>
BasicDiffArray<T> conv_transpose2d(const BasicDiffArray<T>& input, const BasicDeconvParams<T>& params) {
  const Shape is = input.shape();
  const Shape ws = params.weight.shape();
  if (ws.n != is.c)
    throw ShapeError("conv_transpose2d: input " + is.str() + " incompatible with weight " + ws.str());
  if (params.bias.numel() != ws.c)
    throw ShapeError("conv_transpose2d: bias " + params.bias.shape().str() + " does not match weight " + ws.str());
  if (params.stride < 1 || params.padding < 0 || params.output_padding < 0 ||
      params.output_padding >= params.stride)
    throw ShapeError("conv_transpose2d: invalid stride/padding");
  int64_t out_h = (is.h - 1) * params.stride - 2 * params.padding + ws.h + params.output_padding;
  int64_t out_w = (is.w - 1) * params.stride - 2 * params.padding + ws.w + params.output_padding;
  if (out_h < 1 || out_w < 1) throw ShapeError("conv_transpose2d: empty output for input " + is.str());
  // The window of the forward conv this op is the adjoint of.
  Window g{ws.c, out_h, out_w, ws.h, ws.w, params.stride, params.padding, is.h, is.w};
  Shape os{is.n, ws.c, out_h, out_w};

  BasicDiffArray<T> result = detail::make_result<T>(
      os, {input.node(), params.weight.node(), params.bias.node()}, [g](Node<T>& self) {
        Node<T>& in = *self.inputs[0];
        Node<T>& weight = *self.inputs[1];
        Node<T>& bias = *self.inputs[2];
        const int64_t cin = weight.shape.n;
        ConstMatMap<T> w(weight.data.data(), cin, g.rows());
        std::vector<T> col(static_cast<size_t>(g.rows() * g.cols()));
        for (int64_t n = 0; n < in.shape.n; ++n) {
          im2col(self.grad.data() + n * g.channels * g.in_h * g.in_w, g, col.data());
          ConstMatMap<T> cm(col.data(), g.rows(), g.cols());
          if (in.requires_grad) {
            MatMap<T> gx(in.grad_buffer().data() + n * cin * g.cols(), cin, g.cols());
            gx.noalias() += w * cm;
          }
          if (weight.requires_grad) {
            ConstMatMap<T> x(in.data.data() + n * cin * g.cols(), cin, g.cols());
            MatMap<T>(weight.grad_buffer().data(), cin, g.rows()).noalias() += x * cm.transpose();
          }
        }
        if (bias.requires_grad) accumulate_bias_grad(bias.grad_buffer(), self.grad, self.shape);
      });

  T* out = result.node()->data.data();
  ConstMatMap<T> w(params.weight.data().data(), ws.n, g.rows());
  std::vector<T> col(static_cast<size_t>(g.rows() * g.cols()));
  for (int64_t n = 0; n < is.n; ++n) {
    ConstMatMap<T> x(input.data().data() + n * is.c * is.plane(), is.c, is.plane());
    MatMap<T>(col.data(), g.rows(), g.cols()).noalias() = w.transpose() * x;
    T* y = out + n * os.c * os.plane();
    col2im(col.data(), g, y);
    add_bias(y, params.bias.data().data(), os.c, os.plane());
  }
  return result;
}

// -----------------------------------------------------------------------------
// deformable_conv2d

namespace {

// Bilinear read with zero outside the image.
template <typename T>
struct ZeroPadTap {
  int64_t y0, x0;
  T ly, lx;
  bool inside;
};

template <typename T>
inline ZeroPadTap<T> zero_pad_tap(T py, T px, int64_t h, int64_t w) {
  ZeroPadTap<T> t{};
  if (!(py > -T(1.0) && py < static_cast<T>(h) && px > -T(1.0) && px < static_cast<T>(w))) {
    t.inside = false;
    return t;
  }
  t.inside = true;
  T fy = std::floor(py), fx = std::floor(px);
  t.y0 = static_cast<int64_t>(fy);
  t.x0 = static_cast<int64_t>(fx);
  t.ly = py - fy;
  t.lx = px - fx;
  return t;
}

template <typename T>
inline T zero_pad_read(const T* plane, int64_t h, int64_t w, int64_t y, int64_t x) {
  return (y >= 0 && y < h && x >= 0 && x < w) ? plane[y * w + x] : T(0.0);
}

template <typename T>
inline T zero_pad_value(const T* plane, int64_t h, int64_t w, const ZeroPadTap<T>& t) {
  if (!t.inside) return T(0.0);
  T v1 = zero_pad_read(plane, h, w, t.y0, t.x0);
  T v2 = zero_pad_read(plane, h, w, t.y0, t.x0 + 1);
  T v3 = zero_pad_read(plane, h, w, t.y0 + 1, t.x0);
  T v4 = zero_pad_read(plane, h, w, t.y0 + 1, t.x0 + 1);
  T hy = T(1.0) - t.ly, hx = T(1.0) - t.lx;
  return hy * hx * v1 + hy * t.lx * v2 + t.ly * hx * v3 + t.ly * t.lx * v4;
}

template <typename T>
struct DeformGeometry {
  Window win;
  int64_t taps() const { return win.k_h * win.k_w; }
  // Sampling position of tap k at output (oy, ox) given its offset.
  T pos_y(int64_t oy, int64_t k, T dy) const {
    return static_cast<T>(oy * win.stride - win.pad + k / win.k_w) + dy;
  }
  T pos_x(int64_t ox, int64_t k, T dx) const {
    return static_cast<T>(ox * win.stride - win.pad + k % win.k_w) + dx;
  }
};

template <typename T>
void deform_im2col(const T* x, const T* off, const DeformGeometry<T>& dg, T* col) {
  const Window& g = dg.win;
  parallel_for(g.channels, [&](int64_t c0, int64_t c1) {
    for (int64_t c = c0; c < c1; ++c) {
      const T* plane = x + c * g.in_h * g.in_w;
      for (int64_t k = 0; k < dg.taps(); ++k) {
        const T* offx = off + (2 * k) * g.cols();
        const T* offy = off + (2 * k + 1) * g.cols();
        T* row = col + (c * dg.taps() + k) * g.cols();
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
          for (int64_t ox = 0; ox < g.out_w; ++ox) {
            int64_t p = oy * g.out_w + ox;
            ZeroPadTap<T> t = zero_pad_tap(dg.pos_y(oy, k, offy[p]), dg.pos_x(ox, k, offx[p]), g.in_h, g.in_w);
            row[p] = zero_pad_value(plane, g.in_h, g.in_w, t);
          }
        }
      }
    }
  });
}

}  // namespace

template <typename T>
BasicDiffArray<T> deformable_conv2d(const BasicDiffArray<T>& input, const BasicDiffArray<T>& offsets, const BasicConvParams<T>& params) {
  check_conv_params(input, params, "deformable_conv2d");
  const Shape is = input.shape();
  const Shape ws = params.weight.shape();
  DeformGeometry<T> dg{Window{is.c, is.h, is.w, ws.h, ws.w, params.stride, params.padding,
                           params.out_size(is.h, ws.h), params.out_size(is.w, ws.w)}};
  const Window& g = dg.win;
  const Shape expected_off{is.n, 2 * ws.h * ws.w, g.out_h, g.out_w};
  if (offsets.shape() != expected_off)
    throw ShapeError("deformable_conv2d: offsets " + offsets.shape().str() + " expected " + expected_off.str());
  Shape os{is.n, ws.n, g.out_h, g.out_w};

  BasicDiffArray<T> result = detail::make_result<T>(
      os, {input.node(), offsets.node(), params.weight.node(), params.bias.node()}, [dg](Node<T>& self) {
        const Window& g = dg.win;
        Node<T>& in = *self.inputs[0];
        Node<T>& off = *self.inputs[1];
        Node<T>& weight = *self.inputs[2];
        Node<T>& bias = *self.inputs[3];
        const int64_t cout = weight.shape.n;
        ConstMatMap<T> w(weight.data.data(), cout, g.rows());
        std::vector<T> col(static_cast<size_t>(g.rows() * g.cols()));
        const int64_t in_stride = g.channels * g.in_h * g.in_w;
        const int64_t off_stride = 2 * dg.taps() * g.cols();
        for (int64_t n = 0; n < in.shape.n; ++n) {
          const T* x = in.data.data() + n * in_stride;
          const T* o = off.data.data() + n * off_stride;
          ConstMatMap<T> gy(self.grad.data() + n * cout * g.cols(), cout, g.cols());
          if (weight.requires_grad) {
            deform_im2col(x, o, dg, col.data());
            MatMap<T>(weight.grad_buffer().data(), cout, g.rows()).noalias() +=
                gy * ConstMatMap<T>(col.data(), g.rows(), g.cols()).transpose();
          }
          if (!in.requires_grad && !off.requires_grad) continue;
          // col now holds d(loss)/d(sampled value).
          MatMap<T>(col.data(), g.rows(), g.cols()).noalias() = w.transpose() * gy;
          const T* dcol = col.data();
          if (in.requires_grad) {
            T* gx = in.grad_buffer().data() + n * in_stride;
            parallel_for(g.channels, [&](int64_t c0, int64_t c1) {
              for (int64_t c = c0; c < c1; ++c) {
                T* plane = gx + c * g.in_h * g.in_w;
                for (int64_t k = 0; k < dg.taps(); ++k) {
                  const T* row = dcol + (c * dg.taps() + k) * g.cols();
                  for (int64_t oy = 0; oy < g.out_h; ++oy) {
                    for (int64_t ox = 0; ox < g.out_w; ++ox) {
                      int64_t p = oy * g.out_w + ox;
                      ZeroPadTap<T> t = zero_pad_tap(dg.pos_y(oy, k, o[(2 * k + 1) * g.cols() + p]),
                                                  dg.pos_x(ox, k, o[2 * k * g.cols() + p]), g.in_h, g.in_w);
                      if (!t.inside) continue;
                      T gv = row[p];
                      T hy = T(1.0) - t.ly, hx = T(1.0) - t.lx;
                      auto put = [&](int64_t yy, int64_t xx, T wgt) {
                        if (yy >= 0 && yy < g.in_h && xx >= 0 && xx < g.in_w) plane[yy * g.in_w + xx] += wgt * gv;
                      };
                      put(t.y0, t.x0, hy * hx);
                      put(t.y0, t.x0 + 1, hy * t.lx);
                      put(t.y0 + 1, t.x0, t.ly * hx);
                      put(t.y0 + 1, t.x0 + 1, t.ly * t.lx);
                    }
                  }
                }
              }
            });
          }
          if (off.requires_grad) {
            T* go = off.grad_buffer().data() + n * off_stride;
            parallel_for(dg.taps(), [&](int64_t k0, int64_t k1) {
              for (int64_t k = k0; k < k1; ++k) {
                for (int64_t oy = 0; oy < g.out_h; ++oy) {
                  for (int64_t ox = 0; ox < g.out_w; ++ox) {
                    int64_t p = oy * g.out_w + ox;
                    ZeroPadTap<T> t = zero_pad_tap(dg.pos_y(oy, k, o[(2 * k + 1) * g.cols() + p]),
                                                dg.pos_x(ox, k, o[2 * k * g.cols() + p]), g.in_h, g.in_w);
                    if (!t.inside) continue;
                    double acc_x = 0.0, acc_y = 0.0;
                    for (int64_t c = 0; c < g.channels; ++c) {
                      const T* plane = x + c * g.in_h * g.in_w;
                      T v1 = zero_pad_read(plane, g.in_h, g.in_w, t.y0, t.x0);
                      T v2 = zero_pad_read(plane, g.in_h, g.in_w, t.y0, t.x0 + 1);
                      T v3 = zero_pad_read(plane, g.in_h, g.in_w, t.y0 + 1, t.x0);
                      T v4 = zero_pad_read(plane, g.in_h, g.in_w, t.y0 + 1, t.x0 + 1);
                      double gv = dcol[(c * dg.taps() + k) * g.cols() + p];
                      acc_x += gv * ((T(1.0) - t.ly) * (v2 - v1) + t.ly * (v4 - v3));
                      acc_y += gv * ((T(1.0) - t.lx) * (v3 - v1) + t.lx * (v4 - v2));
                    }
                    go[2 * k * g.cols() + p] += static_cast<T>(acc_x);
                    go[(2 * k + 1) * g.cols() + p] += static_cast<T>(acc_y);
                  }
                }
              }
            });
          }
        }
        if (bias.requires_grad) accumulate_bias_grad(bias.grad_buffer(), self.grad, self.shape);
      });

  T* out = result.node()->data.data();
  ConstMatMap<T> w(params.weight.data().data(), ws.n, g.rows());
  std::vector<T> col(static_cast<size_t>(g.rows() * g.cols()));
  for (int64_t n = 0; n < is.n; ++n) {
    deform_im2col(input.data().data() + n * is.c * is.plane(),
                  offsets.data().data() + n * expected_off.c * g.cols(), dg, col.data());
    T* y = out + n * ws.n * g.cols();
    MatMap<T>(y, ws.n, g.cols()).noalias() = w * ConstMatMap<T>(col.data(), g.rows(), g.cols());
    add_bias(y, params.bias.data().data(), ws.n, g.cols());
  }
  return result;
}

// -----------------------------------------------------------------------------
// bilinear_sample (clamp-to-edge)

namespace {

template <typename T>
struct ClampTap {
  int64_t ya, yb, xa, xb;
  T fy, fx;
};

template <typename T>
inline ClampTap<T> clamp_tap(T y, T x, int64_t h, int64_t w) {
  // Far outside the image both corners clamp to the same edge pixel.
  y = std::isfinite(y) ? std::clamp(y, T(-2.0), static_cast<T>(h + 1)) : T(0.0);
  x = std::isfinite(x) ? std::clamp(x, T(-2.0), static_cast<T>(w + 1)) : T(0.0);
  T fy0 = std::floor(y), fx0 = std::floor(x);
  int64_t y0 = static_cast<int64_t>(fy0), x0 = static_cast<int64_t>(fx0);
  return {std::clamp<int64_t>(y0, 0, h - 1), std::clamp<int64_t>(y0 + 1, 0, h - 1),
          std::clamp<int64_t>(x0, 0, w - 1), std::clamp<int64_t>(x0 + 1, 0, w - 1), y - fy0, x - fx0};
}

}  // namespace

template <typename T>
BasicDiffArray<T> bilinear_sample(const BasicDiffArray<T>& input, const BasicDiffArray<T>& grid) {
  const Shape is = input.shape();
  const Shape gs = grid.shape();
  if (gs.n != is.n) throw ShapeError("bilinear_sample: batch mismatch between input " + is.str() + " and grid " + gs.str());
  if (gs.c != 2) throw ShapeError("bilinear_sample: grid must have 2 channels, got " + gs.str());
  if (is.h < 1 || is.w < 1) throw ShapeError("bilinear_sample: empty input " + is.str());
  Shape os{is.n, is.c, gs.h, gs.w};

  BasicDiffArray<T> result = detail::make_result<T>(os, {input.node(), grid.node()}, [](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    Node<T>& gr = *self.inputs[1];
    const Shape is = in.shape;
    const int64_t cols = self.shape.plane();
    for (int64_t n = 0; n < is.n; ++n) {
      const T* gx = gr.data.data() + n * 2 * cols;
      const T* gy = gx + cols;
      const T* dout = self.grad.data() + n * is.c * cols;
      if (in.requires_grad) {
        T* din = in.grad_buffer().data() + n * is.c * is.plane();
        parallel_for(is.c, [&](int64_t c0, int64_t c1) {
          for (int64_t c = c0; c < c1; ++c) {
            T* plane = din + c * is.plane();
            const T* go = dout + c * cols;
            for (int64_t p = 0; p < cols; ++p) {
              ClampTap<T> t = clamp_tap(gy[p], gx[p], is.h, is.w);
              T g = go[p];
              plane[t.ya * is.w + t.xa] += (T(1.0) - t.fy) * (T(1.0) - t.fx) * g;
              plane[t.ya * is.w + t.xb] += (T(1.0) - t.fy) * t.fx * g;
              plane[t.yb * is.w + t.xa] += t.fy * (T(1.0) - t.fx) * g;
              plane[t.yb * is.w + t.xb] += t.fy * t.fx * g;
            }
          }
        });
      }
      if (gr.requires_grad) {
        T* dg = gr.grad_buffer().data() + n * 2 * cols;
        const T* x = in.data.data() + n * is.c * is.plane();
        parallel_for(cols, [&](int64_t p0, int64_t p1) {
          for (int64_t p = p0; p < p1; ++p) {
            T yv = gy[p], xv = gx[p];
            bool inside_y = std::isfinite(yv) && yv > -T(2.0) && yv < static_cast<T>(is.h + 1);
            bool inside_x = std::isfinite(xv) && xv > -T(2.0) && xv < static_cast<T>(is.w + 1);
            ClampTap<T> t = clamp_tap(yv, xv, is.h, is.w);
            double ax = 0.0, ay = 0.0;
            for (int64_t c = 0; c < is.c; ++c) {
              const T* plane = x + c * is.plane();
              T v1 = plane[t.ya * is.w + t.xa], v2 = plane[t.ya * is.w + t.xb];
              T v3 = plane[t.yb * is.w + t.xa], v4 = plane[t.yb * is.w + t.xb];
              double g = dout[c * cols + p];
              ax += g * ((T(1.0) - t.fy) * (v2 - v1) + t.fy * (v4 - v3));
              ay += g * ((T(1.0) - t.fx) * (v3 - v1) + t.fx * (v4 - v2));
            }
            if (inside_x) dg[p] += static_cast<T>(ax);
            if (inside_y) dg[cols + p] += static_cast<T>(ay);
          }
        }, 256);
      }
    }
  });

  T* out = result.node()->data.data();
  const int64_t cols = os.plane();
  for (int64_t n = 0; n < is.n; ++n) {
    const T* gx = grid.data().data() + n * 2 * cols;
    const T* gy = gx + cols;
    const T* x = input.data().data() + n * is.c * is.plane();
    T* y = out + n * is.c * cols;
    parallel_for(cols, [&](int64_t p0, int64_t p1) {
      for (int64_t p = p0; p < p1; ++p) {
        ClampTap<T> t = clamp_tap(gy[p], gx[p], is.h, is.w);
        T w1 = (T(1.0) - t.fy) * (T(1.0) - t.fx), w2 = (T(1.0) - t.fy) * t.fx;
        T w3 = t.fy * (T(1.0) - t.fx), w4 = t.fy * t.fx;
        for (int64_t c = 0; c < is.c; ++c) {
          const T* plane = x + c * is.plane();
          y[c * cols + p] = w1 * plane[t.ya * is.w + t.xa] + w2 * plane[t.ya * is.w + t.xb] +
                            w3 * plane[t.yb * is.w + t.xa] + w4 * plane[t.yb * is.w + t.xb];
        }
      }
    }, 256);
  }
  return result;
}

// -----------------------------------------------------------------------------
// Resizing and pooling

namespace {

template <typename T>
struct AxisTaps {
  std::vector<int64_t> lo, hi;
  std::vector<T> frac;
};

// Half-pixel centers; sources left of the first center clamp to it.
template <typename T>
AxisTaps<T> bilinear_axis(int64_t in, int64_t out) {
  AxisTaps<T> t;
  t.lo.resize(static_cast<size_t>(out));
  t.hi.resize(static_cast<size_t>(out));
  t.frac.resize(static_cast<size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t i = 0; i < out; ++i) {
    double src = std::max(0.0, (static_cast<double>(i) + 0.5) * scale - 0.5);
    int64_t lo = std::min<int64_t>(static_cast<int64_t>(std::floor(src)), in - 1);
    t.lo[static_cast<size_t>(i)] = lo;
    t.hi[static_cast<size_t>(i)] = std::min<int64_t>(lo + 1, in - 1);
    t.frac[static_cast<size_t>(i)] = static_cast<T>(src - static_cast<double>(lo));
  }
  return t;
}

}  // namespace

template <typename T>
BasicDiffArray<T> resize_bilinear(const BasicDiffArray<T>& input, int64_t out_h, int64_t out_w) {
  const Shape is = input.shape();
  if (out_h < 1 || out_w < 1) throw ShapeError("resize_bilinear: empty output size");
  Shape os{is.n, is.c, out_h, out_w};
  auto ty = std::make_shared<AxisTaps<T>>(bilinear_axis<T>(is.h, out_h));
  auto tx = std::make_shared<AxisTaps<T>>(bilinear_axis<T>(is.w, out_w));

  BasicDiffArray<T> result = detail::make_result<T>(os, {input.node()}, [ty, tx](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    if (!in.requires_grad) return;
    const Shape is = in.shape, os = self.shape;
    T* din = in.grad_buffer().data();
    parallel_for(is.n * is.c, [&](int64_t p0, int64_t p1) {
      for (int64_t p = p0; p < p1; ++p) {
        T* plane = din + p * is.plane();
        const T* g = self.grad.data() + p * os.plane();
        for (int64_t y = 0; y < os.h; ++y) {
          int64_t y0 = ty->lo[y], y1 = ty->hi[y];
          T fy = ty->frac[y];
          for (int64_t x = 0; x < os.w; ++x) {
            int64_t x0 = tx->lo[x], x1 = tx->hi[x];
            T fx = tx->frac[x];
            T v = g[y * os.w + x];
            plane[y0 * is.w + x0] += (T(1.0) - fy) * (T(1.0) - fx) * v;
            plane[y0 * is.w + x1] += (T(1.0) - fy) * fx * v;
            plane[y1 * is.w + x0] += fy * (T(1.0) - fx) * v;
            plane[y1 * is.w + x1] += fy * fx * v;
          }
        }
      }
    });
  });

  T* out = result.node()->data.data();
  const T* src = input.data().data();
  parallel_for(is.n * is.c, [&](int64_t p0, int64_t p1) {
    for (int64_t p = p0; p < p1; ++p) {
      const T* plane = src + p * is.plane();
      T* dst = out + p * os.plane();
      for (int64_t y = 0; y < out_h; ++y) {
        const T* r0 = plane + ty->lo[y] * is.w;
        const T* r1 = plane + ty->hi[y] * is.w;
        T fy = ty->frac[y];
        for (int64_t x = 0; x < out_w; ++x) {
          T fx = tx->frac[x];
          int64_t x0 = tx->lo[x], x1 = tx->hi[x];
          T top = (T(1.0) - fx) * r0[x0] + fx * r0[x1];
          T bot = (T(1.0) - fx) * r1[x0] + fx * r1[x1];
          dst[y * out_w + x] = (T(1.0) - fy) * top + fy * bot;
        }
      }
    }
  });
  return result;
}

template <typename T>
BasicDiffArray<T> upsample_bilinear2x(const BasicDiffArray<T>& input) {
  return resize_bilinear(input, input.shape().h * 2, input.shape().w * 2);
}

template <typename T>
BasicDiffArray<T> upsample_nearest2x(const BasicDiffArray<T>& input) {
  const Shape is = input.shape();
  Shape os{is.n, is.c, is.h * 2, is.w * 2};
  BasicDiffArray<T> result = detail::make_result<T>(os, {input.node()}, [](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    if (!in.requires_grad) return;
    const Shape is = in.shape;
    T* din = in.grad_buffer().data();
    const T* g = self.grad.data();
    for (int64_t p = 0; p < is.n * is.c; ++p)
      for (int64_t y = 0; y < is.h; ++y)
        for (int64_t x = 0; x < is.w; ++x) {
          const T* q = g + p * 4 * is.plane() + (2 * y) * (2 * is.w) + 2 * x;
          din[p * is.plane() + y * is.w + x] += q[0] + q[1] + q[2 * is.w] + q[2 * is.w + 1];
        }
  });
  T* out = result.node()->data.data();
  const T* src = input.data().data();
  for (int64_t p = 0; p < is.n * is.c; ++p)
    for (int64_t y = 0; y < os.h; ++y)
      for (int64_t x = 0; x < os.w; ++x)
        out[p * os.plane() + y * os.w + x] = src[p * is.plane() + (y / 2) * is.w + x / 2];
  return result;
}

template <typename T>
BasicDiffArray<T> avg_pool2x(const BasicDiffArray<T>& input) {
  const Shape is = input.shape();
  if (is.h % 2 != 0 || is.w % 2 != 0) throw ShapeError("avg_pool2x: odd spatial size " + is.str());
  Shape os{is.n, is.c, is.h / 2, is.w / 2};
  BasicDiffArray<T> result = detail::make_result<T>(os, {input.node()}, [](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    if (!in.requires_grad) return;
    const Shape os = self.shape;
    T* din = in.grad_buffer().data();
    const T* g = self.grad.data();
    for (int64_t p = 0; p < os.n * os.c; ++p)
      for (int64_t y = 0; y < os.h; ++y)
        for (int64_t x = 0; x < os.w; ++x) {
          T v = T(0.25) * g[p * os.plane() + y * os.w + x];
          T* q = din + p * 4 * os.plane() + (2 * y) * (2 * os.w) + 2 * x;
          q[0] += v;
          q[1] += v;
          q[2 * os.w] += v;
          q[2 * os.w + 1] += v;
        }
  });
  T* out = result.node()->data.data();
  const T* src = input.data().data();
  for (int64_t p = 0; p < os.n * os.c; ++p)
    for (int64_t y = 0; y < os.h; ++y)
      for (int64_t x = 0; x < os.w; ++x) {
        const T* q = src + p * is.plane() + (2 * y) * is.w + 2 * x;
        out[p * os.plane() + y * os.w + x] = T(0.25) * ((q[0] + q[1]) + (q[is.w] + q[is.w + 1]));
      }
  return result;
}

template <typename T>
BasicDiffArray<T> global_avg_pool(const BasicDiffArray<T>& input) {
  const Shape is = input.shape();
  Shape os{is.n, is.c, 1, 1};
  BasicDiffArray<T> result = detail::make_result<T>(os, {input.node()}, [](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    if (!in.requires_grad) return;
    const int64_t plane = in.shape.plane();
    T* din = in.grad_buffer().data();
    for (int64_t p = 0; p < self.shape.numel(); ++p) {
      T v = self.grad[static_cast<size_t>(p)] / static_cast<T>(plane);
      for (int64_t i = 0; i < plane; ++i) din[p * plane + i] += v;
    }
  });
  T* out = result.node()->data.data();
  const T* src = input.data().data();
  for (int64_t p = 0; p < os.numel(); ++p) {
    double acc = 0.0;
    for (int64_t i = 0; i < is.plane(); ++i) acc += src[p * is.plane() + i];
    out[p] = static_cast<T>(acc / static_cast<double>(is.plane()));
  }
  return result;
}

// -----------------------------------------------------------------------------
// Elementwise

template <typename T>
BasicDiffArray<T> add(const BasicDiffArray<T>& a, const BasicDiffArray<T>& b) {
  BasicDiffArray<T> value = broadcast_binary(a, b, "add", [](T x, T y) { return x + y; });
  Shape out = value.shape();
  return attach<T>(std::move(value), {a.node(), b.node()}, [out](Node<T>& self) {
    for (int i = 0; i < 2; ++i)
      if (self.inputs[i]->requires_grad)
        reduce_broadcast_grad(self.grad, out, *self.inputs[i], [](int64_t) { return 1.0; });
  });
}

template <typename T>
BasicDiffArray<T> sub(const BasicDiffArray<T>& a, const BasicDiffArray<T>& b) {
  BasicDiffArray<T> value = broadcast_binary(a, b, "sub", [](T x, T y) { return x - y; });
  Shape out = value.shape();
  return attach<T>(std::move(value), {a.node(), b.node()}, [out](Node<T>& self) {
    if (self.inputs[0]->requires_grad)
      reduce_broadcast_grad(self.grad, out, *self.inputs[0], [](int64_t) { return 1.0; });
    if (self.inputs[1]->requires_grad)
      reduce_broadcast_grad(self.grad, out, *self.inputs[1], [](int64_t) { return -1.0; });
  });
}

template <typename T>
BasicDiffArray<T> mul(const BasicDiffArray<T>& a, const BasicDiffArray<T>& b) {
  BasicDiffArray<T> value = broadcast_binary(a, b, "mul", [](T x, T y) { return x * y; });
  Shape out = value.shape();
  return attach<T>(std::move(value), {a.node(), b.node()}, [out](Node<T>& self) {
    for (int i = 0; i < 2; ++i) {
      Node<T>& mine = *self.inputs[i];
      if (!mine.requires_grad) continue;
      const Node<T>& other = *self.inputs[1 - i];
      Broadcaster idx(other.shape);
      const T* od = other.data.data();
      if (other.shape == out) {
        reduce_broadcast_grad(self.grad, out, mine, [od](int64_t k) { return od[k]; });
      } else {
        const int64_t c = out.c, h = out.h, w = out.w;
        reduce_broadcast_grad(self.grad, out, mine, [&](int64_t k) {
          int64_t x = k % w, y = (k / w) % h, ch = (k / (w * h)) % c, n = k / (w * h * c);
          return od[idx(n, ch, y, x)];
        });
      }
    }
  });
}

template <typename T>
BasicDiffArray<T> affine(const BasicDiffArray<T>& x, std::type_identity_t<T> scale, std::type_identity_t<T> shift) {
  std::vector<T> values(x.data().begin(), x.data().end());
  for (T& v : values) v = scale * v + shift;
  return attach<T>(BasicDiffArray<T>::from(x.shape(), std::move(values)), {x.node()}, [scale](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto g = in.grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) g[i] += scale * self.grad[i];
  });
}

template <typename T>
BasicDiffArray<T> sigmoid(const BasicDiffArray<T>& x) {
  // Clamped so outputs stay strictly inside (0, 1) in T.
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T(1.0) - std::numeric_limits<T>::epsilon() / T(2.0);
  std::vector<T> values(x.data().begin(), x.data().end());
  for (T& v : values) v = std::clamp(static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(v)))), lo, hi);
  return attach<T>(BasicDiffArray<T>::from(x.shape(), std::move(values)), {x.node()}, [](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto g = in.grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) {
      T y = self.data[i];
      g[i] += self.grad[i] * y * (T(1.0) - y);
    }
  });
}

template <typename T>
BasicDiffArray<T> prelu(const BasicDiffArray<T>& x, const BasicDiffArray<T>& slope) {
  const Shape s = x.shape();
  if (slope.numel() != s.c)
    throw ShapeError("prelu: slope " + slope.shape().str() + " does not match input " + s.str());
  std::vector<T> values(x.data().begin(), x.data().end());
  const T* a = slope.data().data();
  for (int64_t n = 0; n < s.n; ++n)
    for (int64_t c = 0; c < s.c; ++c) {
      T* p = values.data() + (n * s.c + c) * s.plane();
      for (int64_t i = 0; i < s.plane(); ++i)
        if (p[i] < T(0.0)) p[i] *= a[c];
    }
  return attach<T>(BasicDiffArray<T>::from(s, std::move(values)), {x.node(), slope.node()}, [](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    Node<T>& sl = *self.inputs[1];
    const Shape s = in.shape;
    const T* xd = in.data.data();
    const T* g = self.grad.data();
    if (in.requires_grad) {
      T* gx = in.grad_buffer().data();
      for (int64_t n = 0; n < s.n; ++n)
        for (int64_t c = 0; c < s.c; ++c) {
          int64_t base = (n * s.c + c) * s.plane();
          T a = sl.data[static_cast<size_t>(c)];
          for (int64_t i = base; i < base + s.plane(); ++i) gx[i] += xd[i] < T(0.0) ? a * g[i] : g[i];
        }
    }
    if (sl.requires_grad) {
      auto ga = sl.grad_buffer();
      for (int64_t c = 0; c < s.c; ++c) {
        double acc = 0.0;
        for (int64_t n = 0; n < s.n; ++n) {
          int64_t base = (n * s.c + c) * s.plane();
          for (int64_t i = base; i < base + s.plane(); ++i)
            if (xd[i] < T(0.0)) acc += static_cast<double>(xd[i]) * g[i];
        }
        ga[static_cast<size_t>(c)] += static_cast<T>(acc);
      }
    }
  });
}

// -----------------------------------------------------------------------------
// Structural

template <typename T>
BasicDiffArray<T> concat_channels(const std::vector<BasicDiffArray<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  Shape os = parts.front().shape();
  os.c = 0;
  std::vector<std::shared_ptr<Node<T>>> inputs;
  for (const BasicDiffArray<T>& p : parts) {
    const Shape& s = p.shape();
    if (s.n != os.n || s.h != os.h || s.w != os.w)
      throw ShapeError("concat_channels: " + s.str() + " incompatible with " + parts.front().shape().str());
    os.c += s.c;
    inputs.push_back(p.node());
  }
  BasicDiffArray<T> result = detail::make_result<T>(os, std::move(inputs), [](Node<T>& self) {
    const Shape os = self.shape;
    int64_t c_off = 0;
    for (auto& in : self.inputs) {
      const int64_t block = in->shape.c * os.plane();
      if (in->requires_grad) {
        T* g = in->grad_buffer().data();
        for (int64_t n = 0; n < os.n; ++n) {
          const T* src = self.grad.data() + (n * os.c + c_off) * os.plane();
          T* dst = g + n * block;
          for (int64_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
      c_off += in->shape.c;
    }
  });
  T* out = result.node()->data.data();
  int64_t c_off = 0;
  for (const BasicDiffArray<T>& p : parts) {
    const int64_t block = p.shape().c * os.plane();
    for (int64_t n = 0; n < os.n; ++n)
      std::copy_n(p.data().data() + n * block, block, out + (n * os.c + c_off) * os.plane());
    c_off += p.shape().c;
  }
  return result;
}

template <typename T>
BasicDiffArray<T> slice_channels(const BasicDiffArray<T>& x, int64_t begin, int64_t count) {
  const Shape is = x.shape();
  if (begin < 0 || count < 1 || begin + count > is.c)
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + is.str());
  Shape os{is.n, count, is.h, is.w};
  BasicDiffArray<T> result = detail::make_result<T>(os, {x.node()}, [begin](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    if (!in.requires_grad) return;
    const Shape os = self.shape;
    T* g = in.grad_buffer().data();
    const int64_t block = os.c * os.plane();
    for (int64_t n = 0; n < os.n; ++n) {
      T* dst = g + (n * in.shape.c + begin) * os.plane();
      const T* src = self.grad.data() + n * block;
      for (int64_t i = 0; i < block; ++i) dst[i] += src[i];
    }
  });
  T* out = result.node()->data.data();
  const int64_t block = count * is.plane();
  for (int64_t n = 0; n < is.n; ++n)
    std::copy_n(x.data().data() + (n * is.c + begin) * is.plane(), block, out + n * block);
  return result;
}

// -----------------------------------------------------------------------------
// Reductions

template <typename T>
BasicDiffArray<T> sum(const BasicDiffArray<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += v;
  return attach<T>(BasicDiffArray<T>::full({1, 1, 1, 1}, static_cast<T>(acc)), {x.node()}, [](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto g = in.grad_buffer();
    for (T& v : g) v += self.grad[0];
  });
}

template <typename T>
BasicDiffArray<T> mean(const BasicDiffArray<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += v;
  const double n = static_cast<double>(x.numel());
  return attach<T>(BasicDiffArray<T>::full({1, 1, 1, 1}, static_cast<T>(acc / n)), {x.node()}, [n](Node<T>& self) {
    Node<T>& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto g = in.grad_buffer();
    T v = static_cast<T>(self.grad[0] / n);
    for (T& gv : g) gv += v;
  });
}

template <typename T>
BasicDiffArray<T> l1_loss(const BasicDiffArray<T>& prediction, const BasicDiffArray<T>& target) {
  require_same_shape(prediction, target, "l1_loss");
  double acc = 0.0;
  auto p = prediction.data();
  auto t = target.data();
  for (size_t i = 0; i < p.size(); ++i) acc += std::abs(static_cast<double>(p[i]) - static_cast<double>(t[i]));
  const double n = static_cast<double>(prediction.numel());
  return attach<T>(BasicDiffArray<T>::full({1, 1, 1, 1}, static_cast<T>(acc / n)), {prediction.node(), target.node()},
                [n](Node<T>& self) {
                  Node<T>& pr = *self.inputs[0];
                  Node<T>& tg = *self.inputs[1];
                  T scale = static_cast<T>(self.grad[0] / n);
                  auto sign = [](T d) { return static_cast<T>((d > T(0.0)) - (d < T(0.0))); };
                  if (pr.requires_grad) {
                    auto g = pr.grad_buffer();
                    for (size_t i = 0; i < g.size(); ++i) g[i] += scale * sign(pr.data[i] - tg.data[i]);
                  }
                  if (tg.requires_grad) {
                    auto g = tg.grad_buffer();
                    for (size_t i = 0; i < g.size(); ++i) g[i] -= scale * sign(pr.data[i] - tg.data[i]);
                  }
                });
}

#define HSTR_INSTANTIATE_OPS(T)                                                                       \
  template BasicDiffArray<T> conv2d(const BasicDiffArray<T>&, const BasicConvParams<T>&);            \
  template BasicDiffArray<T> conv_transpose2d(const BasicDiffArray<T>&, const BasicDeconvParams<T>&); \
  template BasicDiffArray<T> deformable_conv2d(const BasicDiffArray<T>&, const BasicDiffArray<T>&,     \
                                               const BasicConvParams<T>&);                             \
  template BasicDiffArray<T> bilinear_sample(const BasicDiffArray<T>&, const BasicDiffArray<T>&);     \
  template BasicDiffArray<T> resize_bilinear(const BasicDiffArray<T>&, int64_t, int64_t);             \
  template BasicDiffArray<T> upsample_bilinear2x(const BasicDiffArray<T>&);                           \
  template BasicDiffArray<T> upsample_nearest2x(const BasicDiffArray<T>&);                            \
  template BasicDiffArray<T> avg_pool2x(const BasicDiffArray<T>&);                                    \
  template BasicDiffArray<T> global_avg_pool(const BasicDiffArray<T>&);                               \
  template BasicDiffArray<T> add(const BasicDiffArray<T>&, const BasicDiffArray<T>&);                 \
  template BasicDiffArray<T> sub(const BasicDiffArray<T>&, const BasicDiffArray<T>&);                 \
  template BasicDiffArray<T> mul(const BasicDiffArray<T>&, const BasicDiffArray<T>&);                 \
  template BasicDiffArray<T> affine(const BasicDiffArray<T>&, std::type_identity_t<T>,                \
                                    std::type_identity_t<T>);                                         \
  template BasicDiffArray<T> sigmoid(const BasicDiffArray<T>&);                                       \
  template BasicDiffArray<T> prelu(const BasicDiffArray<T>&, const BasicDiffArray<T>&);               \
  template BasicDiffArray<T> concat_channels(const std::vector<BasicDiffArray<T>>&);                  \
  template BasicDiffArray<T> slice_channels(const BasicDiffArray<T>&, int64_t, int64_t);              \
  template BasicDiffArray<T> sum(const BasicDiffArray<T>&);                                           \
  template BasicDiffArray<T> mean(const BasicDiffArray<T>&);                                          \
  template BasicDiffArray<T> l1_loss(const BasicDiffArray<T>&, const BasicDiffArray<T>&);

HSTR_INSTANTIATE_OPS(float)
HSTR_INSTANTIATE_OPS(double)

}  // namespace hstr
