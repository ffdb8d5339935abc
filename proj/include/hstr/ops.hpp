#pragma once

#include <type_traits>
#include <vector>

#include "hstr/tensor.hpp"

namespace hstr {

/// Learnable convolution layer state. weight is (out_ch, in_ch, kh, kw) with
/// odd kh/kw; bias is (1, out_ch, 1, 1).
template <typename T>
struct BasicConvParams {
  BasicDiffArray<T> weight;
  BasicDiffArray<T> bias;
  int stride = 1;
  int padding = 0;

  int64_t out_channels() const { return weight.shape().n; }
  int64_t in_channels() const { return weight.shape().c; }
  int64_t kernel_h() const { return weight.shape().h; }
  int64_t kernel_w() const { return weight.shape().w; }
  int64_t out_size(int64_t in, int64_t k) const { return (in + 2 * padding - k) / stride + 1; }
};

/// Transposed convolution state. weight is (in_ch, out_ch, kh, kw) so that the
/// forward pass is the adjoint of a conv2d with the same tensor.
template <typename T>
struct BasicDeconvParams {
  BasicDiffArray<T> weight;
  BasicDiffArray<T> bias;
  int stride = 2;
  int padding = 0;
  int output_padding = 0;
};

using ConvParams = BasicConvParams<float>;
using DeconvParams = BasicDeconvParams<float>;

// All ops are instantiated for float and double.

// Convolutions ---------------------------------------------------------------

template <typename T>
BasicDiffArray<T> conv2d(const BasicDiffArray<T>& input, const BasicConvParams<T>& params);
template <typename T>
BasicDiffArray<T> conv_transpose2d(const BasicDiffArray<T>& input, const BasicDeconvParams<T>& params);

/// Convolution whose taps sample bilinearly at their grid position plus a
/// per-location offset. offsets is (n, 2*kh*kw, h_out, w_out) with channel
/// 2k holding dx and 2k+1 holding dy for tap k = ky*kw + kx. Samples that fall
/// outside the image read zero, matching conv2d's zero padding.
template <typename T>
BasicDiffArray<T> deformable_conv2d(const BasicDiffArray<T>& input, const BasicDiffArray<T>& offsets,
                                    const BasicConvParams<T>& params);

// Resampling -----------------------------------------------------------------

/// Bilinear sampling at absolute pixel coordinates. grid is (n, 2, h, w) with
/// channel 0 = x and channel 1 = y. Out-of-range coordinates clamp to the edge.
template <typename T>
BasicDiffArray<T> bilinear_sample(const BasicDiffArray<T>& input, const BasicDiffArray<T>& grid);

/// Bilinear resize with half-pixel centers and edge clamping.
template <typename T>
BasicDiffArray<T> resize_bilinear(const BasicDiffArray<T>& input, int64_t out_h, int64_t out_w);
template <typename T>
BasicDiffArray<T> upsample_bilinear2x(const BasicDiffArray<T>& input);
template <typename T>
BasicDiffArray<T> upsample_nearest2x(const BasicDiffArray<T>& input);
/// 2x2 mean pooling; height and width must be even.
template <typename T>
BasicDiffArray<T> avg_pool2x(const BasicDiffArray<T>& input);
/// Mean over each (n, c) plane; result is (n, c, 1, 1).
template <typename T>
BasicDiffArray<T> global_avg_pool(const BasicDiffArray<T>& input);

// Elementwise ----------------------------------------------------------------
//
// Binary ops broadcast any operand dimension of size 1.

template <typename T>
BasicDiffArray<T> add(const BasicDiffArray<T>& a, const BasicDiffArray<T>& b);
template <typename T>
BasicDiffArray<T> sub(const BasicDiffArray<T>& a, const BasicDiffArray<T>& b);
template <typename T>
BasicDiffArray<T> mul(const BasicDiffArray<T>& a, const BasicDiffArray<T>& b);
/// scale * x + shift
template <typename T>
BasicDiffArray<T> affine(const BasicDiffArray<T>& x, std::type_identity_t<T> scale,
                         std::type_identity_t<T> shift = T(0));
template <typename T>
BasicDiffArray<T> sigmoid(const BasicDiffArray<T>& x);
/// slope is (1, c, 1, 1).
template <typename T>
BasicDiffArray<T> prelu(const BasicDiffArray<T>& x, const BasicDiffArray<T>& slope);

// Structural -----------------------------------------------------------------

template <typename T>
BasicDiffArray<T> concat_channels(const std::vector<BasicDiffArray<T>>& parts);
template <typename T>
BasicDiffArray<T> slice_channels(const BasicDiffArray<T>& x, int64_t begin, int64_t count);

// Reductions -----------------------------------------------------------------

template <typename T>
BasicDiffArray<T> sum(const BasicDiffArray<T>& x);
template <typename T>
BasicDiffArray<T> mean(const BasicDiffArray<T>& x);
/// Mean absolute difference; gradient sign(p - t) / N.
template <typename T>
BasicDiffArray<T> l1_loss(const BasicDiffArray<T>& prediction, const BasicDiffArray<T>& target);

}  // namespace hstr
