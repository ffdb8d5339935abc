#pragma once

#include "hstr/imageops.hpp"

namespace hstr {

/// 10 log10(1 / MSE) over all pixels and channels, peak 1. +inf when equal.
double psnr(const Frame& a, const Frame& b);

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2,
/// C2 = 0.03^2, population statistics, mean over valid window positions
/// and channels. Both sides must be at least 11 pixels.
double ssim(const Frame& a, const Frame& b);

}  // namespace hstr
