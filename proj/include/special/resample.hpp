#pragma once

#include <array>

#include "special/grid.hpp"

namespace special {

inline constexpr double kCatmullRomA = -0.5;

// Cubic convolution kernel (Keys, a = -0.5).
double cubic_kernel(double x);

// Tap weights for sample positions floor(s)-1 .. floor(s)+2, where
// t = s - floor(s) in [0, 1).
std::array<double, 4> cubic_weights(double t);

// Resamples every channel to `out_height` x `out_width`. Output pixel i samples
// source coordinate (i + 0.5) * scale - 0.5 with scale = in / out per axis;
// taps outside the image are clamped to the border.
Image resample_to(const Image& image, std::size_t out_height, std::size_t out_width);

// Output extents are round(H * factor) x round(W * factor) and the source
// coordinate is (dst + 0.5) / factor - 0.5.
Image bicubic_resample(const Image& image, double factor);

}  // namespace special
