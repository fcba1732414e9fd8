#include "special/resample.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace special {

double cubic_kernel(double x) {
    constexpr double a = kCatmullRomA;
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
}

std::array<double, 4> cubic_weights(double t) {
    return {cubic_kernel(t + 1.0), cubic_kernel(t), cubic_kernel(1.0 - t), cubic_kernel(2.0 - t)};
}

namespace {

struct Taps {
    std::array<std::size_t, 4> index;
    std::array<double, 4> weight;
};

// Per-output-position taps along one axis.
std::vector<Taps> axis_taps(std::size_t in, std::size_t out, double inv_scale) {
    std::vector<Taps> taps(out);
    const auto last = static_cast<std::ptrdiff_t>(in) - 1;
    for (std::size_t i = 0; i < out; ++i) {
        const double src = (static_cast<double>(i) + 0.5) * inv_scale - 0.5;
        const double base = std::floor(src);
        const auto b = static_cast<std::ptrdiff_t>(base);
        taps[i].weight = cubic_weights(src - base);
        for (std::ptrdiff_t k = 0; k < 4; ++k)
            taps[i].index[k] = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(b - 1 + k, 0, last));
    }
    return taps;
}

Image separable(const Image& image, std::size_t out_h, std::size_t out_w, double inv_sy, double inv_sx) {
    if (out_h == 0 || out_w == 0) throw std::invalid_argument("resample: output extent is zero");
    if (image.empty()) throw std::invalid_argument("resample: empty input");
    const std::size_t nc = image.channels();
    const auto rows = axis_taps(image.height(), out_h, inv_sy);
    const auto cols = axis_taps(image.width(), out_w, inv_sx);

    // Horizontal pass into a double buffer [H][out_w][C], then vertical.
    std::vector<double> tmp(image.height() * out_w * nc, 0.0);
    for (std::size_t y = 0; y < image.height(); ++y) {
        for (std::size_t x = 0; x < out_w; ++x) {
            double* dst = &tmp[(y * out_w + x) * nc];
            for (int k = 0; k < 4; ++k) {
                const double w = cols[x].weight[k];
                if (w == 0.0) continue;
                const float* src = &image(y, cols[x].index[k]);
                for (std::size_t c = 0; c < nc; ++c) dst[c] += w * src[c];
            }
        }
    }
    Image out(out_h, out_w, nc);
    std::vector<double> acc(nc);
    for (std::size_t y = 0; y < out_h; ++y) {
        for (std::size_t x = 0; x < out_w; ++x) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int k = 0; k < 4; ++k) {
                const double w = rows[y].weight[k];
                if (w == 0.0) continue;
                const double* src = &tmp[(rows[y].index[k] * out_w + x) * nc];
                for (std::size_t c = 0; c < nc; ++c) acc[c] += w * src[c];
            }
            for (std::size_t c = 0; c < nc; ++c) out(y, x, c) = static_cast<float>(acc[c]);
        }
    }
    return out;
}

}  // namespace

Image resample_to(const Image& image, std::size_t out_height, std::size_t out_width) {
    const double inv_sy = out_height ? static_cast<double>(image.height()) / static_cast<double>(out_height) : 0.0;
    const double inv_sx = out_width ? static_cast<double>(image.width()) / static_cast<double>(out_width) : 0.0;
    return separable(image, out_height, out_width, inv_sy, inv_sx);
}

Image bicubic_resample(const Image& image, double factor) {
    if (!(factor > 0.0)) throw std::invalid_argument("resample: factor must be positive");
    const auto out_h = static_cast<std::size_t>(std::llround(static_cast<double>(image.height()) * factor));
    const auto out_w = static_cast<std::size_t>(std::llround(static_cast<double>(image.width()) * factor));
    return separable(image, out_h, out_w, 1.0 / factor, 1.0 / factor);
}

}  // namespace special
