#include "special/hsi.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>

namespace special {

void HsiCube::validate() const {
    if (wavelengths.size() != values.channels())
        throw std::invalid_argument(fmt::format("cube: {} wavelengths for {} bands",
                                                wavelengths.size(), values.channels()));
    for (std::size_t b = 1; b < wavelengths.size(); ++b) {
        if (!(wavelengths[b] > wavelengths[b - 1]))
            throw std::invalid_argument("cube: wavelengths must be strictly increasing");
    }
    for (float v : values.data()) {
        if (!std::isfinite(v)) throw std::invalid_argument("cube: non-finite value");
    }
}

Image interpolate_band(const HsiCube& cube, double wavelength_nm) {
    const auto& wl = cube.wavelengths;
    const std::size_t nb = cube.bands();
    if (nb < 2) throw std::invalid_argument("interpolate_rgb: need at least 2 bands");

    std::size_t lo = 0;
    std::size_t hi = 0;
    double t = 0.0;
    if (wavelength_nm <= wl.front()) {
        lo = hi = 0;
    } else if (wavelength_nm >= wl.back()) {
        lo = hi = nb - 1;
    } else {
        hi = static_cast<std::size_t>(std::upper_bound(wl.begin(), wl.end(), wavelength_nm) - wl.begin());
        lo = hi - 1;
        if (wl[lo] == wavelength_nm) {
            hi = lo;
        } else {
            t = (wavelength_nm - wl[lo]) / (wl[hi] - wl[lo]);
        }
    }

    Image plane(cube.values.height(), cube.values.width(), 1);
    for (std::size_t p = 0; p < plane.pixels(); ++p) {
        const auto px = cube.values.pixel(p);
        const double a = px[lo];
        const double b = px[hi];
        plane.data()[p] = static_cast<float>(a + t * (b - a));
    }
    return plane;
}

namespace {

double percentile(std::vector<float> values, double pct) {
    // Linear interpolation between closest ranks.
    const double pos = pct / 100.0 * static_cast<double>(values.size() - 1);
    const auto k = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(k);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
    const double a = values[k];
    if (frac == 0.0 || k + 1 >= values.size()) return a;
    const double b = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(k) + 1, values.end());
    return a + frac * (b - a);
}

}  // namespace

void stretch_channels(Image& image, double lo_pct, double hi_pct) {
    if (image.empty()) return;
    const std::size_t nc = image.channels();
    for (std::size_t c = 0; c < nc; ++c) {
        std::vector<float> channel(image.pixels());
        for (std::size_t p = 0; p < image.pixels(); ++p) channel[p] = image.pixel(p)[c];
        const double lo = percentile(channel, lo_pct);
        const double hi = percentile(std::move(channel), hi_pct);
        const double span = hi - lo;
        for (std::size_t p = 0; p < image.pixels(); ++p) {
            float& v = image.pixel(p)[c];
            if (span <= 0.0) {
                v = 0.5f;
            } else {
                v = static_cast<float>(std::clamp((v - lo) / span, 0.0, 1.0));
            }
        }
    }
}

RgbImage interpolate_rgb(const HsiCube& cube) {
    const Image r = interpolate_band(cube, kRedNm);
    const Image g = interpolate_band(cube, kGreenNm);
    const Image b = interpolate_band(cube, kBlueNm);
    RgbImage rgb(cube.values.height(), cube.values.width(), 3);
    for (std::size_t p = 0; p < rgb.pixels(); ++p) {
        auto px = rgb.pixel(p);
        px[0] = r.data()[p];
        px[1] = g.data()[p];
        px[2] = b.data()[p];
    }
    stretch_channels(rgb);
    return rgb;
}

BandStats band_stats(const HsiCube& cube) {
    const std::size_t nb = cube.bands();
    const std::size_t n = cube.values.pixels();
    BandStats stats{std::vector<double>(nb, 0.0), std::vector<double>(nb, 0.0)};
    if (n == 0) {
        std::fill(stats.stddev.begin(), stats.stddev.end(), 1.0);
        return stats;
    }
    for (std::size_t p = 0; p < n; ++p) {
        const auto px = cube.values.pixel(p);
        for (std::size_t b = 0; b < nb; ++b) stats.mean[b] += px[b];
    }
    for (auto& m : stats.mean) m /= static_cast<double>(n);
    for (std::size_t p = 0; p < n; ++p) {
        const auto px = cube.values.pixel(p);
        for (std::size_t b = 0; b < nb; ++b) {
            const double d = px[b] - stats.mean[b];
            stats.stddev[b] += d * d;
        }
    }
    for (auto& s : stats.stddev) s = std::max(std::sqrt(s / static_cast<double>(n)), kStdFloor);
    return stats;
}

HsiCube apply_band_stats(const HsiCube& cube, const BandStats& stats) {
    if (stats.mean.size() != cube.bands() || stats.stddev.size() != cube.bands())
        throw std::invalid_argument("band stats do not match cube band count");
    HsiCube out{cube.values, cube.wavelengths};
    const std::size_t nb = cube.bands();
    for (std::size_t p = 0; p < out.values.pixels(); ++p) {
        auto px = out.values.pixel(p);
        for (std::size_t b = 0; b < nb; ++b)
            px[b] = static_cast<float>((px[b] - stats.mean[b]) / stats.stddev[b]);
    }
    return out;
}

std::pair<HsiCube, BandStats> normalize_spectra(const HsiCube& cube) {
    auto stats = band_stats(cube);
    auto out = apply_band_stats(cube, stats);
    return {std::move(out), std::move(stats)};
}

void add_gaussian_noise(std::span<float> values, float std, Rng& rng) {
    if (!(std >= 0.0f)) throw std::invalid_argument("add_gaussian_noise: std must be >= 0");
    if (std == 0.0f) return;
    std::normal_distribution<float> noise(0.0f, std);
    for (float& v : values) v += noise(rng);
}

std::vector<double> read_wavelengths(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(fmt::format("cannot open wavelength file {}", path.string()));
    std::vector<double> wl;
    std::string line;
    while (std::getline(in, line)) {
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        wl.push_back(std::stod(line.substr(first)));
    }
    return wl;
}

void write_wavelengths(const std::vector<double>& wavelengths, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
    for (double w : wavelengths) out << fmt::format("{}\n", w);
}

}  // namespace special
