#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "special/grid.hpp"
#include "special/rng.hpp"

namespace special {

// Hyperspectral cube: values [H][W][B] plus one wavelength (nm) per band.
struct HsiCube {
    Image values;
    std::vector<double> wavelengths;

    std::size_t bands() const { return values.channels(); }
    // Throws std::invalid_argument if wavelengths are not strictly increasing,
    // do not match the band count, or any value is non-finite.
    void validate() const;
};

struct BandStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

inline constexpr double kRedNm = 655.0;
inline constexpr double kGreenNm = 553.0;
inline constexpr double kBlueNm = 451.0;
inline constexpr double kStdFloor = 1e-8;

// One [H][W] plane linearly interpolated at `wavelength_nm`, clamped to the
// end bands outside the sampled range.
Image interpolate_band(const HsiCube& cube, double wavelength_nm);

// Per-channel 2nd-98th percentile stretch with clamping to [0, 1].
void stretch_channels(Image& image, double lo_pct = 2.0, double hi_pct = 98.0);

// False-colour proxy from the bands around 655/553/451 nm.
RgbImage interpolate_rgb(const HsiCube& cube);

BandStats band_stats(const HsiCube& cube);
HsiCube apply_band_stats(const HsiCube& cube, const BandStats& stats);
// Per-band z-score over all pixels.
std::pair<HsiCube, BandStats> normalize_spectra(const HsiCube& cube);

// Adds i.i.d. N(0, std^2) to every element in place.
void add_gaussian_noise(std::span<float> values, float std, Rng& rng);

std::vector<double> read_wavelengths(const std::filesystem::path& path);
void write_wavelengths(const std::vector<double>& wavelengths, const std::filesystem::path& path);

}  // namespace special
