#pragma once

#include <cstdint>

#include "special/grid.hpp"
#include "special/hsi.hpp"
#include "special/scorer.hpp"

namespace special {

// Seeded toy scene: Voronoi regions, one Gaussian bump per
// class on a flat baseline, i.i.d. band noise.
struct SceneConfig {
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t classes = 4;
    std::size_t bands = 16;
    std::size_t regions = 16;
    double first_nm = 400.0;
    double last_nm = 1000.0;
    double baseline = 0.2;
    double bump_height = 0.6;
    double bump_width_nm = 60.0;
    // Within-class standard deviation of every band.
    double noise_std = 0.1;
    std::uint64_t seed = 42;
};

struct SyntheticScene {
    HsiCube cube;
    LabelMap gt;
    ClassVocabulary vocab;
    // Noise-free class spectra, [classes][bands].
    std::vector<std::vector<double>> class_means;
};

SyntheticScene make_scene(const SceneConfig& cfg);

}  // namespace special
