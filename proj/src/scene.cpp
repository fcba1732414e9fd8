#include "special/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace special {

SyntheticScene make_scene(const SceneConfig& cfg) {
    if (cfg.height == 0 || cfg.width == 0) throw std::invalid_argument("scene: empty extent");
    if (cfg.classes < 1 || cfg.classes >= kIgnoreLabel) throw std::invalid_argument("scene: bad class count");
    if (cfg.bands < 2) throw std::invalid_argument("scene: need at least two bands");
    if (cfg.regions < cfg.classes) throw std::invalid_argument("scene: fewer regions than classes");
    if (!(cfg.last_nm > cfg.first_nm)) throw std::invalid_argument("scene: wavelength range is empty");

    Rng rng(cfg.seed);
    SyntheticScene scene;

    auto& wl = scene.cube.wavelengths;
    wl.resize(cfg.bands);
    for (std::size_t b = 0; b < cfg.bands; ++b)
        wl[b] = cfg.first_nm + (cfg.last_nm - cfg.first_nm) * static_cast<double>(b) /
                                   static_cast<double>(cfg.bands - 1);

    // Bump centres spread evenly inside the sampled range.
    scene.class_means.assign(cfg.classes, std::vector<double>(cfg.bands));
    const double span = cfg.last_nm - cfg.first_nm;
    for (std::size_t k = 0; k < cfg.classes; ++k) {
        const double centre = cfg.first_nm + span * (static_cast<double>(k) + 0.5) / static_cast<double>(cfg.classes);
        for (std::size_t b = 0; b < cfg.bands; ++b) {
            const double d = (wl[b] - centre) / cfg.bump_width_nm;
            scene.class_means[k][b] = cfg.baseline + cfg.bump_height * std::exp(-0.5 * d * d);
        }
    }

    // Region seeds; every class owns at least one region.
    std::uniform_real_distribution<double> uy(0.0, static_cast<double>(cfg.height));
    std::uniform_real_distribution<double> ux(0.0, static_cast<double>(cfg.width));
    std::vector<std::pair<double, double>> seeds(cfg.regions);
    for (auto& s : seeds) s = {uy(rng), ux(rng)};
    std::vector<std::uint16_t> region_class(cfg.regions);
    for (std::size_t r = 0; r < cfg.regions; ++r) region_class[r] = static_cast<std::uint16_t>(r % cfg.classes);
    std::shuffle(region_class.begin(), region_class.end(), rng);

    scene.gt = LabelMap(cfg.height, cfg.width, std::uint16_t{0});
    for (std::size_t y = 0; y < cfg.height; ++y) {
        for (std::size_t x = 0; x < cfg.width; ++x) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t owner = 0;
            for (std::size_t r = 0; r < cfg.regions; ++r) {
                const double dy = static_cast<double>(y) + 0.5 - seeds[r].first;
                const double dx = static_cast<double>(x) + 0.5 - seeds[r].second;
                const double d = dy * dy + dx * dx;
                if (d < best) {
                    best = d;
                    owner = r;
                }
            }
            scene.gt(y, x) = region_class[owner];
        }
    }

    scene.cube.values = Image(cfg.height, cfg.width, cfg.bands);
    std::normal_distribution<double> noise(0.0, cfg.noise_std);
    for (std::size_t p = 0; p < scene.gt.pixels(); ++p) {
        const auto& mean = scene.class_means[scene.gt.data()[p]];
        auto px = scene.cube.values.pixel(p);
        for (std::size_t b = 0; b < cfg.bands; ++b) px[b] = static_cast<float>(mean[b] + noise(rng));
    }

    std::vector<std::string> names;
    for (std::size_t k = 0; k < cfg.classes; ++k) names.push_back(fmt::format("class{}", k));
    scene.vocab = ClassVocabulary(std::move(names));
    return scene;
}

}  // namespace special
