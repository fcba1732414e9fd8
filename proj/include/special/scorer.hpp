#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "special/grid.hpp"
#include "special/rng.hpp"

namespace special {

// Class names in index order plus optional scoring prompts.
class ClassVocabulary {
public:
    ClassVocabulary() = default;
    explicit ClassVocabulary(std::vector<std::string> names,
                             std::map<std::string, std::string> aliases = {});

    std::size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    const std::map<std::string, std::string>& aliases() const { return aliases_; }
    const std::string& name(std::size_t k) const { return names_.at(k); }
    // The alias if one is registered, otherwise the class name.
    const std::string& prompt(std::size_t k) const;

    static ClassVocabulary load(const std::filesystem::path& classes_txt,
                                const std::filesystem::path& aliases_txt = {});
    void save(const std::filesystem::path& classes_txt, const std::filesystem::path& aliases_txt) const;

    friend bool operator==(const ClassVocabulary&, const ClassVocabulary&) = default;

private:
    std::vector<std::string> names_;
    std::map<std::string, std::string> aliases_;
};

// Where a window sits inside the (possibly rescaled) full frame.
struct WindowContext {
    std::size_t row0 = 0;
    std::size_t col0 = 0;
    std::size_t frame_height = 0;
    std::size_t frame_width = 0;
    double scale = 1.0;
};

// Dense open-vocabulary scoring: one raw score per class per window pixel.
// Implementations must be safe to call concurrently.
class DenseScorer {
public:
    virtual ~DenseScorer() = default;
    virtual ScoreMap score(const RgbImage& window, const ClassVocabulary& vocab,
                           const WindowContext& where) const = 0;
};

// Serves windows cropped from full-frame score maps exported per scale as
// `scores_s{factor}.ptf` ([H_s][W_s][K]).
class FileScorer final : public DenseScorer {
public:
    FileScorer(const std::filesystem::path& dir, const std::vector<double>& scales,
               std::size_t num_classes);

    ScoreMap score(const RgbImage& window, const ClassVocabulary& vocab,
                   const WindowContext& where) const override;

    static std::string file_name(double scale);
    // Scale factor encoded in a `scores_s{factor}.ptf` name, if it is one.
    static std::optional<double> parse_scale(const std::string& file_name);
    // Scales with an export present in `dir`, ascending.
    static std::vector<double> available_scales(const std::filesystem::path& dir);

private:
    const ScoreMap& frame(double scale) const;

    std::vector<std::pair<double, ScoreMap>> frames_;
};

// Noise-corrupted oracle: each ground-truth pixel scores `sharpness` on its
// true class, or on a uniformly drawn wrong class with probability
// `flip_prob`; every other class scores 0. Rescaled frames map back to the
// ground-truth pixel under the sample centre, so one flip decision covers
// every scale.
class SyntheticScorer final : public DenseScorer {
public:
    SyntheticScorer(LabelMap gt, std::size_t num_classes, float flip_prob, float sharpness,
                    std::uint64_t key);

    ScoreMap score(const RgbImage& window, const ClassVocabulary& vocab,
                   const WindowContext& where) const override;

    // Class that scores `sharpness` at a ground-truth pixel.
    std::uint16_t emitted_class(std::size_t y, std::size_t x) const;

private:
    LabelMap gt_;
    std::size_t num_classes_;
    float flip_prob_;
    float sharpness_;
    std::uint64_t key_;
};

std::unique_ptr<SyntheticScorer> make_synthetic_scorer(const LabelMap& gt, std::size_t num_classes,
                                                       float flip_prob, float sharpness, Rng& rng);

}  // namespace special
