#pragma once

#include <cstdint>
#include <vector>

#include "special/grid.hpp"
#include "special/scorer.hpp"

namespace special {

inline constexpr float kDefaultTemperature = 0.01f;

// Upsampling factors fused by fused_score.
class ScaleSet {
public:
    explicit ScaleSet(std::vector<double> factors);
    const std::vector<double>& factors() const { return factors_; }
    std::size_t size() const { return factors_.size(); }

private:
    std::vector<double> factors_;
};

// p_k = exp(s_k / tau) / sum_j exp(s_j / tau), max-subtracted per pixel.
ProbMap softmax_temperature(const ScoreMap& scores, float tau);

// Best-versus-second-best margin per pixel.
ConfidenceMap bvsb(const ProbMap& probs);

// Index of the largest probability; ties go to the lowest index.
LabelMap argmax_labels(const ProbMap& probs);

// Clamps negatives to zero and rescales each pixel to sum 1. A pixel with no
// mass left becomes uniform.
void renormalize(ProbMap& probs);

// Window origins along one axis: multiples of `stride`, with the last window
// snapped to the border. A window no smaller than the extent yields one
// full-extent window.
std::vector<std::size_t> window_offsets(std::size_t extent, std::size_t window, std::size_t stride);

// Sliding-window scoring. Each pixel gets the mean over its covering windows.
ScoreMap tiled_score(const DenseScorer& scorer, const RgbImage& rgb, const ClassVocabulary& vocab,
                     std::uint32_t window, std::uint32_t stride, double scale = 1.0);

// Resolution-scaling fusion: for every factor, upsample, tile-score, softmax,
// bring the probabilities back to H x W and average across factors.
ProbMap fused_score(const DenseScorer& scorer, const RgbImage& rgb, const ClassVocabulary& vocab,
                    const ScaleSet& scales, float tau, std::uint32_t window, std::uint32_t stride);

// Probabilities for one factor, already at the input resolution.
ProbMap scale_probabilities(const DenseScorer& scorer, const RgbImage& rgb, const ClassVocabulary& vocab,
                            double scale, float tau, std::uint32_t window, std::uint32_t stride);

}  // namespace special
