#include "special/pseudo_label.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>

#include "special/resample.hpp"

namespace special {

ScaleSet::ScaleSet(std::vector<double> factors) : factors_(std::move(factors)) {
    if (factors_.empty()) throw std::invalid_argument("scale set: at least one factor required");
    for (double s : factors_) {
        if (!(s > 0.0) || !std::isfinite(s))
            throw std::invalid_argument(fmt::format("scale set: invalid factor {}", s));
    }
}

ProbMap softmax_temperature(const ScoreMap& scores, float tau) {
    if (!(tau > 0.0f)) throw std::invalid_argument("softmax: temperature must be positive");
    const std::size_t k = scores.channels();
    ProbMap out(scores.height(), scores.width(), k);
    std::vector<double> e(k);
    for (std::size_t p = 0; p < scores.pixels(); ++p) {
        const auto s = scores.pixel(p);
        const double top = *std::max_element(s.begin(), s.end());
        double total = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            e[c] = std::exp((static_cast<double>(s[c]) - top) / tau);
            total += e[c];
        }
        auto o = out.pixel(p);
        for (std::size_t c = 0; c < k; ++c) o[c] = static_cast<float>(e[c] / total);
    }
    return out;
}

ConfidenceMap bvsb(const ProbMap& probs) {
    if (probs.channels() < 2) throw std::invalid_argument("bvsb: at least two classes required");
    ConfidenceMap out(probs.height(), probs.width());
    for (std::size_t p = 0; p < probs.pixels(); ++p) {
        float best = -std::numeric_limits<float>::infinity();
        float second = -std::numeric_limits<float>::infinity();
        for (float v : probs.pixel(p)) {
            if (v > best) {
                second = best;
                best = v;
            } else if (v > second) {
                second = v;
            }
        }
        out.data()[p] = std::clamp(best - second, 0.0f, 1.0f);
    }
    return out;
}

LabelMap argmax_labels(const ProbMap& probs) {
    if (probs.channels() == 0 || probs.channels() >= kIgnoreLabel)
        throw std::invalid_argument("argmax: class count out of range");
    LabelMap out(probs.height(), probs.width());
    for (std::size_t p = 0; p < probs.pixels(); ++p) {
        const auto v = probs.pixel(p);
        // max_element returns the first maximum, i.e. the lowest index on ties.
        out.data()[p] = static_cast<std::uint16_t>(std::max_element(v.begin(), v.end()) - v.begin());
    }
    return out;
}

void renormalize(ProbMap& probs) {
    const std::size_t k = probs.channels();
    for (std::size_t p = 0; p < probs.pixels(); ++p) {
        auto v = probs.pixel(p);
        double total = 0.0;
        for (float& x : v) {
            x = std::max(x, 0.0f);
            total += x;
        }
        if (total > 0.0) {
            for (float& x : v) x = static_cast<float>(x / total);
        } else {
            std::fill(v.begin(), v.end(), 1.0f / static_cast<float>(k));
        }
    }
}

std::vector<std::size_t> window_offsets(std::size_t extent, std::size_t window, std::size_t stride) {
    if (window >= extent) return {0};
    std::vector<std::size_t> offsets;
    for (std::size_t o = 0;; o += stride) {
        const std::size_t snapped = std::min(o, extent - window);
        if (offsets.empty() || offsets.back() != snapped) offsets.push_back(snapped);
        if (snapped + window >= extent) break;
    }
    return offsets;
}

ScoreMap tiled_score(const DenseScorer& scorer, const RgbImage& rgb, const ClassVocabulary& vocab,
                     std::uint32_t window, std::uint32_t stride, double scale) {
    if (stride < 1 || stride > window)
        throw std::invalid_argument(fmt::format("tiling: need 1 <= stride ({}) <= window ({})", stride, window));
    if (rgb.empty()) throw std::invalid_argument("tiling: empty image");
    const std::size_t h = rgb.height();
    const std::size_t w = rgb.width();
    const std::size_t nc = rgb.channels();
    const std::size_t k = vocab.size();
    const std::size_t win_h = std::min<std::size_t>(window, h);
    const std::size_t win_w = std::min<std::size_t>(window, w);

    std::vector<double> sum(h * w * k, 0.0);
    std::vector<std::uint32_t> count(h * w, 0);
    for (std::size_t r0 : window_offsets(h, window, stride)) {
        for (std::size_t c0 : window_offsets(w, window, stride)) {
            RgbImage crop(win_h, win_w, nc);
            for (std::size_t y = 0; y < win_h; ++y) {
                const float* src = &rgb(r0 + y, c0);
                std::copy(src, src + win_w * nc, &crop(y, 0));
            }
            const ScoreMap part = scorer.score(crop, vocab, WindowContext{r0, c0, h, w, scale});
            if (part.height() != win_h || part.width() != win_w || part.channels() != k)
                throw std::runtime_error(fmt::format(
                    "scorer returned {}x{}x{} for a {}x{} window with {} classes", part.height(),
                    part.width(), part.channels(), win_h, win_w, k));
            for (std::size_t y = 0; y < win_h; ++y) {
                for (std::size_t x = 0; x < win_w; ++x) {
                    const std::size_t p = (r0 + y) * w + (c0 + x);
                    ++count[p];
                    const auto s = part.pixel(y * win_w + x);
                    for (std::size_t c = 0; c < k; ++c) sum[p * k + c] += s[c];
                }
            }
        }
    }

    ScoreMap out(h, w, k);
    for (std::size_t p = 0; p < h * w; ++p) {
        for (std::size_t c = 0; c < k; ++c)
            out.data()[p * k + c] = static_cast<float>(sum[p * k + c] / count[p]);
    }
    return out;
}

ProbMap scale_probabilities(const DenseScorer& scorer, const RgbImage& rgb, const ClassVocabulary& vocab,
                            double scale, float tau, std::uint32_t window, std::uint32_t stride) {
    if (scale == 1.0) return softmax_temperature(tiled_score(scorer, rgb, vocab, window, stride, 1.0), tau);

    RgbImage up(bicubic_resample(rgb, scale));
    for (float& v : up.data()) v = std::clamp(v, 0.0f, 1.0f);
    const ProbMap probs = softmax_temperature(tiled_score(scorer, up, vocab, window, stride, scale), tau);
    ProbMap down(resample_to(probs, rgb.height(), rgb.width()));
    renormalize(down);
    return down;
}

ProbMap fused_score(const DenseScorer& scorer, const RgbImage& rgb, const ClassVocabulary& vocab,
                    const ScaleSet& scales, float tau, std::uint32_t window, std::uint32_t stride) {
    if (scales.size() == 1)
        return scale_probabilities(scorer, rgb, vocab, scales.factors()[0], tau, window, stride);

    std::vector<double> sum(rgb.pixels() * vocab.size(), 0.0);
    for (double s : scales.factors()) {
        const ProbMap probs = scale_probabilities(scorer, rgb, vocab, s, tau, window, stride);
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += probs.data()[i];
    }
    ProbMap out(rgb.height(), rgb.width(), vocab.size());
    const double n = static_cast<double>(scales.size());
    for (std::size_t i = 0; i < sum.size(); ++i) out.data()[i] = static_cast<float>(sum[i] / n);
    return out;
}

}  // namespace special
