#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace special {

// Dense row-major [height][width][channels] grid; channel index is fastest.
template <typename T>
class Grid {
public:
    using value_type = T;

    Grid() = default;
    Grid(std::size_t height, std::size_t width, std::size_t channels, T fill = T{})
        : height_(height), width_(width), channels_(channels),
          data_(height * width * channels, fill) {}
    Grid(std::size_t height, std::size_t width, std::size_t channels, std::vector<T> data)
        : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
        if (data_.size() != height_ * width_ * channels_)
            throw std::invalid_argument("grid: buffer size does not match extents");
    }

    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t channels() const { return channels_; }
    std::size_t pixels() const { return height_ * width_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(std::size_t y, std::size_t x, std::size_t c = 0) {
        return data_[(y * width_ + x) * channels_ + c];
    }
    const T& operator()(std::size_t y, std::size_t x, std::size_t c = 0) const {
        return data_[(y * width_ + x) * channels_ + c];
    }

    // All channels of one pixel, addressed by flat pixel index y * width + x.
    std::span<T> pixel(std::size_t index) {
        return {data_.data() + index * channels_, channels_};
    }
    std::span<const T> pixel(std::size_t index) const {
        return {data_.data() + index * channels_, channels_};
    }

    std::vector<T>& data() { return data_; }
    const std::vector<T>& data() const { return data_; }

    bool same_shape(const Grid& other) const {
        return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
    }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::size_t channels_ = 0;
    std::vector<T> data_;
};

using Image = Grid<float>;

inline constexpr std::uint16_t kIgnoreLabel = 0xFFFF;

// [H][W][3] proxy colour image with channels in [0, 1].
struct RgbImage : Image {
    using Image::Image;
    RgbImage() = default;
    explicit RgbImage(Image image) : Image(std::move(image)) {}
};

// [H][W][K] raw per-class scores.
struct ScoreMap : Image {
    using Image::Image;
    ScoreMap() = default;
    explicit ScoreMap(Image image) : Image(std::move(image)) {}
};

// [H][W][K] per-pixel class distributions.
struct ProbMap : Image {
    using Image::Image;
    ProbMap() = default;
    explicit ProbMap(Image image) : Image(std::move(image)) {}
};

// [H][W] best-versus-second-best margins.
struct ConfidenceMap : Image {
    ConfidenceMap() = default;
    ConfidenceMap(std::size_t height, std::size_t width, float fill = 0.0f)
        : Image(height, width, 1, fill) {}
    ConfidenceMap(std::size_t height, std::size_t width, std::vector<float> data)
        : Image(height, width, 1, std::move(data)) {}
    explicit ConfidenceMap(Image image) : Image(std::move(image)) {}
};

// [H][W] class indices; kIgnoreLabel marks unlabeled pixels.
struct LabelMap : Grid<std::uint16_t> {
    LabelMap() = default;
    LabelMap(std::size_t height, std::size_t width, std::uint16_t fill = 0)
        : Grid(height, width, 1, fill) {}
    LabelMap(std::size_t height, std::size_t width, std::vector<std::uint16_t> data)
        : Grid(height, width, 1, std::move(data)) {}
    explicit LabelMap(Grid<std::uint16_t> grid) : Grid(std::move(grid)) {}
};

}  // namespace special
