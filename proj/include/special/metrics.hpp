#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "special/grid.hpp"

namespace special {

// Rows are ground truth, columns are predictions.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes);
    ConfusionMatrix(std::size_t num_classes, std::vector<std::uint64_t> counts);

    std::size_t num_classes() const { return k_; }
    std::uint64_t& operator()(std::size_t truth, std::size_t pred) { return counts_[truth * k_ + pred]; }
    std::uint64_t operator()(std::size_t truth, std::size_t pred) const { return counts_[truth * k_ + pred]; }
    std::uint64_t total() const;
    const std::vector<std::uint64_t>& counts() const { return counts_; }

    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

private:
    std::size_t k_;
    std::vector<std::uint64_t> counts_;
};

// Counts over pixels whose ground truth is not kIgnoreLabel.
ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& gt, std::size_t num_classes);

struct MetricsReport {
    double overall_accuracy = 0.0;   // percent
    double average_accuracy = 0.0;   // percent, over classes present in the ground truth
    double kappa = 0.0;              // percent
    std::vector<double> class_recall;  // percent; NaN for classes absent from the ground truth
    std::uint64_t evaluated = 0;
};

MetricsReport metrics(const ConfusionMatrix& cm);

std::string report_text(const MetricsReport& report, const std::vector<std::string>& class_names);
// Header plus one row: per-class recalls, OA, AA, kappa, evaluated pixels.
std::string report_csv(const MetricsReport& report, const std::vector<std::string>& class_names);
MetricsReport parse_report_csv(const std::string& csv);

using Rgb8 = std::array<std::uint8_t, 3>;

// Distinct colours for up to `k` classes.
std::vector<Rgb8> default_palette(std::size_t k);

// Palette lookup; kIgnoreLabel renders black. Throws on labels >= palette size.
Grid<std::uint8_t> colorize(const LabelMap& labels, const std::vector<Rgb8>& palette);

void write_png(const Grid<std::uint8_t>& rgb, const std::filesystem::path& path);
Grid<std::uint8_t> read_png(const std::filesystem::path& path);

void render_map(const LabelMap& labels, const std::vector<Rgb8>& palette, const std::filesystem::path& path);

}  // namespace special
