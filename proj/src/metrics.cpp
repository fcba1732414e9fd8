#include "special/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <png.h>

namespace special {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes)
    : k_(num_classes), counts_(num_classes * num_classes, 0) {}

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes, std::vector<std::uint64_t> counts)
    : k_(num_classes), counts_(std::move(counts)) {
    if (counts_.size() != k_ * k_) throw std::invalid_argument("confusion matrix: expected K*K counts");
}

std::uint64_t ConfusionMatrix::total() const {
    return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& gt, std::size_t num_classes) {
    if (pred.height() != gt.height() || pred.width() != gt.width())
        throw std::invalid_argument(fmt::format("confusion: prediction is {}x{}, ground truth is {}x{}",
                                                pred.height(), pred.width(), gt.height(), gt.width()));
    ConfusionMatrix cm(num_classes);
    for (std::size_t p = 0; p < gt.pixels(); ++p) {
        const auto t = gt.data()[p];
        if (t == kIgnoreLabel) continue;
        const auto y = pred.data()[p];
        if (t >= num_classes || y >= num_classes)
            throw std::invalid_argument(fmt::format("confusion: label out of range at pixel {}", p));
        ++cm(t, y);
    }
    return cm;
}

MetricsReport metrics(const ConfusionMatrix& cm) {
    const std::size_t k = cm.num_classes();
    const std::uint64_t total = cm.total();
    if (total == 0) throw std::invalid_argument("metrics: no evaluated pixels");
    const double n = static_cast<double>(total);

    MetricsReport r;
    r.evaluated = total;
    r.class_recall.assign(k, std::numeric_limits<double>::quiet_NaN());
    std::uint64_t trace = 0;
    double expected = 0.0;
    double recall_sum = 0.0;
    std::size_t present = 0;
    for (std::size_t i = 0; i < k; ++i) {
        trace += cm(i, i);
        std::uint64_t row = 0;
        std::uint64_t col = 0;
        for (std::size_t j = 0; j < k; ++j) {
            row += cm(i, j);
            col += cm(j, i);
        }
        expected += static_cast<double>(row) * static_cast<double>(col);
        if (row > 0) {
            r.class_recall[i] = 100.0 * static_cast<double>(cm(i, i)) / static_cast<double>(row);
            recall_sum += r.class_recall[i];
            ++present;
        }
    }
    const double po = static_cast<double>(trace) / n;
    const double pe = expected / (n * n);
    r.overall_accuracy = 100.0 * po;
    r.average_accuracy = recall_sum / static_cast<double>(present);
    if (pe >= 1.0) {
        r.kappa = po >= 1.0 ? 100.0 : 0.0;
    } else {
        r.kappa = 100.0 * (po - pe) / (1.0 - pe);
    }
    return r;
}

std::string report_text(const MetricsReport& report, const std::vector<std::string>& class_names) {
    std::string out;
    for (std::size_t k = 0; k < report.class_recall.size(); ++k) {
        const std::string name = k < class_names.size() ? class_names[k] : fmt::format("class{}", k);
        out += fmt::format("recall.{}={:.2f}\n", name, report.class_recall[k]);
    }
    out += fmt::format("OA={:.2f}\nAA={:.2f}\nkappa={:.2f}\nevaluated={}\n", report.overall_accuracy,
                       report.average_accuracy, report.kappa, report.evaluated);
    return out;
}

std::string report_csv(const MetricsReport& report, const std::vector<std::string>& class_names) {
    std::string header;
    std::string row;
    for (std::size_t k = 0; k < report.class_recall.size(); ++k) {
        header += (k < class_names.size() ? class_names[k] : fmt::format("class{}", k)) + ",";
        row += fmt::format("{},", report.class_recall[k]);
    }
    header += "OA,AA,kappa,evaluated\n";
    row += fmt::format("{},{},{},{}\n", report.overall_accuracy, report.average_accuracy, report.kappa,
                       report.evaluated);
    return header + row;
}

MetricsReport parse_report_csv(const std::string& csv) {
    std::istringstream in(csv);
    std::string header;
    std::string row;
    if (!std::getline(in, header) || !std::getline(in, row)) throw std::runtime_error("report csv: expected two lines");
    std::vector<std::string> cells;
    std::stringstream ss(row);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() < 4) throw std::runtime_error("report csv: too few columns");

    auto number = [](const std::string& s) {
        if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::runtime_error(fmt::format("report csv: bad number '{}'", s));
        return v;
    };
    MetricsReport r;
    const std::size_t k = cells.size() - 4;
    for (std::size_t i = 0; i < k; ++i) r.class_recall.push_back(number(cells[i]));
    r.overall_accuracy = number(cells[k]);
    r.average_accuracy = number(cells[k + 1]);
    r.kappa = number(cells[k + 2]);
    r.evaluated = std::stoull(cells[k + 3]);
    return r;
}

std::vector<Rgb8> default_palette(std::size_t k) {
    static constexpr Rgb8 base[] = {{230, 25, 75},  {60, 180, 75},   {0, 130, 200},  {255, 225, 25},
                                    {245, 130, 48}, {145, 30, 180},  {70, 240, 240}, {240, 50, 230},
                                    {210, 245, 60}, {250, 190, 212}, {0, 128, 128},  {170, 110, 40},
                                    {128, 0, 0},    {170, 255, 195}, {128, 128, 0},  {0, 0, 128}};
    constexpr std::size_t nb = std::size(base);
    std::vector<Rgb8> palette;
    for (std::size_t i = 0; i < k; ++i) {
        if (i < nb) {
            palette.push_back(base[i]);
        } else {
            const auto h = static_cast<std::uint32_t>(i * 2654435761u);
            palette.push_back({static_cast<std::uint8_t>(64 + (h & 0xBF)),
                               static_cast<std::uint8_t>(64 + ((h >> 8) & 0xBF)),
                               static_cast<std::uint8_t>(64 + ((h >> 16) & 0xBF))});
        }
    }
    return palette;
}

Grid<std::uint8_t> colorize(const LabelMap& labels, const std::vector<Rgb8>& palette) {
    Grid<std::uint8_t> out(labels.height(), labels.width(), 3, 0);
    for (std::size_t p = 0; p < labels.pixels(); ++p) {
        const auto v = labels.data()[p];
        if (v == kIgnoreLabel) continue;
        if (v >= palette.size())
            throw std::invalid_argument(fmt::format("render: label {} has no palette entry", v));
        const auto& c = palette[v];
        auto px = out.pixel(p);
        px[0] = c[0];
        px[1] = c[1];
        px[2] = c[2];
    }
    return out;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void write_png(const Grid<std::uint8_t>& rgb, const std::filesystem::path& path) {
    if (rgb.channels() != 3) throw std::invalid_argument("write_png: expected 3 channels");
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw std::runtime_error(fmt::format("cannot open {} for writing", path.string()));

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("write_png: libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error(fmt::format("write_png: libpng error writing {}", path.string()));
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(rgb.width()), static_cast<png_uint_32>(rgb.height()), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t y = 0; y < rgb.height(); ++y)
        png_write_row(png, const_cast<png_bytep>(&rgb(y, 0)));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Grid<std::uint8_t> read_png(const std::filesystem::path& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw std::runtime_error(fmt::format("cannot open {}", path.string()));
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("read_png: libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error(fmt::format("read_png: libpng error reading {}", path.string()));
    }
    png_init_io(png, file.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const auto w = png_get_image_width(png, info);
    const auto h = png_get_image_height(png, info);
    Grid<std::uint8_t> out(h, w, 3);
    for (std::size_t y = 0; y < h; ++y) png_read_row(png, &out(y, 0), nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void render_map(const LabelMap& labels, const std::vector<Rgb8>& palette, const std::filesystem::path& path) {
    write_png(colorize(labels, palette), path);
}

}  // namespace special
