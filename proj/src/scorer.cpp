#include "special/scorer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "special/ptf.hpp"

namespace special {

ClassVocabulary::ClassVocabulary(std::vector<std::string> names,
                                 std::map<std::string, std::string> aliases)
    : names_(std::move(names)), aliases_(std::move(aliases)) {
    if (names_.empty()) throw std::invalid_argument("vocabulary: at least one class required");
    std::set<std::string> seen;
    for (const auto& n : names_) {
        if (n.empty()) throw std::invalid_argument("vocabulary: empty class name");
        if (!seen.insert(n).second)
            throw std::invalid_argument(fmt::format("vocabulary: duplicate class '{}'", n));
    }
    for (const auto& [name, prompt] : aliases_) {
        if (!seen.contains(name))
            throw std::invalid_argument(fmt::format("vocabulary: alias for unknown class '{}'", name));
    }
}

const std::string& ClassVocabulary::prompt(std::size_t k) const {
    const auto& n = names_.at(k);
    if (auto it = aliases_.find(n); it != aliases_.end()) return it->second;
    return n;
}

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

ClassVocabulary ClassVocabulary::load(const std::filesystem::path& classes_txt,
                                      const std::filesystem::path& aliases_txt) {
    std::ifstream in(classes_txt);
    if (!in) throw std::runtime_error(fmt::format("cannot open class list {}", classes_txt.string()));
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        auto n = trim(line);
        if (!n.empty()) names.push_back(std::move(n));
    }
    std::map<std::string, std::string> aliases;
    if (!aliases_txt.empty() && std::filesystem::exists(aliases_txt)) {
        std::ifstream ain(aliases_txt);
        while (std::getline(ain, line)) {
            if (trim(line).empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos)
                throw std::runtime_error(fmt::format("{}: expected name<TAB>prompt", aliases_txt.string()));
            aliases[trim(line.substr(0, tab))] = trim(line.substr(tab + 1));
        }
    }
    return ClassVocabulary(std::move(names), std::move(aliases));
}

void ClassVocabulary::save(const std::filesystem::path& classes_txt,
                           const std::filesystem::path& aliases_txt) const {
    std::ofstream out(classes_txt, std::ios::trunc);
    for (const auto& n : names_) out << n << '\n';
    std::ofstream aout(aliases_txt, std::ios::trunc);
    for (const auto& [name, prompt] : aliases_) aout << name << '\t' << prompt << '\n';
    if (!out || !aout) throw std::runtime_error("failed to write vocabulary files");
}

// FileScorer ---------------------------------------------------------------

std::string FileScorer::file_name(double scale) { return fmt::format("scores_s{:g}.ptf", scale); }

std::optional<double> FileScorer::parse_scale(const std::string& name) {
    constexpr std::string_view prefix = "scores_s";
    constexpr std::string_view suffix = ".ptf";
    if (name.size() <= prefix.size() + suffix.size() || !name.starts_with(prefix) || !name.ends_with(suffix))
        return std::nullopt;
    const std::string body = name.substr(prefix.size(), name.size() - prefix.size() - suffix.size());
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), value);
    if (ec != std::errc{} || ptr != body.data() + body.size() || !(value > 0.0)) return std::nullopt;
    return value;
}

std::vector<double> FileScorer::available_scales(const std::filesystem::path& dir) {
    std::vector<double> scales;
    if (!std::filesystem::is_directory(dir)) return scales;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (auto s = parse_scale(entry.path().filename().string())) scales.push_back(*s);
    }
    std::sort(scales.begin(), scales.end());
    return scales;
}

FileScorer::FileScorer(const std::filesystem::path& dir, const std::vector<double>& scales,
                       std::size_t num_classes) {
    std::vector<std::string> missing;
    for (double s : scales) {
        if (!std::filesystem::exists(dir / file_name(s))) missing.push_back(file_name(s));
    }
    if (!missing.empty())
        throw std::runtime_error(fmt::format("missing score maps in {}: {}", dir.string(),
                                             fmt::join(missing, ", ")));
    for (double s : scales) {
        const auto path = dir / file_name(s);
        ScoreMap map(ptf::to_float_grid(ptf::read_file(path)));
        if (map.channels() != num_classes)
            throw std::runtime_error(fmt::format("{}: {} classes, expected {}", path.string(),
                                                 map.channels(), num_classes));
        frames_.emplace_back(s, std::move(map));
    }
}

const ScoreMap& FileScorer::frame(double scale) const {
    for (const auto& [s, map] : frames_) {
        if (std::abs(s - scale) <= 1e-9 * std::max(1.0, scale)) return map;
    }
    throw std::runtime_error(fmt::format("no score map loaded for scale {:g}", scale));
}

ScoreMap FileScorer::score(const RgbImage& window, const ClassVocabulary& vocab,
                           const WindowContext& where) const {
    const ScoreMap& full = frame(where.scale);
    if (full.height() != where.frame_height || full.width() != where.frame_width)
        throw std::runtime_error(fmt::format(
            "score map for scale {:g} is {}x{}, frame is {}x{}", where.scale, full.height(),
            full.width(), where.frame_height, where.frame_width));
    if (full.channels() != vocab.size())
        throw std::runtime_error("score map class count does not match vocabulary");
    const std::size_t k = full.channels();
    ScoreMap out(window.height(), window.width(), k);
    for (std::size_t y = 0; y < window.height(); ++y) {
        const float* src = &full(where.row0 + y, where.col0);
        std::copy(src, src + window.width() * k, &out(y, 0));
    }
    return out;
}

// SyntheticScorer ----------------------------------------------------------

SyntheticScorer::SyntheticScorer(LabelMap gt, std::size_t num_classes, float flip_prob,
                                 float sharpness, std::uint64_t key)
    : gt_(std::move(gt)), num_classes_(num_classes), flip_prob_(flip_prob), sharpness_(sharpness),
      key_(key) {
    if (!(flip_prob >= 0.0f && flip_prob <= 1.0f))
        throw std::invalid_argument("synthetic scorer: flip_prob must be in [0, 1]");
    if (!(sharpness > 0.0f)) throw std::invalid_argument("synthetic scorer: sharpness must be > 0");
    if (num_classes == 0) throw std::invalid_argument("synthetic scorer: no classes");
    for (auto v : gt_.data()) {
        if (v != kIgnoreLabel && v >= num_classes)
            throw std::invalid_argument("synthetic scorer: ground-truth label out of range");
    }
}

std::uint16_t SyntheticScorer::emitted_class(std::size_t y, std::size_t x) const {
    const std::uint64_t h = mix64(key_ ^ mix64((static_cast<std::uint64_t>(y) << 32) | x));
    const std::uint16_t truth = gt_(y, x);
    const auto k = static_cast<std::uint64_t>(num_classes_);
    if (truth == kIgnoreLabel) return static_cast<std::uint16_t>(mix64(h) % k);
    if (k < 2 || !(unit_from_hash(h) < static_cast<double>(flip_prob_))) return truth;
    const auto offset = 1 + mix64(h ^ 0xA5A5A5A5ull) % (k - 1);
    return static_cast<std::uint16_t>((truth + offset) % k);
}

ScoreMap SyntheticScorer::score(const RgbImage& window, const ClassVocabulary& vocab,
                                const WindowContext& where) const {
    if (vocab.size() != num_classes_)
        throw std::runtime_error("synthetic scorer: vocabulary size mismatch");
    const double sy = static_cast<double>(gt_.height()) / static_cast<double>(where.frame_height);
    const double sx = static_cast<double>(gt_.width()) / static_cast<double>(where.frame_width);
    ScoreMap out(window.height(), window.width(), num_classes_, 0.0f);
    for (std::size_t y = 0; y < window.height(); ++y) {
        const auto gy = std::min(gt_.height() - 1,
                                 static_cast<std::size_t>((static_cast<double>(where.row0 + y) + 0.5) * sy));
        for (std::size_t x = 0; x < window.width(); ++x) {
            const auto gx = std::min(gt_.width() - 1,
                                     static_cast<std::size_t>((static_cast<double>(where.col0 + x) + 0.5) * sx));
            out(y, x, emitted_class(gy, gx)) = sharpness_;
        }
    }
    return out;
}

std::unique_ptr<SyntheticScorer> make_synthetic_scorer(const LabelMap& gt, std::size_t num_classes,
                                                       float flip_prob, float sharpness, Rng& rng) {
    return std::make_unique<SyntheticScorer>(gt, num_classes, flip_prob, sharpness, rng());
}

}  // namespace special
