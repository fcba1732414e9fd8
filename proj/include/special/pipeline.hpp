#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "special/metrics.hpp"
#include "special/pseudo_label.hpp"
#include "special/scene.hpp"
#include "special/trainer.hpp"

namespace special {

struct PipelineConfig {
    std::uint64_t seed = 42;

    std::filesystem::path cube;         // PTF f32 [H][W][B]
    std::filesystem::path wavelengths;  // one value per line, nm
    std::filesystem::path gt;           // PTF u16 [H][W]; optional
    std::filesystem::path scores;       // directory of scores_s{factor}.ptf
    std::filesystem::path out = "out";

    std::vector<std::string> classes;
    std::map<std::string, std::string> aliases;

    std::vector<double> scales = {1.0, 2.0};
    std::uint32_t window = 224;
    std::uint32_t stride = 112;
    float tau = kDefaultTemperature;

    bool synthetic = false;
    SceneConfig scene;
    float flip_prob = 0.3f;
    float sharpness = 5.0f;

    TrainConfig train;

    // Throws std::invalid_argument for out-of-range values.
    void validate() const;
};

// Full resolved config as sectioned key = value text, stable key order.
std::string config_text(const PipelineConfig& cfg);

// Parses sectioned key = value text, then applies `section.key` overrides in
// order. Unknown keys are rejected.
PipelineConfig parse_config(const std::string& text,
                            const std::vector<std::pair<std::string, std::string>>& overrides = {});
PipelineConfig load_config(const std::optional<std::filesystem::path>& path,
                           const std::vector<std::pair<std::string, std::string>>& overrides = {});

class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& message)
        : std::runtime_error(message), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

struct RunOptions {
    // Allow writing into a directory that already holds a different config.
    bool force = false;
};

struct PseudoArtifacts {
    ProbMap probs;
    LabelMap labels;
    ConfidenceMap confidence;
    std::optional<MetricsReport> report;
};

struct TrainArtifacts {
    TrainOutcome outcome;
    LabelMap predicted;
};

PseudoArtifacts cmd_pseudo(const PipelineConfig& cfg, const RunOptions& opts = {});
TrainArtifacts cmd_train(const PipelineConfig& cfg, const RunOptions& opts = {});
// `prediction` defaults to <out>/pred_labels.ptf.
MetricsReport cmd_eval(const PipelineConfig& cfg, const RunOptions& opts = {},
                       const std::optional<std::filesystem::path>& prediction = std::nullopt);
void cmd_render(const std::filesystem::path& labels, const std::filesystem::path& png, std::size_t num_classes);

struct PipelineResult {
    PseudoArtifacts pseudo;
    TrainArtifacts train;
    std::optional<MetricsReport> report;
};

PipelineResult cmd_pipeline(const PipelineConfig& cfg, const RunOptions& opts = {});

// Output file names inside the run directory.
namespace artifacts {
inline constexpr const char* kConfig = "config.ini";
inline constexpr const char* kRgb = "rgb.ptf";
inline constexpr const char* kClasses = "classes.txt";
inline constexpr const char* kAliases = "aliases.txt";
inline constexpr const char* kProbs = "probs.ptf";
inline constexpr const char* kLabels = "labels.ptf";
inline constexpr const char* kConfidence = "confidence.ptf";
inline constexpr const char* kPreview = "preview.png";
inline constexpr const char* kPseudoReport = "pseudo_report.txt";
inline constexpr const char* kSceneDir = "scene";
inline constexpr const char* kModelDir = "model";
inline constexpr const char* kBankDir = "bank";
inline constexpr const char* kTrainLog = "train_log.csv";
inline constexpr const char* kPredProbs = "pred_probs.ptf";
inline constexpr const char* kPredLabels = "pred_labels.ptf";
inline constexpr const char* kPredPng = "pred.png";
inline constexpr const char* kReport = "report.txt";
inline constexpr const char* kReportCsv = "report.csv";
}  // namespace artifacts

}  // namespace special
