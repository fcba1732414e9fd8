#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "special/grid.hpp"
#include "special/hsi.hpp"
#include "special/mixture.hpp"
#include "special/mlp.hpp"
#include "special/rng.hpp"

namespace special {

struct TrainConfig {
    unsigned epochs = 15;
    unsigned iters_per_epoch = 20;
    unsigned n_per_class = 64;
    double lr0 = 1e-3;
    double eta_min = 1e-5;
    double warmup_fraction = 0.5;
    double lambda1 = 1.0;
    double lambda2 = 0.5;
    float noise_std = 0.1f;
    std::uint64_t seed = 42;
    AdamConfig adam;
    std::vector<std::size_t> hidden = {128, 128};
    double sample_weight_floor = 1e-6;
    // false: the whole schedule is warmup on the random set.
    bool refine = true;
    // Rebuild confident/hard sets at every epoch boundary of the refinement phase.
    bool rebuild_sets_each_epoch = false;
    unsigned pca_dims = 8;
    unsigned gmm_components = 2;
    EmOptions em;

    unsigned total_iterations() const { return epochs * iters_per_epoch; }
    unsigned warmup_iterations() const;
    // Throws std::invalid_argument naming the first offending field.
    void validate() const;
};

// Class-balanced sampler over a pseudo-label map: within each class, pixels
// are drawn with replacement with probability proportional to margin + floor.
class ClassBalancedSampler {
public:
    ClassBalancedSampler(const LabelMap& pseudo, const ConfidenceMap& margins, double weight_floor);

    struct Draw {
        std::vector<std::size_t> pixels;
        std::vector<std::uint16_t> labels;
    };

    Draw draw(unsigned n_per_class, Rng& rng) const;
    const std::vector<std::uint16_t>& classes() const { return classes_; }

private:
    std::vector<std::uint16_t> classes_;
    std::vector<std::vector<std::size_t>> pixels_;
    std::vector<std::vector<double>> cumulative_;
};

ClassBalancedSampler::Draw sample_random_set(const LabelMap& pseudo, const ConfidenceMap& margins,
                                             unsigned n_per_class, Rng& rng, double weight_floor = 1e-6);

// Pixels with fixed soft targets (one row per pixel).
struct SoftSet {
    std::vector<std::size_t> pixels;
    MatrixXd targets;

    std::size_t size() const { return pixels.size(); }
};

struct TrainingSets {
    SoftSet confident;
    SoftSet hard;
    ClassGmmBank bank;
};

struct LogRow {
    unsigned iteration = 0;
    double lr = 0.0;
    double loss_random = 0.0;
    double loss_confident = 0.0;
    double loss_hard = 0.0;
    double total = 0.0;
};

void write_training_log(const std::vector<LogRow>& rows, const std::filesystem::path& path);

// B x n input matrix of the listed pixels' spectra.
Mat<float> spectra_columns(const Image& cube, const std::vector<std::size_t>& pixels);

// Per-pixel class distributions from a forward pass without augmentation.
ProbMap predict_map(const Mlp& model, const HsiCube& cube, std::size_t batch = 4096);

TrainingSets build_training_sets(const Mlp& model, const HsiCube& cube, const PcaModel& pca,
                                 const TrainConfig& cfg, Rng& rng);

// Owns the model, the optimiser state, and the position in the cosine
// schedule across the warmup and refinement phases.
class SpectralTrainer {
public:
    SpectralTrainer(Mlp model, TrainConfig cfg);

    // Runs the warmup iterations on BvSB-weighted class-balanced batches.
    void warmup(const HsiCube& cube, const ClassBalancedSampler& random_set, Rng& random_rng);

    // Remaining iterations on the three-term objective. `rebuild` supplies
    // fresh sets when per-epoch rebuilding is enabled.
    void refine(const HsiCube& cube, const ClassBalancedSampler& random_set, TrainingSets sets,
                Rng& random_rng, Rng& set_rng, const std::function<TrainingSets()>& rebuild = {});

    const Mlp& model() const { return model_; }
    const std::vector<LogRow>& log() const { return log_; }
    unsigned iteration() const { return iteration_; }

    // One refinement step's terms: random (hard targets), confident, hard.
    static std::vector<LossTerm<float>> refinement_terms(const HsiCube& cube, const ClassBalancedSampler& random_set,
                                                         const TrainingSets& sets, const TrainConfig& cfg,
                                                         Rng& random_rng, Rng& set_rng);

private:
    void apply(std::span<const LossTerm<float>> terms);

    Mlp model_;
    TrainConfig cfg_;
    AdamOptimizer<float> optimizer_;
    unsigned iteration_ = 0;
    std::vector<LogRow> log_;
};

struct TrainOutcome {
    Mlp model;
    std::vector<LogRow> log;
    Mlp warmup_model;
    std::optional<TrainingSets> sets;
};

// Warmup then (optionally) refinement, fully determined by cfg.seed.
TrainOutcome train_spectral_classifier(const HsiCube& normalized, const LabelMap& pseudo,
                                       const ConfidenceMap& pseudo_margins, std::size_t num_classes,
                                       const TrainConfig& cfg);

void save_model(const Mlp& model, const TrainConfig& cfg, const std::filesystem::path& dir);
Mlp load_model(const std::filesystem::path& dir);

}  // namespace special
