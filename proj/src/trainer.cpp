#include "special/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include "special/pseudo_label.hpp"
#include "special/ptf.hpp"

namespace special {

unsigned TrainConfig::warmup_iterations() const {
    const unsigned total = total_iterations();
    if (!refine) return total;
    return std::min(total, static_cast<unsigned>(std::lround(warmup_fraction * total)));
}

void TrainConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
    if (epochs < 1) fail("epochs must be >= 1");
    if (iters_per_epoch < 1) fail("iters_per_epoch must be >= 1");
    if (n_per_class < 1) fail("n_per_class must be >= 1");
    if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) fail("warmup_fraction must lie in (0, 1)");
    if (!(eta_min > 0.0)) fail("eta_min must be > 0");
    if (!(lr0 >= eta_min)) fail("lr0 must be >= eta_min");
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) fail("lambda1 and lambda2 must be >= 0");
    if (!(noise_std >= 0.0f)) fail("noise_std must be >= 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0))
        fail("adam betas must lie in [0, 1)");
    if (!(adam.eps > 0.0)) fail("adam eps must be > 0");
    if (!(sample_weight_floor >= 0.0)) fail("sample_weight_floor must be >= 0");
    if (pca_dims < 1) fail("pca_dims must be >= 1");
    if (gmm_components < 1) fail("gmm_components must be >= 1");
    for (auto h : hidden) {
        if (h == 0) fail("hidden widths must be positive");
    }
}

// Sampler ------------------------------------------------------------------

ClassBalancedSampler::ClassBalancedSampler(const LabelMap& pseudo, const ConfidenceMap& margins,
                                           double weight_floor) {
    if (pseudo.height() != margins.height() || pseudo.width() != margins.width())
        throw std::invalid_argument("sampler: label and margin maps differ in size");
    std::size_t max_label = 0;
    bool any = false;
    for (auto v : pseudo.data()) {
        if (v == kIgnoreLabel) continue;
        any = true;
        max_label = std::max<std::size_t>(max_label, v);
    }
    if (!any) throw std::invalid_argument("sampler: pseudo-label map has no labeled pixels");

    std::vector<std::vector<std::size_t>> members(max_label + 1);
    for (std::size_t p = 0; p < pseudo.pixels(); ++p) {
        const auto v = pseudo.data()[p];
        if (v != kIgnoreLabel) members[v].push_back(p);
    }
    for (std::size_t k = 0; k < members.size(); ++k) {
        if (members[k].empty()) continue;
        std::vector<double> cum(members[k].size());
        double acc = 0.0;
        for (std::size_t i = 0; i < members[k].size(); ++i) {
            acc += static_cast<double>(margins.data()[members[k][i]]) + weight_floor;
            cum[i] = acc;
        }
        classes_.push_back(static_cast<std::uint16_t>(k));
        pixels_.push_back(std::move(members[k]));
        cumulative_.push_back(std::move(cum));
    }
}

ClassBalancedSampler::Draw ClassBalancedSampler::draw(unsigned n_per_class, Rng& rng) const {
    Draw out;
    out.pixels.reserve(classes_.size() * n_per_class);
    out.labels.reserve(classes_.size() * n_per_class);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t c = 0; c < classes_.size(); ++c) {
        const auto& cum = cumulative_[c];
        const auto& members = pixels_[c];
        const double total = cum.back();
        for (unsigned i = 0; i < n_per_class; ++i) {
            const double u = unit(rng);
            std::size_t pick = 0;
            if (total > 0.0) {
                pick = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u * total) - cum.begin());
                pick = std::min(pick, members.size() - 1);
            } else {
                pick = std::min(static_cast<std::size_t>(u * static_cast<double>(members.size())), members.size() - 1);
            }
            out.pixels.push_back(members[pick]);
            out.labels.push_back(classes_[c]);
        }
    }
    return out;
}

ClassBalancedSampler::Draw sample_random_set(const LabelMap& pseudo, const ConfidenceMap& margins,
                                             unsigned n_per_class, Rng& rng, double weight_floor) {
    return ClassBalancedSampler(pseudo, margins, weight_floor).draw(n_per_class, rng);
}

// Helpers ------------------------------------------------------------------

void write_training_log(const std::vector<LogRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
    out << "iteration,lr,loss_r,loss_c,loss_h,total\n";
    for (const auto& r : rows)
        out << fmt::format("{},{},{},{},{},{}\n", r.iteration, r.lr, r.loss_random, r.loss_confident,
                           r.loss_hard, r.total);
}

Mat<float> spectra_columns(const Image& cube, const std::vector<std::size_t>& pixels) {
    const auto b = static_cast<Eigen::Index>(cube.channels());
    Mat<float> out(b, static_cast<Eigen::Index>(pixels.size()));
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const auto px = cube.pixel(pixels[i]);
        std::copy(px.begin(), px.end(), out.col(static_cast<Eigen::Index>(i)).data());
    }
    return out;
}

namespace {

Mat<float> one_hot(const std::vector<std::uint16_t>& labels, std::size_t k) {
    Mat<float> t = Mat<float>::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= k) throw std::invalid_argument("one_hot: label out of range");
        t(labels[i], static_cast<Eigen::Index>(i)) = 1.0f;
    }
    return t;
}

void augment(Mat<float>& inputs, float std, Rng& rng) {
    add_gaussian_noise(std::span<float>(inputs.data(), static_cast<std::size_t>(inputs.size())), std, rng);
}

LossTerm<float> random_term(const HsiCube& cube, const ClassBalancedSampler& sampler, std::size_t k,
                            const TrainConfig& cfg, Rng& rng) {
    const auto draw = sampler.draw(cfg.n_per_class, rng);
    LossTerm<float> term{spectra_columns(cube.values, draw.pixels), one_hot(draw.labels, k), 1.0};
    augment(term.inputs, cfg.noise_std, rng);
    return term;
}

LossTerm<float> soft_term(const HsiCube& cube, const SoftSet& set, double weight, const TrainConfig& cfg, Rng& rng) {
    LossTerm<float> term;
    term.weight = weight;
    const auto k = set.targets.cols();
    if (set.size() == 0 || weight == 0.0) {
        term.inputs = Mat<float>::Zero(static_cast<Eigen::Index>(cube.bands()), 0);
        term.targets = Mat<float>::Zero(k, 0);
        return term;
    }
    std::uniform_int_distribution<std::size_t> pick(0, set.size() - 1);
    std::vector<std::size_t> rows(cfg.n_per_class);
    for (auto& r : rows) r = pick(rng);
    std::vector<std::size_t> pixels(rows.size());
    term.targets.resize(k, static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        pixels[i] = set.pixels[rows[i]];
        term.targets.col(static_cast<Eigen::Index>(i)) =
            set.targets.row(static_cast<Eigen::Index>(rows[i])).transpose().cast<float>();
    }
    term.inputs = spectra_columns(cube.values, pixels);
    augment(term.inputs, cfg.noise_std, rng);
    return term;
}

}  // namespace

ProbMap predict_map(const Mlp& model, const HsiCube& cube, std::size_t batch) {
    if (cube.bands() != model.input_dims())
        throw std::invalid_argument(fmt::format("predict_map: cube has {} bands, model expects {}",
                                                cube.bands(), model.input_dims()));
    const std::size_t n = cube.values.pixels();
    const std::size_t k = model.num_classes();
    ProbMap out(cube.values.height(), cube.values.width(), k);
    batch = std::max<std::size_t>(batch, 1);
    for (std::size_t start = 0; start < n; start += batch) {
        const std::size_t count = std::min(batch, n - start);
        const Eigen::Map<const Mat<float>> inputs(cube.values.data().data() + start * cube.bands(),
                                                  static_cast<Eigen::Index>(cube.bands()),
                                                  static_cast<Eigen::Index>(count));
        const Mat<float> probs = model.predict(inputs);
        std::copy(probs.data(), probs.data() + probs.size(), out.data().data() + start * k);
    }
    return out;
}

TrainingSets build_training_sets(const Mlp& model, const HsiCube& cube, const PcaModel& pca,
                                 const TrainConfig& cfg, Rng& rng) {
    const std::size_t k = model.num_classes();
    const ProbMap probs = predict_map(model, cube);
    const LabelMap predicted = argmax_labels(probs);

    ConfidenceSplit split;
    if (k >= 2) {
        split = split_confidence(predicted, bvsb(probs), k, rng);
    } else {
        split.confident.assign(1, std::vector<std::size_t>(predicted.pixels()));
        std::iota(split.confident[0].begin(), split.confident[0].end(), std::size_t{0});
        split.hard.assign(1, {});
    }

    TrainingSets sets{{}, {}, fit_class_bank(cube, split, pca, cfg.gmm_components, rng, cfg.em)};
    auto fill = [&](SoftSet& set, const std::vector<std::vector<std::size_t>>& groups) {
        for (const auto& g : groups) set.pixels.insert(set.pixels.end(), g.begin(), g.end());
        if (set.pixels.empty()) {
            set.targets = MatrixXd::Zero(0, static_cast<Eigen::Index>(k));
            return;
        }
        set.targets = soft_labels(sets.bank, project_rows(pca, gather_spectra(cube.values, set.pixels)));
    };
    fill(sets.confident, split.confident);
    fill(sets.hard, split.hard);
    spdlog::info("refinement sets: {} confident, {} hard, {} of {} classes modelled", sets.confident.size(),
                 sets.hard.size(), sets.bank.fitted_classes(), k);
    return sets;
}

// Trainer ------------------------------------------------------------------

SpectralTrainer::SpectralTrainer(Mlp model, TrainConfig cfg)
    : model_(std::move(model)), cfg_(std::move(cfg)), optimizer_(cfg_.adam) {}

void SpectralTrainer::apply(std::span<const LossTerm<float>> terms) {
    const double lr = cosine_lr(iteration_, cfg_.total_iterations(), cfg_.lr0, cfg_.eta_min);
    const auto result = weighted_objective<float>(model_, terms);
    optimizer_.step(model_, result.grads, lr);
    LogRow row{iteration_, lr, 0.0, 0.0, 0.0, result.total};
    if (!result.term_losses.empty()) row.loss_random = result.term_losses[0];
    if (result.term_losses.size() > 1) row.loss_confident = result.term_losses[1];
    if (result.term_losses.size() > 2) row.loss_hard = result.term_losses[2];
    log_.push_back(row);
    ++iteration_;
}

void SpectralTrainer::warmup(const HsiCube& cube, const ClassBalancedSampler& random_set, Rng& random_rng) {
    const unsigned end = cfg_.warmup_iterations();
    while (iteration_ < end) {
        const LossTerm<float> term = random_term(cube, random_set, model_.num_classes(), cfg_, random_rng);
        apply(std::span<const LossTerm<float>>(&term, 1));
    }
}

std::vector<LossTerm<float>> SpectralTrainer::refinement_terms(const HsiCube& cube,
                                                               const ClassBalancedSampler& random_set,
                                                               const TrainingSets& sets, const TrainConfig& cfg,
                                                               Rng& random_rng, Rng& set_rng) {
    const std::size_t k = sets.bank.num_classes();
    std::vector<LossTerm<float>> terms;
    terms.push_back(random_term(cube, random_set, k, cfg, random_rng));
    terms.push_back(soft_term(cube, sets.confident, cfg.lambda1, cfg, set_rng));
    terms.push_back(soft_term(cube, sets.hard, cfg.lambda2, cfg, set_rng));
    return terms;
}

void SpectralTrainer::refine(const HsiCube& cube, const ClassBalancedSampler& random_set, TrainingSets sets,
                             Rng& random_rng, Rng& set_rng, const std::function<TrainingSets()>& rebuild) {
    const unsigned start = iteration_;
    const unsigned end = cfg_.total_iterations();
    while (iteration_ < end) {
        if (cfg_.rebuild_sets_each_epoch && rebuild && iteration_ != start &&
            iteration_ % cfg_.iters_per_epoch == 0)
            sets = rebuild();
        const auto terms = refinement_terms(cube, random_set, sets, cfg_, random_rng, set_rng);
        apply(terms);
    }
}

TrainOutcome train_spectral_classifier(const HsiCube& normalized, const LabelMap& pseudo,
                                       const ConfidenceMap& pseudo_margins, std::size_t num_classes,
                                       const TrainConfig& cfg) {
    Rng master(cfg.seed);
    Rng init_rng = derive_rng(master, 1);
    Rng random_rng = derive_rng(master, 2);
    Rng set_rng = derive_rng(master, 3);
    Rng fit_rng = derive_rng(master, 4);

    std::vector<std::size_t> widths{normalized.bands()};
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    widths.push_back(num_classes);

    const ClassBalancedSampler sampler(pseudo, pseudo_margins, cfg.sample_weight_floor);
    SpectralTrainer trainer(Mlp::initialized(widths, init_rng), cfg);
    trainer.warmup(normalized, sampler, random_rng);

    TrainOutcome outcome{trainer.model(), {}, trainer.model(), std::nullopt};
    if (cfg.refine && trainer.iteration() < cfg.total_iterations()) {
        const auto q = std::min<Eigen::Index>(cfg.pca_dims, static_cast<Eigen::Index>(normalized.bands()));
        const PcaModel pca = fit_pca(all_spectra(normalized.values), q);
        auto rebuild = [&] { return build_training_sets(trainer.model(), normalized, pca, cfg, fit_rng); };
        TrainingSets sets = rebuild();
        trainer.refine(normalized, sampler, sets, random_rng, set_rng, rebuild);
        outcome.sets = std::move(sets);
    }
    outcome.model = trainer.model();
    outcome.log = trainer.log();
    return outcome;
}

// Checkpoints --------------------------------------------------------------

void save_model(const Mlp& model, const TrainConfig& cfg, const std::filesystem::path& dir) {
    namespace pt = boost::property_tree;
    std::filesystem::create_directories(dir);
    pt::ptree manifest;
    manifest.put("model.widths", fmt::format("{}", fmt::join(model.widths(), ",")));
    manifest.put("model.activation", "relu");
    manifest.put("model.layers", model.layers());
    manifest.put("train.seed", cfg.seed);
    manifest.put("train.epochs", cfg.epochs);
    manifest.put("train.iters_per_epoch", cfg.iters_per_epoch);
    manifest.put("train.n_per_class", cfg.n_per_class);
    manifest.put("train.lr0", fmt::format("{}", cfg.lr0));
    manifest.put("train.eta_min", fmt::format("{}", cfg.eta_min));
    manifest.put("train.warmup_fraction", fmt::format("{}", cfg.warmup_fraction));
    manifest.put("train.lambda1", fmt::format("{}", cfg.lambda1));
    manifest.put("train.lambda2", fmt::format("{}", cfg.lambda2));
    manifest.put("train.noise_std", fmt::format("{}", cfg.noise_std));
    manifest.put("train.refine", cfg.refine);
    for (std::size_t l = 0; l < model.layers(); ++l) {
        const auto& w = model.weights()[l];
        const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = w;
        ptf::write_file(ptf::Tensor{{static_cast<std::uint64_t>(w.rows()), static_cast<std::uint64_t>(w.cols())},
                                    std::vector<float>(rm.data(), rm.data() + rm.size())},
                        dir / fmt::format("layer{}_weight.ptf", l));
        const auto& b = model.biases()[l];
        ptf::write_file(ptf::Tensor{{static_cast<std::uint64_t>(b.size())},
                                    std::vector<float>(b.data(), b.data() + b.size())},
                        dir / fmt::format("layer{}_bias.ptf", l));
    }
    pt::write_ini((dir / "manifest.ini").string(), manifest);
}

Mlp load_model(const std::filesystem::path& dir) {
    namespace pt = boost::property_tree;
    pt::ptree manifest;
    pt::read_ini((dir / "manifest.ini").string(), manifest);
    std::vector<std::size_t> widths;
    std::stringstream ss(manifest.get<std::string>("model.widths"));
    for (std::string item; std::getline(ss, item, ',');) widths.push_back(std::stoul(item));
    Mlp model(widths);
    for (std::size_t l = 0; l < model.layers(); ++l) {
        const auto w = ptf::read_file(dir / fmt::format("layer{}_weight.ptf", l));
        const auto b = ptf::read_file(dir / fmt::format("layer{}_bias.ptf", l));
        auto& mw = model.weights()[l];
        auto& mb = model.biases()[l];
        if (w.dims != std::vector<std::uint64_t>{static_cast<std::uint64_t>(mw.rows()),
                                                 static_cast<std::uint64_t>(mw.cols())} ||
            b.dims != std::vector<std::uint64_t>{static_cast<std::uint64_t>(mb.size())})
            throw std::runtime_error(fmt::format("checkpoint layer {} has unexpected shape", l));
        mw = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            w.f32().data(), mw.rows(), mw.cols());
        mb = Eigen::Map<const Vec<float>>(b.f32().data(), mb.size());
    }
    return model;
}

}  // namespace special
