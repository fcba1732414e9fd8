#include "special/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include "special/ptf.hpp"
#include "special/pseudo_label.hpp"

namespace special {

namespace {

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    s = s.substr(first, last - first + 1);
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
    return s;
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> items;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
        item = trim(item);
        if (!item.empty()) items.push_back(item);
    }
    return items;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument(fmt::format("config: {} expects a number, got '{}'", key, v));
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        if (!v.empty() && v.front() != '-') {
            const auto u = std::stoull(v, &used);
            if (used == v.size()) return u;
        }
    } catch (const std::exception&) {
    }
    throw std::invalid_argument(fmt::format("config: {} expects a non-negative integer, got '{}'", key, v));
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw std::invalid_argument(fmt::format("config: {} expects true or false, got '{}'", key, v));
}

template <typename T>
T narrow(const std::string& key, std::uint64_t v) {
    if (v > std::numeric_limits<T>::max()) throw std::invalid_argument(fmt::format("config: {} is too large", key));
    return static_cast<T>(v);
}

std::string show(double v) { return fmt::format("{}", v); }
std::string show(bool v) { return v ? "true" : "false"; }

struct Key {
    std::string name;
    std::function<std::string(const PipelineConfig&)> get;
    std::function<void(PipelineConfig&, const std::string&)> set;
};

#define SPECIAL_UINT_KEY(NAME, FIELD, TYPE)                                                       \
    Key {                                                                                         \
        NAME, [](const PipelineConfig& c) { return fmt::format("{}", c.FIELD); },                 \
            [](PipelineConfig& c, const std::string& v) { c.FIELD = narrow<TYPE>(NAME, to_uint(NAME, v)); } \
    }
#define SPECIAL_REAL_KEY(NAME, FIELD, TYPE)                                                       \
    Key {                                                                                         \
        NAME, [](const PipelineConfig& c) { return fmt::format("{}", c.FIELD); },                 \
            [](PipelineConfig& c, const std::string& v) { c.FIELD = static_cast<TYPE>(to_double(NAME, v)); } \
    }
#define SPECIAL_BOOL_KEY(NAME, FIELD)                                                             \
    Key {                                                                                         \
        NAME, [](const PipelineConfig& c) { return show(c.FIELD); },                              \
            [](PipelineConfig& c, const std::string& v) { c.FIELD = to_bool(NAME, v); }           \
    }
#define SPECIAL_PATH_KEY(NAME, FIELD)                                                             \
    Key {                                                                                         \
        NAME, [](const PipelineConfig& c) { return c.FIELD.string(); },                           \
            [](PipelineConfig& c, const std::string& v) { c.FIELD = v; }                          \
    }

const std::vector<Key>& keys() {
    static const std::vector<Key> table = {
        SPECIAL_UINT_KEY("run.seed", seed, std::uint64_t),
        SPECIAL_PATH_KEY("paths.cube", cube),
        SPECIAL_PATH_KEY("paths.wavelengths", wavelengths),
        SPECIAL_PATH_KEY("paths.gt", gt),
        SPECIAL_PATH_KEY("paths.scores", scores),
        SPECIAL_PATH_KEY("paths.out", out),
        Key{"vocab.classes", [](const PipelineConfig& c) { return fmt::format("{}", fmt::join(c.classes, ",")); },
            [](PipelineConfig& c, const std::string& v) { c.classes = split_list(v); }},
        Key{"pseudo.scales", [](const PipelineConfig& c) { return fmt::format("{}", fmt::join(c.scales, ",")); },
            [](PipelineConfig& c, const std::string& v) {
                c.scales.clear();
                for (const auto& item : split_list(v)) c.scales.push_back(to_double("pseudo.scales", item));
            }},
        SPECIAL_UINT_KEY("pseudo.window", window, std::uint32_t),
        SPECIAL_UINT_KEY("pseudo.stride", stride, std::uint32_t),
        SPECIAL_REAL_KEY("pseudo.tau", tau, float),
        SPECIAL_BOOL_KEY("synthetic.enabled", synthetic),
        SPECIAL_UINT_KEY("synthetic.height", scene.height, std::size_t),
        SPECIAL_UINT_KEY("synthetic.width", scene.width, std::size_t),
        SPECIAL_UINT_KEY("synthetic.classes", scene.classes, std::size_t),
        SPECIAL_UINT_KEY("synthetic.bands", scene.bands, std::size_t),
        SPECIAL_UINT_KEY("synthetic.regions", scene.regions, std::size_t),
        SPECIAL_REAL_KEY("synthetic.noise_std", scene.noise_std, double),
        SPECIAL_REAL_KEY("synthetic.bump_height", scene.bump_height, double),
        SPECIAL_REAL_KEY("synthetic.flip_prob", flip_prob, float),
        SPECIAL_REAL_KEY("synthetic.sharpness", sharpness, float),
        SPECIAL_UINT_KEY("train.epochs", train.epochs, unsigned),
        SPECIAL_UINT_KEY("train.iters_per_epoch", train.iters_per_epoch, unsigned),
        SPECIAL_UINT_KEY("train.n_per_class", train.n_per_class, unsigned),
        SPECIAL_REAL_KEY("train.lr0", train.lr0, double),
        SPECIAL_REAL_KEY("train.eta_min", train.eta_min, double),
        SPECIAL_REAL_KEY("train.warmup_fraction", train.warmup_fraction, double),
        SPECIAL_REAL_KEY("train.lambda1", train.lambda1, double),
        SPECIAL_REAL_KEY("train.lambda2", train.lambda2, double),
        SPECIAL_REAL_KEY("train.noise_std", train.noise_std, float),
        Key{"train.hidden", [](const PipelineConfig& c) { return fmt::format("{}", fmt::join(c.train.hidden, ",")); },
            [](PipelineConfig& c, const std::string& v) {
                c.train.hidden.clear();
                for (const auto& item : split_list(v))
                    c.train.hidden.push_back(narrow<std::size_t>("train.hidden", to_uint("train.hidden", item)));
            }},
        SPECIAL_BOOL_KEY("train.refine", train.refine),
        SPECIAL_BOOL_KEY("train.rebuild_sets_each_epoch", train.rebuild_sets_each_epoch),
        SPECIAL_REAL_KEY("train.sample_weight_floor", train.sample_weight_floor, double),
        SPECIAL_REAL_KEY("train.adam_beta1", train.adam.beta1, double),
        SPECIAL_REAL_KEY("train.adam_beta2", train.adam.beta2, double),
        SPECIAL_REAL_KEY("train.adam_eps", train.adam.eps, double),
        SPECIAL_UINT_KEY("gmm.pca_dims", train.pca_dims, unsigned),
        SPECIAL_UINT_KEY("gmm.components", train.gmm_components, unsigned),
        SPECIAL_UINT_KEY("gmm.max_iter", train.em.max_iter, unsigned),
        SPECIAL_REAL_KEY("gmm.tol", train.em.tol, double),
        SPECIAL_REAL_KEY("gmm.reg", train.em.reg, double),
    };
    return table;
}

#undef SPECIAL_UINT_KEY
#undef SPECIAL_REAL_KEY
#undef SPECIAL_BOOL_KEY
#undef SPECIAL_PATH_KEY

void apply_key(PipelineConfig& cfg, const std::string& name, const std::string& value) {
    if (name.rfind("alias.", 0) == 0) {
        const std::string cls = name.substr(6);
        if (cls.empty()) throw std::invalid_argument("config: empty alias key");
        cfg.aliases[cls] = trim(value);
        return;
    }
    for (const auto& k : keys()) {
        if (k.name == name) {
            k.set(cfg, trim(value));
            return;
        }
    }
    throw std::invalid_argument(fmt::format("config: unknown key '{}'", name));
}

}  // namespace

void PipelineConfig::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
    if (scales.empty()) fail("pseudo.scales must list at least one factor");
    for (double s : scales)
        if (!(s > 0.0)) fail("pseudo.scales must be positive");
    if (window == 0) fail("pseudo.window must be positive");
    if (stride == 0 || stride > window) fail("pseudo.stride must lie in [1, window]");
    if (!(tau > 0.0f)) fail("pseudo.tau must be positive");
    if (!(flip_prob >= 0.0f && flip_prob <= 1.0f)) fail("synthetic.flip_prob must lie in [0, 1]");
    if (out.empty()) fail("paths.out must be set");
    if (!synthetic && classes.empty()) fail("vocab.classes must be set unless synthetic.enabled");
    if (synthetic && !classes.empty() && classes.size() != scene.classes)
        fail("vocab.classes must name synthetic.classes entries");
    train.validate();
}

std::string config_text(const PipelineConfig& cfg) {
    std::string out;
    std::string section;
    for (const auto& k : keys()) {
        const auto dot = k.name.find('.');
        const std::string sec = k.name.substr(0, dot);
        if (sec != section) {
            out += fmt::format("{}[{}]\n", section.empty() ? "" : "\n", sec);
            section = sec;
        }
        out += fmt::format("{} = {}\n", k.name.substr(dot + 1), k.get(cfg));
    }
    if (!cfg.aliases.empty()) {
        out += "\n[alias]\n";
        for (const auto& [cls, prompt] : cfg.aliases) out += fmt::format("{} = {}\n", cls, prompt);
    }
    return out;
}

PipelineConfig parse_config(const std::string& text,
                            const std::vector<std::pair<std::string, std::string>>& overrides) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw std::invalid_argument(fmt::format("config: line {}: {}", e.line(), e.message()));
    }
    PipelineConfig cfg;
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw std::invalid_argument(fmt::format("config: key '{}' outside a section", section));
        for (const auto& [key, value] : body) apply_key(cfg, section + "." + key, value.data());
    }
    for (const auto& [key, value] : overrides) apply_key(cfg, key, value);
    return cfg;
}

PipelineConfig load_config(const std::optional<std::filesystem::path>& path,
                           const std::vector<std::pair<std::string, std::string>>& overrides) {
    std::string text;
    if (path) {
        std::ifstream in(*path);
        if (!in) throw std::runtime_error(fmt::format("cannot read config {}", path->string()));
        std::stringstream ss;
        ss << in.rdbuf();
        text = ss.str();
    }
    return parse_config(text, overrides);
}

namespace {

struct Inputs {
    HsiCube cube;
    std::optional<LabelMap> gt;
    ClassVocabulary vocab;
};

template <typename Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
}

void prepare_output(const PipelineConfig& cfg, const RunOptions& opts) {
    std::filesystem::create_directories(cfg.out);
    const auto path = cfg.out / artifacts::kConfig;
    const std::string text = config_text(cfg);
    if (std::filesystem::exists(path) && !opts.force) {
        std::ifstream in(path);
        std::stringstream ss;
        ss << in.rdbuf();
        if (ss.str() != text)
            throw std::runtime_error(fmt::format(
                "{} holds a run with a different config; use --force to overwrite", cfg.out.string()));
    }
    std::ofstream(path, std::ios::trunc) << text;
}

void require_file(const std::filesystem::path& p, const char* what) {
    if (p.empty()) throw std::invalid_argument(fmt::format("{} path is not set", what));
    if (!std::filesystem::exists(p)) throw std::runtime_error(fmt::format("{} not found: {}", what, p.string()));
}

Inputs load_inputs(const PipelineConfig& cfg) {
    Inputs in;
    if (cfg.synthetic) {
        SceneConfig sc = cfg.scene;
        sc.seed = cfg.seed;
        SyntheticScene scene = make_scene(sc);
        in.cube = std::move(scene.cube);
        in.gt = std::move(scene.gt);
        in.vocab = cfg.classes.empty() ? ClassVocabulary(scene.vocab.names(), cfg.aliases)
                                       : ClassVocabulary(cfg.classes, cfg.aliases);
        return in;
    }
    require_file(cfg.cube, "cube");
    require_file(cfg.wavelengths, "wavelength file");
    in.cube.values = ptf::to_float_grid(ptf::read_file(cfg.cube));
    in.cube.wavelengths = read_wavelengths(cfg.wavelengths);
    in.cube.validate();
    if (!cfg.gt.empty()) {
        require_file(cfg.gt, "ground truth");
        LabelMap gt(ptf::to_u16_grid(ptf::read_file(cfg.gt)));
        if (gt.channels() != 1 || gt.height() != in.cube.values.height() || gt.width() != in.cube.values.width())
            throw std::invalid_argument(fmt::format("ground truth is {}x{}x{}, cube is {}x{}", gt.height(), gt.width(),
                                                    gt.channels(), in.cube.values.height(), in.cube.values.width()));
        in.gt = std::move(gt);
    }
    in.vocab = ClassVocabulary(cfg.classes, cfg.aliases);
    return in;
}

MetricsReport evaluate(const LabelMap& pred, const LabelMap& gt, std::size_t k) {
    return metrics(confusion(pred, gt, k));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
    out << text;
}

}  // namespace

PseudoArtifacts cmd_pseudo(const PipelineConfig& cfg, const RunOptions& opts) {
    return stage("pseudo", [&] {
        cfg.validate();
        Inputs in = load_inputs(cfg);
        prepare_output(cfg, opts);
        const auto& out = cfg.out;
        const std::size_t k = in.vocab.size();

        if (cfg.synthetic) {
            const auto dir = out / artifacts::kSceneDir;
            std::filesystem::create_directories(dir);
            ptf::write_file(ptf::from_grid(in.cube.values), dir / "cube.ptf");
            write_wavelengths(in.cube.wavelengths, dir / "wavelengths.txt");
            ptf::write_file(ptf::from_grid(*in.gt), dir / "gt.ptf");
        }

        const RgbImage rgb = interpolate_rgb(in.cube);
        ptf::write_file(ptf::from_grid(rgb), out / artifacts::kRgb);
        in.vocab.save(out / artifacts::kClasses, out / artifacts::kAliases);

        std::unique_ptr<DenseScorer> scorer;
        if (cfg.synthetic) {
            Rng master(cfg.seed);
            Rng scorer_rng = derive_rng(master, 7);
            scorer = make_synthetic_scorer(*in.gt, k, cfg.flip_prob, cfg.sharpness, scorer_rng);
        } else {
            if (cfg.scores.empty()) throw std::invalid_argument("paths.scores is not set");
            scorer = std::make_unique<FileScorer>(cfg.scores, cfg.scales, k);
        }

        PseudoArtifacts result;
        result.probs = fused_score(*scorer, rgb, in.vocab, ScaleSet(cfg.scales), cfg.tau, cfg.window, cfg.stride);
        result.labels = argmax_labels(result.probs);
        result.confidence = k >= 2 ? bvsb(result.probs)
                                   : ConfidenceMap(result.labels.height(), result.labels.width(), 1.0f);
        ptf::write_file(ptf::from_grid(result.probs), out / artifacts::kProbs);
        ptf::write_file(ptf::from_grid(result.labels), out / artifacts::kLabels);
        ptf::write_file(ptf::from_grid(result.confidence), out / artifacts::kConfidence);
        render_map(result.labels, default_palette(k), out / artifacts::kPreview);

        if (in.gt) {
            result.report = evaluate(result.labels, *in.gt, k);
            write_text(out / artifacts::kPseudoReport, report_text(*result.report, in.vocab.names()));
            spdlog::info("pseudo: OA {:.2f} AA {:.2f} kappa {:.2f}", result.report->overall_accuracy,
                         result.report->average_accuracy, result.report->kappa);
        }
        return result;
    });
}

TrainArtifacts cmd_train(const PipelineConfig& cfg, const RunOptions& opts) {
    return stage("train", [&] {
        cfg.validate();
        TrainConfig tc = cfg.train;
        tc.seed = cfg.seed;
        Inputs in = load_inputs(cfg);
        prepare_output(cfg, opts);
        const auto& out = cfg.out;
        const std::size_t k = in.vocab.size();

        require_file(out / artifacts::kLabels, "pseudo-label map");
        require_file(out / artifacts::kConfidence, "confidence map");
        const LabelMap pseudo(ptf::to_u16_grid(ptf::read_file(out / artifacts::kLabels)));
        const ConfidenceMap margins(ptf::to_float_grid(ptf::read_file(out / artifacts::kConfidence)));
        if (pseudo.height() != in.cube.values.height() || pseudo.width() != in.cube.values.width() ||
            margins.height() != pseudo.height() || margins.width() != pseudo.width())
            throw std::invalid_argument("pseudo-label artifacts do not match the cube extent");
        for (auto v : pseudo.data())
            if (v != kIgnoreLabel && v >= k)
                throw std::invalid_argument(fmt::format("pseudo-label {} exceeds the {} configured classes", v, k));

        const auto [normalized, stats] = normalize_spectra(in.cube);
        TrainArtifacts result{train_spectral_classifier(normalized, pseudo, margins, k, tc), {}};

        const auto model_dir = out / artifacts::kModelDir;
        save_model(result.outcome.model, tc, model_dir);
        auto vec_tensor = [](const std::vector<double>& v) {
            return ptf::Tensor{{v.size()}, std::vector<float>(v.begin(), v.end())};
        };
        ptf::write_file(vec_tensor(stats.mean), model_dir / "band_mean.ptf");
        ptf::write_file(vec_tensor(stats.stddev), model_dir / "band_std.ptf");
        if (result.outcome.sets) result.outcome.sets->bank.save(out / artifacts::kBankDir);
        write_training_log(result.outcome.log, out / artifacts::kTrainLog);

        const ProbMap probs = predict_map(result.outcome.model, normalized);
        result.predicted = argmax_labels(probs);
        ptf::write_file(ptf::from_grid(probs), out / artifacts::kPredProbs);
        ptf::write_file(ptf::from_grid(result.predicted), out / artifacts::kPredLabels);
        render_map(result.predicted, default_palette(k), out / artifacts::kPredPng);
        if (in.gt) {
            const auto r = evaluate(result.predicted, *in.gt, k);
            spdlog::info("train: prediction OA {:.2f}", r.overall_accuracy);
        }
        return result;
    });
}

MetricsReport cmd_eval(const PipelineConfig& cfg, const RunOptions& opts,
                       const std::optional<std::filesystem::path>& prediction) {
    return stage("eval", [&] {
        cfg.validate();
        Inputs in = load_inputs(cfg);
        if (!in.gt) throw std::invalid_argument("no ground truth configured (paths.gt)");
        prepare_output(cfg, opts);
        const auto pred_path = prediction.value_or(cfg.out / artifacts::kPredLabels);
        require_file(pred_path, "prediction");
        const LabelMap pred(ptf::to_u16_grid(ptf::read_file(pred_path)));
        const auto report = evaluate(pred, *in.gt, in.vocab.size());
        write_text(cfg.out / artifacts::kReport, report_text(report, in.vocab.names()));
        write_text(cfg.out / artifacts::kReportCsv, report_csv(report, in.vocab.names()));
        fmt::print("OA {:.2f} | AA {:.2f} | kappa {:.2f}\n", report.overall_accuracy, report.average_accuracy,
                   report.kappa);
        return report;
    });
}

void cmd_render(const std::filesystem::path& labels, const std::filesystem::path& png, std::size_t num_classes) {
    stage("render", [&] {
        require_file(labels, "label map");
        const LabelMap map(ptf::to_u16_grid(ptf::read_file(labels)));
        if (num_classes == 0) {
            for (auto v : map.data())
                if (v != kIgnoreLabel) num_classes = std::max<std::size_t>(num_classes, v + 1u);
        }
        render_map(map, default_palette(num_classes), png);
    });
}

PipelineResult cmd_pipeline(const PipelineConfig& cfg, const RunOptions& opts) {
    PipelineResult result;
    result.pseudo = cmd_pseudo(cfg, opts);
    result.train = cmd_train(cfg, opts);
    if (cfg.synthetic || !cfg.gt.empty()) {
        result.report = cmd_eval(cfg, opts);
    } else {
        spdlog::warn("eval skipped: no ground truth configured");
    }
    return result;
}

}  // namespace special
