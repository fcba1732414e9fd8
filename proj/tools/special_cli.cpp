// Stage-wise command line: pseudo, train, eval, render, pipeline.
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "special/pipeline.hpp"

namespace {

// `--section.key value` or `--section.key=value` left over after CLI11.
std::vector<std::pair<std::string, std::string>> collect_overrides(const std::vector<std::string>& rest) {
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t i = 0; i < rest.size(); ++i) {
        const std::string& arg = rest[i];
        if (arg.rfind("--", 0) != 0 || arg.find('.') == std::string::npos)
            throw std::invalid_argument(fmt::format("unexpected argument '{}'", arg));
        const auto eq = arg.find('=');
        if (eq != std::string::npos) {
            out.emplace_back(arg.substr(2, eq - 2), arg.substr(eq + 1));
        } else {
            if (i + 1 >= rest.size()) throw std::invalid_argument(fmt::format("{} needs a value", arg));
            out.emplace_back(arg.substr(2), rest[++i]);
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pseudo-label generation and noisy-label refinement for hyperspectral scenes"};
    app.require_subcommand(1);
    app.allow_extras();

    std::optional<std::string> config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    bool synthetic = false;
    bool force = false;
    bool verbose = false;
    app.add_option("--config", config_path, "sectioned key = value config file");
    app.add_option("--seed", seed, "overrides run.seed");
    app.add_option("--out", out_dir, "overrides paths.out");
    app.add_flag("--synthetic", synthetic, "generate a seeded synthetic scene and oracle scorer");
    app.add_flag("--force", force, "overwrite an output directory holding a different config");
    app.add_flag("-v,--verbose", verbose, "debug logging");

    auto* pseudo = app.add_subcommand("pseudo", "fused multi-scale pseudo-labels");
    auto* train = app.add_subcommand("train", "warmup and refinement of the spectral classifier");
    auto* eval = app.add_subcommand("eval", "OA / AA / kappa against ground truth");
    auto* render = app.add_subcommand("render", "label map to PNG");
    auto* pipeline = app.add_subcommand("pipeline", "pseudo, train and eval in sequence");
    for (auto* sub : {pseudo, train, eval, render, pipeline}) {
        sub->fallthrough();
        sub->allow_extras();
    }
    std::optional<std::string> prediction;
    eval->add_option("--prediction", prediction, "label map PTF (default <out>/pred_labels.ptf)");
    std::string labels_path;
    std::string png_path;
    std::size_t render_classes = 0;
    render->add_option("labels", labels_path, "label map PTF")->required();
    render->add_option("png", png_path, "output PNG")->required();
    render->add_option("--classes", render_classes, "palette size (default: max label + 1)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

    std::string stage_name = "config";
    try {
        if (render->parsed()) {
            stage_name = "render";
            special::cmd_render(labels_path, png_path, render_classes);
            return EXIT_SUCCESS;
        }
        std::vector<std::string> rest = app.remaining();
        for (auto* sub : {pseudo, train, eval, pipeline}) {
            const auto more = sub->remaining();
            rest.insert(rest.end(), more.begin(), more.end());
        }
        auto overrides = collect_overrides(rest);
        if (seed) overrides.emplace_back("run.seed", std::to_string(*seed));
        if (out_dir) overrides.emplace_back("paths.out", *out_dir);
        if (synthetic) overrides.emplace_back("synthetic.enabled", "true");
        const auto cfg = special::load_config(config_path, overrides);
        const special::RunOptions opts{force};

        if (pseudo->parsed()) special::cmd_pseudo(cfg, opts);
        if (train->parsed()) special::cmd_train(cfg, opts);
        if (eval->parsed()) special::cmd_eval(cfg, opts, prediction);
        if (pipeline->parsed()) special::cmd_pipeline(cfg, opts);
    } catch (const special::StageError& e) {
        std::cerr << fmt::format("error [{}]: {}\n", e.stage(), e.what());
        return 2;
    } catch (const std::exception& e) {
        std::cerr << fmt::format("error [{}]: {}\n", stage_name, e.what());
        return 2;
    }
    return EXIT_SUCCESS;
}
