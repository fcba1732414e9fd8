// Acceptance harness: one PASS/FAIL line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "oracles.hpp"
#include "special/metrics.hpp"
#include "special/mixture.hpp"
#include "special/mlp.hpp"
#include "special/pipeline.hpp"
#include "special/ptf.hpp"
#include "special/pseudo_label.hpp"
#include "special/resample.hpp"
#include "special/scene.hpp"
#include "special/trainer.hpp"

using namespace special;

namespace {

// Collects failure messages for one criterion.
struct Checker {
    std::vector<std::string> failures;
    void expect(bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    }
};

using Clock = std::chrono::steady_clock;

int g_failed = 0;

void criterion(const std::string& name, double budget_s, const std::function<void(Checker&)>& body) {
    Checker c;
    const auto t0 = Clock::now();
    try {
        body(c);
    } catch (const std::exception& e) {
        c.failures.push_back(fmt::format("exception: {}", e.what()));
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    if (budget_s > 0 && secs >= budget_s) c.failures.push_back(fmt::format("runtime {:.2f}s >= {:.0f}s", secs, budget_s));
    if (c.failures.empty()) {
        fmt::print("PASS  {} ({:.2f}s)\n", name, secs);
    } else {
        ++g_failed;
        fmt::print("FAIL  {} ({:.2f}s)\n", name, secs);
        for (const auto& f : c.failures) fmt::print("        - {}\n", f);
    }
    std::fflush(stdout);
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(static_cast<double>(a[i]) - b[i]));
    return m;
}

// ---------------------------------------------------------------------------

void math_ops(Checker& c) {
    std::mt19937_64 rng(1);
    std::normal_distribution<float> n(0.0f, 1.0f);
    for (std::size_t k : {2u, 3u, 7u}) {
        for (float tau : {0.01f, 0.1f, 1.0f}) {
            ScoreMap s(6, 5, k);
            for (auto& v : s.data()) v = n(rng);
            const auto p = softmax_temperature(s, tau);
            for (std::size_t px = 0; px < p.pixels(); ++px) {
                double sum = 0.0;
                for (float v : p.pixel(px)) sum += v;
                c.expect(std::fabs(sum - 1.0) <= 1e-5, fmt::format("softmax sum {} (K={}, tau={})", sum, k, tau));
            }
        }
    }
    {
        ScoreMap s(1, 1, 2);
        s(0, 0, 0) = static_cast<float>(std::log(2.0));
        s(0, 0, 1) = 0.0f;
        const auto p = softmax_temperature(s, 1.0f);
        c.expect(std::fabs(p(0, 0, 0) - 2.0 / 3.0) <= 1e-6 && std::fabs(p(0, 0, 1) - 1.0 / 3.0) <= 1e-6,
                 "softmax (ln2, 0) -> (2/3, 1/3)");
        ScoreMap eq(1, 1, 4, 0.3f);
        const auto u = softmax_temperature(eq, 0.01f);
        for (float v : u.data()) c.expect(std::fabs(v - 0.25f) <= 1e-7, "equal scores -> uniform");
    }
    {
        ProbMap p(1, 4, 3, 0.0f);
        p(0, 0, 1) = 1.0f;                                     // one-hot
        for (int i = 0; i < 3; ++i) p(0, 1, i) = 1.0f / 3.0f;  // uniform
        p(0, 2, 0) = 0.7f, p(0, 2, 1) = 0.2f, p(0, 2, 2) = 0.1f;
        p(0, 3, 0) = 0.2f, p(0, 3, 1) = 0.5f, p(0, 3, 2) = 0.3f;
        const auto b = bvsb(p);
        c.expect(b(0, 0) == 1.0f, "bvsb one-hot -> 1");
        c.expect(b(0, 1) == 0.0f, "bvsb uniform -> 0");
        c.expect(std::fabs(b(0, 2) - 0.5) <= 1e-6, "bvsb (0.7,0.2,0.1) -> 0.5");
        ProbMap r(8, 8, 5);
        std::uniform_real_distribution<float> u(0.0f, 1.0f);
        for (std::size_t px = 0; px < r.pixels(); ++px) {
            float sum = 0.0f;
            for (auto& v : r.pixel(px)) sum += v = u(rng);
            for (auto& v : r.pixel(px)) v /= sum;
        }
        const auto margins = bvsb(r);
        for (float v : margins.data()) c.expect(v >= 0.0f && v <= 1.0f, "bvsb range [0,1]");
    }
    {
        ProbMap p(1, 2, 4, 0.0f);
        p(0, 0, 1) = 0.4f, p(0, 0, 3) = 0.4f, p(0, 0, 0) = 0.2f;
        p(0, 1, 2) = 1.0f;
        const auto l = argmax_labels(p);
        c.expect(l(0, 0) == 1, "argmax tie between 1 and 3 -> 1");
        c.expect(l(0, 1) == 2, "argmax one-hot class 2 -> 2");
    }
    {
        const double lr0 = 1e-3, eta = 1e-5, T = 300;
        c.expect(cosine_lr(0, T, lr0, eta) == lr0, "cosine t=0 -> lr0");
        c.expect(std::fabs(cosine_lr(T, T, lr0, eta) - eta) <= 1e-18, "cosine t=T -> eta_min");
        c.expect(std::fabs(cosine_lr(T / 2, T, lr0, eta) - (lr0 + eta) / 2) <= 1e-15, "cosine t=T/2 -> midpoint");
        double prev = lr0;
        for (int t = 1; t <= T; ++t) {
            const double lr = cosine_lr(t, T, lr0, eta);
            c.expect(lr <= prev, "cosine non-increasing");
            prev = lr;
        }
    }
}

void resampler(Checker& c) {
    Image flat(9, 7, 2, 0.37f);
    for (double f : {0.5, 0.8, 1.0, 1.7, 2.0, 3.0}) {
        const auto r = bicubic_resample(flat, f);
        for (float v : r.data()) c.expect(std::fabs(v - 0.37f) <= 1e-6, fmt::format("constant preserved at factor {}", f));
    }
    const auto rnd = oracle::random_rgb(11, 13, 5);
    c.expect(max_abs_diff(bicubic_resample(rnd, 1.0).data(), rnd.data()) <= 1e-6, "factor 1 identity");

    Image ramp(4, 16, 1);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 16; ++x) ramp(y, x) = static_cast<float>(x);
    const auto up = bicubic_resample(ramp, 2.0);
    double worst = 0.0;
    for (std::size_t y = 0; y < up.height(); ++y)
        for (std::size_t x = 0; x < up.width(); ++x) {
            const double src = (static_cast<double>(x) + 0.5) / 2.0 - 0.5;
            if (src < 1.0 || src > 14.0) continue;  // stay clear of the clamped border taps
            worst = std::max(worst, std::fabs(up(y, x) - src));
        }
    c.expect(worst < 1e-4, fmt::format("ramp interior error {}", worst));

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 1000; ++i) {
        const double t = u(rng);
        double s = 0.0;
        for (int j = -1; j <= 2; ++j) s += cubic_kernel(t - j);
        c.expect(std::fabs(s - 1.0) <= 1e-6, fmt::format("partition of unity at t={}", t));
        const auto w = cubic_weights(t);
        c.expect(std::fabs(w[0] + w[1] + w[2] + w[3] - 1.0) <= 1e-6, "tap weights sum to 1");
    }
}

void fusion_tiling(Checker& c) {
    const auto vocab = oracle::vocab(4);
    const oracle::ColourScorer scorer(4);
    const auto rgb = oracle::random_rgb(20, 27, 9);

    const auto fused = fused_score(scorer, rgb, vocab, ScaleSet({1.0}), 0.05f, 8, 4);
    const auto direct = softmax_temperature(tiled_score(scorer, rgb, vocab, 8, 4), 0.05f);
    c.expect(fused.data() == direct.data(), "N=1, s=1 fusion equals softmax of tiled scores exactly");

    const oracle::OffsetScorer offsets;
    const RgbImage line(1, 8, 3, 0.5f);
    const auto tiled = tiled_score(offsets, line, oracle::vocab(1), 4, 2);
    for (std::size_t x = 0; x < 8; ++x) {
        double sum = 0.0;
        int count = 0;
        for (std::size_t o = 0; o + 4 <= 8; ++o) {
            const bool placed = o % 2 == 0 || o == 8 - 4;
            if (placed && x >= o && x < o + 4) {
                sum += static_cast<double>(o);
                ++count;
            }
        }
        c.expect(tiled(0, x) == static_cast<float>(sum / count),
                 fmt::format("1x8 tiling pixel {}: {} vs brute force {}", x, tiled(0, x), sum / count));
    }

    const auto a = fused_score(scorer, rgb, vocab, ScaleSet({1.0, 2.0, 1.5}), 0.05f, 16, 8);
    const auto b = fused_score(scorer, rgb, vocab, ScaleSet({1.5, 1.0, 2.0}), 0.05f, 16, 8);
    const auto d = max_abs_diff(a.data(), b.data());
    c.expect(d <= 1e-6, fmt::format("scale permutation difference {}", d));
}

void pca_suite(Checker& c) {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    MatrixXd x(200, 10);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = n(rng) * (1.0 + static_cast<double>(j)) + 0.3 * x(i, 0);
    const auto pca = fit_pca(x, 6);
    const MatrixXd gram = pca.components * pca.components.transpose();
    const double ortho = (gram - MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff();
    c.expect(ortho <= 1e-6, fmt::format("orthonormality error {}", ortho));
    for (Eigen::Index i = 1; i < pca.eigenvalues.size(); ++i)
        c.expect(pca.eigenvalues(i) <= pca.eigenvalues(i - 1) && pca.eigenvalues(i) >= 0, "eigenvalues sorted, >= 0");

    MatrixXd line(50, 2);
    for (Eigen::Index i = 0; i < 50; ++i) line(i, 0) = line(i, 1) = 0.1 * static_cast<double>(i) - 2.0;
    const auto lp = fit_pca(line, 2);
    const double r = 1.0 / std::sqrt(2.0);
    c.expect(std::fabs(lp.components(0, 0) - r) <= 1e-8 && std::fabs(lp.components(0, 1) - r) <= 1e-8,
             fmt::format("line component ({}, {})", lp.components(0, 0), lp.components(0, 1)));
    c.expect(std::fabs(lp.eigenvalues(1)) <= 1e-8, fmt::format("line second eigenvalue {}", lp.eigenvalues(1)));

    for (int t = 0; t < 20; ++t) {
        VectorXd v(10);
        for (auto& e : v) e = n(rng) * 3.0;
        const VectorXd got = project(pca, v);
        for (Eigen::Index i = 0; i < 6; ++i) {
            double dot = 0.0;
            for (Eigen::Index j = 0; j < 10; ++j) dot += pca.components(i, j) * (v(j) - pca.mean(j));
            c.expect(std::fabs(got(i) - dot) <= 1e-9, "projection matches naive mat-vec");
        }
    }
}

void em_suite(Checker& c) {
    std::mt19937_64 data_rng(5);
    std::normal_distribution<double> n(0.0, 1.0);
    {
        MatrixXd x(300, 3);
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = n(data_rng) * (j + 1) + 2.0 * j;
        Rng rng(1);
        const EmOptions opts{200, 1e-6, 1e-4};
        const auto fit = fit_gmm_em(x, 1, rng, opts);
        VectorXd mu = VectorXd::Zero(3);
        for (Eigen::Index i = 0; i < x.rows(); ++i) mu += x.row(i).transpose();
        mu /= static_cast<double>(x.rows());
        MatrixXd cov = MatrixXd::Zero(3, 3);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            const VectorXd d = x.row(i).transpose() - mu;
            cov += d * d.transpose();
        }
        cov /= static_cast<double>(x.rows());
        cov += 1e-4 * MatrixXd::Identity(3, 3);
        c.expect((fit.model.means()[0] - mu).cwiseAbs().maxCoeff() <= 1e-10, "M=1 mean equals sample mean");
        c.expect((fit.model.covariances()[0] - cov).cwiseAbs().maxCoeff() <= 1e-10, "M=1 covariance closed form");
        c.expect(std::fabs(fit.model.weights()(0) - 1.0) <= 1e-12, "M=1 weight 1");
    }
    int bad = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 g(seed + 100);
        const int d = 1 + static_cast<int>(seed % 3);
        MatrixXd x(240, d);
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            for (int j = 0; j < d; ++j) x(i, j) = n(g) + 3.0 * static_cast<double>(i % 3) * (j + 1);
        Rng rng(seed);
        const auto fit = fit_gmm_em(x, 2 + static_cast<unsigned>(seed % 3), rng, {200, 1e-10, 1e-4});
        for (std::size_t t = 1; t < fit.log_likelihood.size(); ++t)
            if (fit.log_likelihood[t] < fit.log_likelihood[t - 1] - 1e-9) {
                ++bad;
                break;
            }
    }
    c.expect(bad == 0, fmt::format("log-likelihood decreased on {} of 100 seeds", bad));

    MatrixXd two(2000, 1);
    for (Eigen::Index i = 0; i < 2000; ++i) two(i, 0) = n(data_rng) + (i < 1000 ? -5.0 : 5.0);
    Rng rng(42);
    const auto fit = fit_gmm_em(two, 2, rng);
    const auto& m = fit.model.means();
    const Eigen::Index lo = m[0](0) < m[1](0) ? 0 : 1;
    c.expect(std::fabs(m[lo](0) + 5.0) <= 0.2 && std::fabs(m[1 - lo](0) - 5.0) <= 0.2,
             fmt::format("recovered means {} {}", m[lo](0), m[1 - lo](0)));
    c.expect(std::fabs(fit.model.weights()(0) - 0.5) <= 0.05 && std::fabs(fit.model.weights()(1) - 0.5) <= 0.05,
             "recovered weights near 0.5");
}

ClassGmmBank one_d_bank(std::vector<double> means, std::vector<double> vars) {
    ClassGmmBank bank;
    bank.pca = PcaModel{VectorXd::Zero(1), MatrixXd::Identity(1, 1), VectorXd::Ones(1)};
    for (std::size_t k = 0; k < means.size(); ++k)
        bank.classes.emplace_back(Gmm(VectorXd::Ones(1), {VectorXd::Constant(1, means[k])},
                                      {MatrixXd::Constant(1, 1, vars[k])}));
    return bank;
}

void soft_label_suite(Checker& c) {
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.2, 2.0);
    for (int t = 0; t < 30; ++t) {
        const Eigen::Index q = 1 + t % 4;
        ClassGmmBank bank;
        bank.pca = PcaModel{VectorXd::Zero(q), MatrixXd::Identity(q, q), VectorXd::Ones(q)};
        const int k = 2 + t % 3;
        for (int cls = 0; cls < k; ++cls) {
            const int m = 1 + (t + cls) % 3;
            VectorXd w(m);
            std::vector<VectorXd> mus;
            std::vector<MatrixXd> covs;
            for (int j = 0; j < m; ++j) {
                w(j) = u(rng);
                VectorXd mu(q);
                for (auto& e : mu) e = n(rng) * 3.0;
                MatrixXd a(q, q);
                for (auto& e : a.reshaped()) e = n(rng);
                mus.push_back(mu);
                covs.push_back(a * a.transpose() + 0.1 * MatrixXd::Identity(q, q));
            }
            bank.classes.emplace_back(Gmm(w / w.sum(), mus, covs));
        }
        MatrixXd xs(50, q);
        for (auto& e : xs.reshaped()) e = n(rng) * (t % 5 == 0 ? 1e3 : 4.0);
        const MatrixXd s = soft_labels(bank, xs);
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            c.expect(std::fabs(s.row(i).sum() - 1.0) <= 1e-6, "soft label sums to 1");
            c.expect(s.row(i).minCoeff() >= 0.0, "soft label non-negative");
        }
    }
    const auto bank = one_d_bank({0.0, 2.0}, {1.0, 1.0});
    const MatrixXd mid = soft_labels(bank, MatrixXd::Constant(1, 1, 1.0));
    c.expect(std::fabs(mid(0, 0) - 0.5) <= 1e-6 && std::fabs(mid(0, 1) - 0.5) <= 1e-6, "midpoint -> (0.5, 0.5)");
    const MatrixXd zero = soft_labels(bank, MatrixXd::Zero(1, 1));
    const double p0 = oracle::gauss1d(0, 0, 1), p1 = oracle::gauss1d(0, 2, 1);
    c.expect(std::fabs(zero(0, 0) - p0 / (p0 + p1)) <= 1e-3 && std::fabs(zero(0, 0) - 0.8808) <= 1e-3 &&
                 std::fabs(zero(0, 1) - 0.1192) <= 1e-3,
             fmt::format("x=0 -> ({}, {})", zero(0, 0), zero(0, 1)));
    const MatrixXd far = soft_labels(bank, MatrixXd::Constant(1, 1, 1e6));
    c.expect(far(0, 0) == 0.5 && far(0, 1) == 0.5, "outlier -> uniform");
}

// Total objective at f64 for a flat parameter perturbation.
double objective_total(const BasicMlp<double>& m, const std::vector<LossTerm<double>>& terms) {
    return weighted_objective<double>(m, terms).total;
}

void gradient_check(Checker& c) {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> dim(2, 8), cls(2, 4), hid(2, 16), cnt(1, 6);
    std::normal_distribution<double> n(0.0, 1.0);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const auto b = static_cast<std::size_t>(dim(rng));
        const auto k = static_cast<std::size_t>(cls(rng));
        std::vector<std::size_t> widths{b};
        for (int l = 0; l < 1 + trial % 2; ++l) widths.push_back(static_cast<std::size_t>(hid(rng)));
        widths.push_back(k);
        Rng init(trial);
        auto model = BasicMlp<double>::initialized(widths, init);
        for (auto& v : model.biases()) for (auto& e : v) e = 0.1 * n(rng);

        auto batch = [&](bool hard) {
            LossTerm<double> t;
            const int cols = cnt(rng);
            t.inputs = Mat<double>(static_cast<Eigen::Index>(b), cols);
            for (auto& e : t.inputs.reshaped()) e = n(rng);
            t.targets = Mat<double>::Zero(static_cast<Eigen::Index>(k), cols);
            for (int j = 0; j < cols; ++j) {
                if (hard) {
                    t.targets(static_cast<Eigen::Index>(rng() % k), j) = 1.0;
                } else {
                    double s = 0.0;
                    for (Eigen::Index i = 0; i < t.targets.rows(); ++i) s += t.targets(i, j) = std::exp(n(rng));
                    t.targets.col(j) /= s;
                }
            }
            return t;
        };
        std::vector<LossTerm<double>> terms{batch(true), batch(false), batch(false)};
        terms[0].weight = 1.0;
        terms[1].weight = 0.3 + 0.1 * trial;
        terms[2].weight = 0.5;

        const auto analytic = weighted_objective<double>(model, terms).grads;
        std::vector<double> a, fd;
        const double h = 1e-6;
        auto probe = [&](double& param) {
            const double keep = param;
            param = keep + h;
            const double up = objective_total(model, terms);
            param = keep - h;
            const double down = objective_total(model, terms);
            param = keep;
            fd.push_back((up - down) / (2 * h));
        };
        for (std::size_t l = 0; l < model.layers(); ++l) {
            for (Eigen::Index i = 0; i < model.weights()[l].size(); ++i) {
                a.push_back(analytic.weights[l].data()[i]);
                probe(model.weights()[l].data()[i]);
            }
            for (Eigen::Index i = 0; i < model.biases()[l].size(); ++i) {
                a.push_back(analytic.biases[l].data()[i]);
                probe(model.biases()[l].data()[i]);
            }
        }
        double num = 0.0, den_a = 0.0, den_f = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            num += (a[i] - fd[i]) * (a[i] - fd[i]);
            den_a += a[i] * a[i];
            den_f += fd[i] * fd[i];
        }
        const double rel = std::sqrt(num) / std::max({std::sqrt(den_a), std::sqrt(den_f), 1e-12});
        worst = std::max(worst, rel);
    }
    c.expect(worst < 1e-4, fmt::format("worst relative gradient error {}", worst));
}

void metrics_suite(Checker& c) {
    const auto r = metrics(ConfusionMatrix(2, {4, 1, 1, 4}));
    c.expect(std::fabs(r.overall_accuracy - 80.0) <= 1e-9 && std::fabs(r.average_accuracy - 80.0) <= 1e-9 &&
                 std::fabs(r.kappa - 60.0) <= 1e-9,
             fmt::format("[[4,1],[1,4]] -> {}/{}/{}", r.overall_accuracy, r.average_accuracy, r.kappa));
    const auto p = metrics(ConfusionMatrix(3, {5, 0, 0, 0, 7, 0, 0, 0, 2}));
    c.expect(p.overall_accuracy == 100.0 && p.average_accuracy == 100.0 && p.kappa == 100.0, "perfect -> 100/100/100");
    const auto z = metrics(ConfusionMatrix(2, {6, 0, 6, 0}));
    c.expect(std::fabs(z.kappa) <= 1e-12 && std::fabs(z.overall_accuracy - 50.0) <= 1e-12, "constant predictor -> kappa 0");
    std::vector<std::uint64_t> base{13, 2, 5, 1, 17, 3, 4, 0, 9};
    const auto m1 = metrics(ConfusionMatrix(3, base));
    for (auto& v : base) v *= 7;
    const auto m7 = metrics(ConfusionMatrix(3, base));
    c.expect(std::fabs(m1.overall_accuracy - m7.overall_accuracy) <= 1e-9 &&
                 std::fabs(m1.average_accuracy - m7.average_accuracy) <= 1e-9 && std::fabs(m1.kappa - m7.kappa) <= 1e-9,
             "count scaling invariance");
}

void sampler_suite(Checker& c) {
    const std::size_t n = 10;
    LabelMap labels(1, n, std::uint16_t{0});
    ConfidenceMap margins(1, n, 0.4f);
    const ClassBalancedSampler sampler(labels, margins, 1e-6);
    Rng rng(12345);
    const unsigned draws = 100000;
    const auto d = sampler.draw(draws, rng);
    std::vector<double> counts(n, 0.0);
    for (auto px : d.pixels) counts[px] += 1.0;
    const double expect = draws / static_cast<double>(n);
    const double sigma = std::sqrt(draws * (1.0 / n) * (1.0 - 1.0 / n));
    double chi2 = 0.0;
    for (double k : counts) chi2 += (k - expect) * (k - expect) / expect;
    c.expect(chi2 <= 27.88, fmt::format("chi-square {} above the df=9, p=0.001 bound", chi2));
    for (std::size_t i = 0; i < n; ++i)
        c.expect(std::fabs(counts[i] - expect) <= 3.0 * sigma,
                 fmt::format("pixel {} drawn {} times, expected {} +- {}", i, counts[i], expect, 3 * sigma));

    ConfidenceMap single(1, n, 0.0f);
    single(0, 6) = 1.0f;
    const auto one = ClassBalancedSampler(labels, single, 0.0).draw(1000, rng);
    c.expect(std::all_of(one.pixels.begin(), one.pixels.end(), [](auto p) { return p == 6; }),
             "single-winner case always draws the winner");
}

// ---------------------------------------------------------------------------

struct EndToEnd {
    double pseudo_oa = 0.0;
    double final_oa = 0.0;
    double seconds = 0.0;
    std::filesystem::path dir;
};

EndToEnd g_run;

PipelineConfig synthetic_config(const std::filesystem::path& out) {
    PipelineConfig cfg;
    cfg.synthetic = true;
    cfg.seed = 42;
    cfg.flip_prob = 0.30f;
    cfg.sharpness = 5.0f;
    cfg.out = out;
    return cfg;
}

double oa_against(const LabelMap& pred, const LabelMap& gt, std::size_t k) {
    return metrics(confusion(pred, gt, k)).overall_accuracy;
}

void end_to_end(Checker& c) {
    g_run.dir = oracle::fresh_dir("acceptance_a");
    const auto cfg = synthetic_config(g_run.dir);
    c.expect(cfg.scene.height == 64 && cfg.scene.width == 64 && cfg.scene.classes == 4 && cfg.scene.bands == 16,
             "scene is 64x64, K=4, B=16");

    const auto t0 = Clock::now();
    const auto result = cmd_pipeline(cfg);
    g_run.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    g_run.pseudo_oa = result.pseudo.report->overall_accuracy;
    g_run.final_oa = result.report->overall_accuracy;
    fmt::print("        pseudo OA {:.2f}, refined OA {:.2f}, pipeline {:.2f}s\n", g_run.pseudo_oa, g_run.final_oa,
               g_run.seconds);

    SceneConfig sc = cfg.scene;
    sc.seed = cfg.seed;
    const auto scene = make_scene(sc);
    double min_gap = 1e9;
    for (std::size_t a = 0; a < sc.classes; ++a)
        for (std::size_t b = a + 1; b < sc.classes; ++b) {
            double gap = 0.0;
            for (std::size_t i = 0; i < sc.bands; ++i)
                gap = std::max(gap, std::fabs(scene.class_means[a][i] - scene.class_means[b][i]));
            min_gap = std::min(min_gap, gap);
        }
    c.expect(min_gap >= 3.0 * sc.noise_std, fmt::format("class means separated by {} sigma", min_gap / sc.noise_std));

    c.expect(std::fabs(g_run.pseudo_oa - 70.0) <= 3.0, fmt::format("(a) pseudo OA {:.2f} not within 70 +- 3", g_run.pseudo_oa));
    c.expect(g_run.final_oa >= g_run.pseudo_oa + 5.0,
             fmt::format("(b) refined OA {:.2f} < pseudo OA {:.2f} + 5", g_run.final_oa, g_run.pseudo_oa));

    // Ablation on the same pseudo-labels.
    const auto [normalized, stats] = normalize_spectra(scene.cube);
    auto run = [&](double l1, double l2) {
        TrainConfig tc = cfg.train;
        tc.seed = cfg.seed;
        tc.lambda1 = l1;
        tc.lambda2 = l2;
        const auto out = train_spectral_classifier(normalized, result.pseudo.labels, result.pseudo.confidence, 4, tc);
        return oa_against(argmax_labels(predict_map(out.model, normalized)), scene.gt, 4);
    };
    const double random_only = run(0.0, 0.0);
    const double with_conf = run(cfg.train.lambda1, 0.0);
    const double all_three = run(cfg.train.lambda1, cfg.train.lambda2);
    fmt::print("        ablation OA: random {:.2f}, +confident {:.2f}, all three {:.2f}\n", random_only, with_conf,
               all_three);
    c.expect(random_only <= with_conf + 1.0, "(c) random-only <= random+confident (+1 slack)");
    c.expect(with_conf <= all_three + 1.0, "(c) random+confident <= all three (+1 slack)");
    c.expect(std::fabs(all_three - g_run.final_oa) <= 1e-9, "ablation all-three run reproduces the pipeline OA");
    c.expect(g_run.seconds < 60.0, fmt::format("pipeline runtime {:.2f}s", g_run.seconds));
}

void format_determinism(Checker& c) {
    std::mt19937_64 rng(9);
    std::uniform_int_distribution<int> nd(0, 4), ext(0, 5);
    std::uniform_int_distribution<std::uint32_t> bits;
    for (int t = 0; t < 200; ++t) {
        ptf::Tensor tensor;
        const int ndim = nd(rng);
        std::size_t count = 1;
        for (int i = 0; i < ndim; ++i) {
            tensor.dims.push_back(static_cast<std::uint64_t>(ext(rng)));
            count *= tensor.dims.back();
        }
        if (t % 2 == 0) {
            std::vector<float> v(count);
            for (auto& e : v) {
                const std::uint32_t b = bits(rng);
                std::memcpy(&e, &b, 4);
            }
            tensor.data = v;
        } else {
            std::vector<std::uint16_t> v(count);
            for (auto& e : v) e = static_cast<std::uint16_t>(bits(rng));
            tensor.data = v;
        }
        std::stringstream first, second;
        ptf::write(tensor, first);
        const auto back = ptf::read(first);
        ptf::write(back, second);
        c.expect(first.str() == second.str() && back.dims == tensor.dims && back.dtype() == tensor.dtype(),
                 fmt::format("round trip {}", t));
        if (tensor.dtype() == ptf::DType::F32)
            c.expect(std::memcmp(back.f32().data(), tensor.f32().data(), count * 4) == 0, "f32 payload bit-exact");
        else
            c.expect(back.u16() == tensor.u16(), "u16 payload exact");
    }

    if (g_run.dir.empty()) throw std::runtime_error("end-to-end run did not produce an output directory");
    const auto before = oracle::snapshot(g_run.dir);
    cmd_pipeline(synthetic_config(g_run.dir));
    const auto after = oracle::snapshot(g_run.dir);
    c.expect(before == after, "rerun in the same directory is byte-identical");

    const auto other = oracle::fresh_dir("acceptance_b");
    cmd_pipeline(synthetic_config(other));
    auto elsewhere = oracle::snapshot(other);
    c.expect(elsewhere.size() == before.size(), "rerun in a fresh directory writes the same file set");
    for (const auto& [name, bytes] : before) {
        auto it = elsewhere.find(name);
        if (it == elsewhere.end()) {
            c.expect(false, "missing " + name);
            continue;
        }
        std::string theirs = it->second;
        if (name == artifacts::kConfig) {
            const auto pos = theirs.find(other.string());
            if (pos != std::string::npos) theirs.replace(pos, other.string().size(), g_run.dir.string());
        }
        c.expect(bytes == theirs, "bytes differ: " + name);
    }
}

}  // namespace

int main() {
    spdlog::set_level(spdlog::level::warn);
    criterion("Math-op suite: softmax, BvSB, argmax ties, cosine schedule", 5.0, math_ops);
    criterion("Resampler suite: constants, identity, ramp, partition of unity", 0.0, resampler);
    criterion("Fusion/tiling oracle equivalence", 0.0, fusion_tiling);
    criterion("PCA suite: orthonormality, rank-1 line, projection", 0.0, pca_suite);
    criterion("EM suite: closed form, monotone log-likelihood, two-cluster recovery", 10.0, em_suite);
    criterion("Soft-label suite: normalisation, midpoint, x=0, outlier fallback", 0.0, soft_label_suite);
    criterion("Gradient check: three-term objective vs central differences at f64", 30.0, gradient_check);
    criterion("Metrics suite: OA/AA/kappa cases and scaling invariance", 0.0, metrics_suite);
    criterion("Sampler statistics: uniform multinomial bounds, single winner", 0.0, sampler_suite);
    criterion("End-to-end synthetic: pseudo OA, refinement gain, ablation order, runtime", 0.0, end_to_end);
    criterion("Format/determinism: PTF round trip, pipeline rerun byte-identical", 0.0, format_determinism);
    fmt::print("{} criteria failed\n", g_failed);
    return g_failed == 0 ? 0 : 1;
}
