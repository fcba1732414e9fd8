#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "special/mixture.hpp"

using namespace special;

namespace {

MatrixXd gaussian_rows(Eigen::Index n, Eigen::Index d, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, scale);
    MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) x(i, j) = g(rng);
    return x;
}

Gmm single(double mu, double var) {
    return Gmm(VectorXd::Ones(1), {VectorXd::Constant(1, mu)}, {MatrixXd::Constant(1, 1, var)});
}

}  // namespace

TEST_CASE("pca: rank-one line") {
    MatrixXd x(50, 2);
    for (int i = 0; i < 50; ++i) x(i, 0) = x(i, 1) = 0.1 * i - 2.0;
    const auto pca = fit_pca(x, 2);
    CHECK(std::fabs(std::fabs(pca.components(0, 0)) - 1.0 / std::sqrt(2.0)) <= 1e-8);
    CHECK(std::fabs(std::fabs(pca.components(0, 1)) - 1.0 / std::sqrt(2.0)) <= 1e-8);
    CHECK(std::fabs(pca.eigenvalues(1)) <= 1e-8);
}

TEST_CASE("pca: orthonormal rows, sorted spectrum, sample covariance") {
    const MatrixXd x = gaussian_rows(4000, 5, 1) * Eigen::Vector<double, 5>(1, 2, 0.5, 3, 1).asDiagonal();
    const auto pca = fit_pca(x, 5);
    const MatrixXd gram = pca.components * pca.components.transpose();
    CHECK((gram - MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() <= 1e-6);
    for (int i = 1; i < 5; ++i) CHECK(pca.eigenvalues(i) <= pca.eigenvalues(i - 1));

    // Independent spectrum: power iteration with deflation on the sample covariance.
    const VectorXd mean = x.colwise().mean();
    MatrixXd cov = MatrixXd::Zero(5, 5);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const VectorXd d = x.row(i).transpose() - mean;
        cov += d * d.transpose();
    }
    cov /= static_cast<double>(x.rows());
    CHECK(pca.eigenvalues.sum() == doctest::Approx(cov.trace()).epsilon(1e-3));
    VectorXd v = VectorXd::Ones(5);
    for (int it = 0; it < 500; ++it) v = (cov * v).normalized();
    const double top = v.dot(cov * v);
    CHECK(pca.eigenvalues(0) == doctest::Approx(top).epsilon(1e-3));
}

TEST_CASE("pca: identity-covariance data has unit eigenvalues") {
    const auto pca = fit_pca(gaussian_rows(20000, 4, 2), 4);
    for (int i = 0; i < 4; ++i) CHECK(std::fabs(pca.eigenvalues(i) - 1.0) < 0.05);
}

TEST_CASE("pca: full basis is an isometry and projections are centred") {
    const MatrixXd x = gaussian_rows(200, 6, 3, 2.0);
    const auto pca = fit_pca(x, 6);
    const MatrixXd z = project_rows(pca, x);
    for (int i = 0; i < 20; ++i)
        for (int j = i + 1; j < 20; ++j)
            CHECK(std::fabs((z.row(i) - z.row(j)).norm() - (x.row(i) - x.row(j)).norm()) <= 1e-5);
    const auto reduced = fit_pca(x, 3);
    const MatrixXd zr = project_rows(reduced, x);
    CHECK(zr.cols() == 3);
    for (int c = 0; c < 3; ++c) CHECK(std::fabs(zr.col(c).mean()) <= 1e-6);
}

TEST_CASE("projection of the mean, mean plus a component, random vectors") {
    const MatrixXd x = gaussian_rows(300, 5, 4);
    const auto pca = fit_pca(x, 3);
    CHECK(project(pca, pca.mean).cwiseAbs().maxCoeff() <= 1e-12);
    const VectorXd e = project(pca, pca.mean + pca.components.row(0).transpose());
    CHECK(std::fabs(e(0) - 1.0) <= 1e-9);
    CHECK(std::fabs(e(1)) <= 1e-9);
    CHECK(std::fabs(e(2)) <= 1e-9);

    const VectorXd r = gaussian_rows(1, 5, 5).row(0).transpose();
    const VectorXd got = project(pca, r);
    for (int i = 0; i < 3; ++i) {
        double dot = 0.0;
        for (int j = 0; j < 5; ++j) dot += pca.components(i, j) * (r(j) - pca.mean(j));
        CHECK(std::fabs(got(i) - dot) <= 1e-12);
    }
    CHECK_THROWS(fit_pca(x, 0));
    CHECK_THROWS(fit_pca(x, 6));
}

TEST_CASE("gmm density matches the closed form") {
    const Gmm g = single(1.0, 4.0);
    for (double x : {-3.0, 0.0, 1.0, 2.5})
        CHECK(std::exp(g.log_density(VectorXd::Constant(1, x))) == doctest::Approx(oracle::gauss1d(x, 1.0, 4.0)));
    CHECK(g.mahalanobis_sq(0, VectorXd::Constant(1, 3.0)) == doctest::Approx(1.0));
    const Gmm scaled(VectorXd::Constant(2, 3.0), {VectorXd::Zero(1), VectorXd::Ones(1)},
                     {MatrixXd::Identity(1, 1), MatrixXd::Identity(1, 1)});
    CHECK(std::fabs(scaled.weights().sum() - 1.0) <= 1e-12);
    CHECK_THROWS(Gmm(VectorXd::Zero(1), {VectorXd::Zero(1)}, {MatrixXd::Identity(1, 1)}));
    CHECK_THROWS(Gmm(VectorXd::Ones(1), {VectorXd::Zero(1)}, {-MatrixXd::Identity(1, 1)}));
}

TEST_CASE("log_sum_exp is stable") {
    const std::vector<double> v{-1000.0, -1000.0};
    CHECK(log_sum_exp(v) == doctest::Approx(-1000.0 + std::log(2.0)));
    const std::vector<double> w{1.0, 2.0, 3.0};
    CHECK(log_sum_exp(w) == doctest::Approx(std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0))));
}

TEST_CASE("em: one component is the sample moments plus ridge") {
    const MatrixXd x = gaussian_rows(500, 3, 6) * 1.5;
    Rng rng(1);
    const EmOptions opts;
    const auto fit = fit_gmm_em(x, 1, rng, opts);
    const VectorXd mean = x.colwise().mean();
    MatrixXd cov = MatrixXd::Zero(3, 3);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const VectorXd d = x.row(i).transpose() - mean;
        cov += d * d.transpose();
    }
    cov /= static_cast<double>(x.rows());
    cov += opts.reg * MatrixXd::Identity(3, 3);
    CHECK((fit.model.means()[0] - mean).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((fit.model.covariances()[0] - cov).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("em: two separated clusters and duplicate samples") {
    std::mt19937_64 gen(7);
    std::normal_distribution<double> g(0.0, 1.0);
    MatrixXd x(2000, 1);
    for (int i = 0; i < 2000; ++i) x(i, 0) = (i < 1000 ? -5.0 : 5.0) + g(gen);
    Rng rng(2);
    const auto fit = fit_gmm_em(x, 2, rng);
    std::vector<double> mus{fit.model.means()[0](0), fit.model.means()[1](0)};
    std::sort(mus.begin(), mus.end());
    // Oracle: statistics of each side of the midpoint.
    double lo = 0.0, hi = 0.0;
    int nlo = 0, nhi = 0;
    for (int i = 0; i < 2000; ++i) (x(i, 0) < 0 ? (lo += x(i, 0), ++nlo) : (hi += x(i, 0), ++nhi));
    CHECK(std::fabs(mus[0] - lo / nlo) < 0.2);
    CHECK(std::fabs(mus[1] - hi / nhi) < 0.2);
    CHECK(std::fabs(mus[0] + 5.0) < 0.2);
    CHECK(std::fabs(mus[1] - 5.0) < 0.2);
    for (int m = 0; m < 2; ++m) CHECK(std::fabs(fit.model.weights()(m) - 0.5) < 0.05);
    for (std::size_t i = 1; i < fit.log_likelihood.size(); ++i)
        CHECK(fit.log_likelihood[i] >= fit.log_likelihood[i - 1] - 1e-9);

    const MatrixXd y = gaussian_rows(120, 2, 9);
    MatrixXd doubled(240, 2);
    // Each sample repeated in place keeps the seeding draws aligned.
    for (int i = 0; i < 120; ++i) doubled.row(2 * i) = doubled.row(2 * i + 1) = y.row(i);
    Rng a(3), b(3);
    const auto fa = fit_gmm_em(y, 2, a);
    const auto fb = fit_gmm_em(doubled, 2, b);
    for (int m = 0; m < 2; ++m) {
        bool matched = false;
        for (int n = 0; n < 2; ++n)
            matched |= (fa.model.means()[m] - fb.model.means()[n]).norm() <= 1e-6 &&
                       (fa.model.covariances()[m] - fb.model.covariances()[n]).norm() <= 1e-6;
        CHECK(matched);
    }
}

TEST_CASE("split: bimodal margins, ties, tiny classes") {
    std::mt19937_64 gen(8);
    std::normal_distribution<double> g(0.0, 0.03);
    std::vector<double> m;
    for (int i = 0; i < 400; ++i) m.push_back(std::clamp((i % 2 ? 0.9 : 0.1) + g(gen), 0.0, 1.0));
    Rng rng(4);
    const auto s = split_margins(m, rng);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < m.size(); ++i) wrong += s[i] != (m[i] > 0.5);
    CHECK(static_cast<double>(wrong) / m.size() <= 0.02);

    const auto flat = split_margins(std::vector<double>(50, 0.4), rng);
    CHECK(std::all_of(flat.begin(), flat.end(), [](bool b) { return b; }));
    const auto one = split_margins({0.2}, rng);
    CHECK(one == std::vector<bool>{true});
}

TEST_CASE("split_confidence partitions each class") {
    LabelMap pred(12, 12);
    ConfidenceMap conf(12, 12);
    std::mt19937_64 gen(10);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (std::size_t p = 0; p < pred.pixels(); ++p) {
        pred.data()[p] = p == 0 ? 2 : static_cast<std::uint16_t>(p % 2);
        conf.data()[p] = (p % 3 ? 0.85f : 0.1f) + 0.1f * u(gen);
    }
    Rng rng(5);
    const auto split = split_confidence(pred, conf, 4, rng);
    REQUIRE(split.confident.size() == 4);
    for (std::size_t k = 0; k < 4; ++k) {
        std::vector<std::size_t> all = split.confident[k];
        all.insert(all.end(), split.hard[k].begin(), split.hard[k].end());
        std::sort(all.begin(), all.end());
        CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
        std::vector<std::size_t> expect;
        for (std::size_t p = 0; p < pred.pixels(); ++p)
            if (pred.data()[p] == k) expect.push_back(p);
        CHECK(all == expect);
    }
    CHECK(split.confident[2] == std::vector<std::size_t>{0});
    CHECK(split.confident[3].empty());
    CHECK_FALSE(split.hard[0].empty());
}

TEST_CASE("class bank: quadrature, identical sets, recovered means, save/load") {
    // q = 1 bank over a 2-band cube.
    HsiCube cube{Image(20, 20, 2), {500, 600}};
    std::mt19937_64 gen(11);
    std::normal_distribution<float> g(0.0f, 1.0f);
    ConfidenceSplit split;
    split.confident.resize(2);
    split.hard.resize(2);
    for (std::size_t p = 0; p < cube.values.pixels(); ++p) {
        const bool second = p >= 200;
        cube.values.pixel(p)[0] = (second ? 4.0f : -4.0f) + g(gen);
        cube.values.pixel(p)[1] = (second ? -2.0f : 2.0f) + 0.5f * g(gen);
        split.confident[second ? 1 : 0].push_back(p);
    }
    const auto pca1 = fit_pca(all_spectra(cube.values), 1);
    Rng r1(6);
    const auto bank1 = fit_class_bank(cube, split, pca1, 2, r1);
    for (const auto& model : bank1.classes) {
        REQUIRE(model.has_value());
        double integral = 0.0;
        const double h = 0.01;
        for (double z = -40.0; z <= 40.0; z += h) integral += std::exp(model->log_density(VectorXd::Constant(1, z))) * h;
        CHECK(std::fabs(integral - 1.0) < 1e-3);
    }

    const auto pca2 = fit_pca(all_spectra(cube.values), 2);
    Rng r2(7);
    const auto bank2 = fit_class_bank(cube, split, pca2, 1, r2);
    for (std::size_t k = 0; k < 2; ++k) {
        const MatrixXd z = project_rows(pca2, gather_spectra(cube.values, split.confident[k]));
        const VectorXd sample_mean = z.colwise().mean();
        CHECK((bank2.classes[k]->means()[0] - sample_mean).norm() < 0.2);
    }
    // Generating means mapped through the projection.
    const VectorXd m0 = project(pca2, Eigen::Vector2d(-4.0, 2.0));
    CHECK((bank2.classes[0]->means()[0] - m0).norm() < 0.2);

    ConfidenceSplit same = split;
    same.confident[1] = same.confident[0];
    Rng r3(8);
    const auto twin = fit_class_bank(cube, same, pca2, 2, r3);
    CHECK(twin.classes[0]->means() == twin.classes[1]->means());
    CHECK(twin.classes[0]->covariances() == twin.classes[1]->covariances());

    const auto dir = oracle::fresh_dir("bank");
    bank2.save(dir);
    const auto back = ClassGmmBank::load(dir);
    CHECK(back.num_classes() == 2);
    CHECK(back.pca.components.isApprox(pca2.components, 1e-6));
    CHECK(back.classes[1]->means()[0].isApprox(bank2.classes[1]->means()[0], 1e-6));
}

TEST_CASE("soft labels: hand values, single class, outliers, translation") {
    ClassGmmBank bank;
    bank.pca.mean = VectorXd::Zero(1);
    bank.pca.components = MatrixXd::Identity(1, 1);
    bank.pca.eigenvalues = VectorXd::Ones(1);
    bank.classes = {single(0.0, 1.0), single(2.0, 1.0)};
    MatrixXd x(3, 1);
    x << 1.0, 0.0, 1e6;
    const MatrixXd y = soft_labels(bank, x);
    CHECK(y(0, 0) == doctest::Approx(0.5));
    const double a = oracle::gauss1d(0.0, 0.0, 1.0), b = oracle::gauss1d(0.0, 2.0, 1.0);
    CHECK(std::fabs(y(1, 0) - a / (a + b)) <= 1e-9);
    CHECK(std::fabs(y(1, 0) - 0.8808) <= 1e-3);
    CHECK(y(2, 0) == doctest::Approx(0.5));
    CHECK(y(2, 1) == doctest::Approx(0.5));

    ClassGmmBank one = bank;
    one.classes = {single(3.0, 2.0)};
    const MatrixXd y1 = soft_labels(one, x);
    for (int i = 0; i < 3; ++i) CHECK(y1(i, 0) == 1.0);

    ClassGmmBank gap = bank;
    gap.classes.push_back(std::nullopt);
    const MatrixXd yg = soft_labels(gap, x);
    for (int i = 0; i < 3; ++i) {
        CHECK(yg(i, 2) == 0.0);
        CHECK(std::fabs(yg.row(i).sum() - 1.0) <= 1e-12);
    }

    ClassGmmBank shifted = bank;
    shifted.classes = {single(7.5, 1.0), single(9.5, 1.0)};
    MatrixXd xs = x;
    xs.array() += 7.5;
    xs(2, 0) = 1e6;
    const MatrixXd ys = soft_labels(shifted, xs);
    for (int i = 0; i < 2; ++i)
        for (int k = 0; k < 2; ++k) CHECK(std::fabs(ys(i, k) - y(i, k)) <= 1e-9);
}
