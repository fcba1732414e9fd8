#include "special/mixture.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "special/ptf.hpp"

namespace special {

// PCA ----------------------------------------------------------------------

PcaModel fit_pca(const MatrixXd& samples, Eigen::Index q) {
    const Eigen::Index n = samples.rows();
    const Eigen::Index b = samples.cols();
    if (q < 1 || q > b) throw std::invalid_argument(fmt::format("pca: need 1 <= q ({}) <= B ({})", q, b));
    if (n < q + 1) throw std::invalid_argument(fmt::format("pca: {} samples, need at least {}", n, q + 1));

    PcaModel model;
    model.mean = samples.colwise().mean().transpose();
    const MatrixXd centered = samples.rowwise() - model.mean.transpose();
    const MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);

    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw std::runtime_error("pca: eigendecomposition failed");
    // Eigen sorts ascending.
    model.components.resize(q, b);
    model.eigenvalues.resize(q);
    for (Eigen::Index i = 0; i < q; ++i) {
        const Eigen::Index src = b - 1 - i;
        VectorXd v = eig.eigenvectors().col(src);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0) v = -v;
        model.components.row(i) = v.transpose();
        model.eigenvalues(i) = std::max(eig.eigenvalues()(src), 0.0);
    }
    return model;
}

VectorXd project(const PcaModel& pca, const VectorXd& x) {
    if (x.size() != pca.input_dims())
        throw std::invalid_argument(fmt::format("project: got {} dims, model has {}", x.size(), pca.input_dims()));
    return pca.components * (x - pca.mean);
}

MatrixXd project_rows(const PcaModel& pca, const MatrixXd& samples) {
    if (samples.cols() != pca.input_dims())
        throw std::invalid_argument(fmt::format("project: got {} dims, model has {}", samples.cols(), pca.input_dims()));
    return (samples.rowwise() - pca.mean.transpose()) * pca.components.transpose();
}

// Gmm ----------------------------------------------------------------------

Gmm::Gmm(VectorXd weights, std::vector<VectorXd> means, std::vector<MatrixXd> covariances)
    : weights_(std::move(weights)), means_(std::move(means)), covariances_(std::move(covariances)) {
    const auto m = weights_.size();
    if (m < 1 || static_cast<Eigen::Index>(means_.size()) != m ||
        static_cast<Eigen::Index>(covariances_.size()) != m)
        throw std::invalid_argument("gmm: inconsistent component counts");
    const Eigen::Index d = means_.front().size();
    for (Eigen::Index i = 0; i < m; ++i) {
        if (weights_(i) < 0.0) throw std::invalid_argument("gmm: negative weight");
        if (means_[i].size() != d || covariances_[i].rows() != d || covariances_[i].cols() != d)
            throw std::invalid_argument("gmm: inconsistent dimensions");
        Eigen::LLT<MatrixXd> llt(covariances_[i]);
        if (llt.info() != Eigen::Success) throw std::invalid_argument("gmm: covariance is not positive definite");
        MatrixXd l = llt.matrixL();
        const double log_det = 2.0 * l.diagonal().array().log().sum();
        log_norm_.push_back(-0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + log_det));
        chol_.push_back(std::move(l));
    }
    const double total = weights_.sum();
    if (!(std::abs(total - 1.0) <= 1e-9)) {
        if (!(total > 0.0)) throw std::invalid_argument("gmm: weights sum to zero");
        weights_ /= total;
    }
}

double Gmm::mahalanobis_sq(Eigen::Index m, const VectorXd& x) const {
    const VectorXd z = chol_[m].triangularView<Eigen::Lower>().solve(x - means_[m]);
    return z.squaredNorm();
}

double Gmm::component_log_density(Eigen::Index m, const VectorXd& x) const {
    return log_norm_[m] - 0.5 * mahalanobis_sq(m, x);
}

double log_sum_exp(std::span<const double> values) {
    double top = -std::numeric_limits<double>::infinity();
    for (double v : values) top = std::max(top, v);
    if (!std::isfinite(top)) return top;
    double acc = 0.0;
    for (double v : values) acc += std::exp(v - top);
    return top + std::log(acc);
}

double Gmm::log_density(const VectorXd& x) const {
    std::vector<double> terms(static_cast<std::size_t>(components()));
    for (Eigen::Index m = 0; m < components(); ++m)
        terms[m] = std::log(weights_(m)) + component_log_density(m, x);
    return log_sum_exp(terms);
}

// EM -----------------------------------------------------------------------

namespace {

// Index of the sample under cumulative weight u * total.
Eigen::Index pick_by_weight(const std::vector<double>& weights, double u) {
    std::vector<double> cum(weights.size());
    std::partial_sum(weights.begin(), weights.end(), cum.begin());
    const double target = u * cum.back();
    const auto it = std::upper_bound(cum.begin(), cum.end(), target);
    return static_cast<Eigen::Index>(std::min<std::size_t>(it - cum.begin(), weights.size() - 1));
}

std::vector<VectorXd> kmeanspp_centres(const MatrixXd& x, unsigned m, Rng& rng) {
    const Eigen::Index n = x.rows();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<VectorXd> centres;
    centres.push_back(x.row(std::min<Eigen::Index>(static_cast<Eigen::Index>(unit(rng) * n), n - 1)).transpose());
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    while (centres.size() < m) {
        for (Eigen::Index i = 0; i < n; ++i)
            d2[i] = std::min(d2[i], (x.row(i).transpose() - centres.back()).squaredNorm());
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        const double u = unit(rng);
        const Eigen::Index pick = total > 0.0
            ? pick_by_weight(d2, u)
            : std::min<Eigen::Index>(static_cast<Eigen::Index>(u * n), n - 1);
        centres.push_back(x.row(pick).transpose());
    }
    return centres;
}

MatrixXd covariance_mle(const MatrixXd& x) {
    const VectorXd mean = x.colwise().mean().transpose();
    const MatrixXd c = x.rowwise() - mean.transpose();
    return (c.transpose() * c) / static_cast<double>(x.rows());
}

MatrixXd ridge(MatrixXd cov, double reg) {
    cov = 0.5 * (cov + cov.transpose());
    cov.diagonal().array() += reg;
    return cov;
}

// Responsibilities (n x m) and mean log-likelihood for the current model.
double e_step(const MatrixXd& x, const Gmm& gmm, MatrixXd& resp) {
    const Eigen::Index n = x.rows();
    const Eigen::Index m = gmm.components();
    resp.resize(n, m);
    std::vector<double> terms(static_cast<std::size_t>(m));
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const VectorXd xi = x.row(i).transpose();
        for (Eigen::Index j = 0; j < m; ++j)
            terms[j] = std::log(gmm.weights()(j)) + gmm.component_log_density(j, xi);
        const double lse = log_sum_exp(terms);
        for (Eigen::Index j = 0; j < m; ++j) resp(i, j) = std::exp(terms[j] - lse);
        total += lse;
    }
    return total / static_cast<double>(n);
}

}  // namespace

GmmFit fit_gmm_em(const MatrixXd& samples, unsigned components, Rng& rng, const EmOptions& options) {
    const Eigen::Index n = samples.rows();
    const Eigen::Index d = samples.cols();
    if (components < 1) throw std::invalid_argument("em: need at least one component");
    if (n < static_cast<Eigen::Index>(components))
        throw std::invalid_argument(fmt::format("em: {} samples for {} components", n, components));
    if (d < 1) throw std::invalid_argument("em: zero-dimensional samples");

    const MatrixXd global_cov = ridge(covariance_mle(samples), options.reg);
    auto centres = kmeanspp_centres(samples, components, rng);
    unsigned m = components;
    Gmm gmm(VectorXd::Constant(m, 1.0 / m), centres, std::vector<MatrixXd>(m, global_cov));

    GmmFit fit{gmm, {}, 0, 0, false};
    MatrixXd resp;
    fit.log_likelihood.push_back(e_step(samples, fit.model, resp));
    std::vector<unsigned> reseeded(m, 0);

    // Re-seed components left without responsibility; drop them on recurrence.
    const double empty_mass = 1e-10 * static_cast<double>(n);

    while (fit.iterations < options.max_iter) {
        ++fit.iterations;
        VectorXd mass = resp.colwise().sum().transpose();

        bool restarted = false;
        for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(m); ++j) {
            if (mass(j) > empty_mass) continue;
            if (reseeded[j] > 0 || m == 1) {
                spdlog::warn("em: component {} emptied again; reducing to {} components", j, m - 1);
                std::vector<VectorXd> means;
                std::vector<MatrixXd> covs;
                std::vector<double> w;
                std::vector<unsigned> flags;
                for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(m); ++k) {
                    if (k == j) continue;
                    means.push_back(fit.model.means()[k]);
                    covs.push_back(fit.model.covariances()[k]);
                    w.push_back(fit.model.weights()(k));
                    flags.push_back(reseeded[k]);
                }
                --m;
                fit.model = Gmm(Eigen::Map<VectorXd>(w.data(), m), means, covs);
                reseeded = flags;
            } else {
                // Farthest sample: the largest minimum Mahalanobis distance to
                // the other components.
                Eigen::Index far = 0;
                double best = -1.0;
                for (Eigen::Index i = 0; i < n; ++i) {
                    const VectorXd xi = samples.row(i).transpose();
                    double nearest = std::numeric_limits<double>::infinity();
                    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(m); ++k) {
                        if (k != j) nearest = std::min(nearest, fit.model.mahalanobis_sq(k, xi));
                    }
                    if (nearest > best) {
                        best = nearest;
                        far = i;
                    }
                }
                auto means = fit.model.means();
                auto covs = fit.model.covariances();
                VectorXd w = VectorXd::Constant(m, 1.0 / m);
                means[j] = samples.row(far).transpose();
                covs[j] = global_cov;
                fit.model = Gmm(w, means, covs);
                reseeded[j] = 1;
            }
            ++fit.reseeds;
            restarted = true;
            break;
        }
        if (restarted) {
            fit.log_likelihood.assign(1, e_step(samples, fit.model, resp));
            continue;
        }

        VectorXd weights = mass / static_cast<double>(n);
        Gmm previous = fit.model;
        std::vector<VectorXd> means(m);
        std::vector<MatrixXd> covs(m);
        for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(m); ++j) {
            means[j] = (samples.transpose() * resp.col(j)) / mass(j);
            const MatrixXd c = samples.rowwise() - means[j].transpose();
            covs[j] = ridge((c.transpose() * resp.col(j).asDiagonal() * c) / mass(j), options.reg);
        }
        fit.model = Gmm(weights, std::move(means), std::move(covs));

        const double ll = e_step(samples, fit.model, resp);
        const double gain = ll - fit.log_likelihood.back();
        if (gain < 0.0) {
            // The ridge can cost more likelihood than the step gains near a
            // fixed point; keep the better parameters and stop there.
            fit.model = std::move(previous);
            fit.converged = true;
            break;
        }
        fit.log_likelihood.push_back(ll);
        if (gain < options.tol) {
            fit.converged = true;
            break;
        }
    }
    return fit;
}

// Confidence split ---------------------------------------------------------

std::vector<bool> split_margins(const std::vector<double>& margins, Rng& rng) {
    std::vector<bool> confident(margins.size(), true);
    if (margins.size() < kMinSplitCount) return confident;

    MatrixXd x(static_cast<Eigen::Index>(margins.size()), 1);
    for (std::size_t i = 0; i < margins.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = margins[i];
    const GmmFit fit = fit_gmm_em(x, 2, rng, EmOptions{200, 1e-8, 1e-6});
    if (fit.model.components() < 2) return confident;

    const double mu0 = fit.model.means()[0](0);
    const double mu1 = fit.model.means()[1](0);
    if (std::abs(mu0 - mu1) < kMinSplitSeparation) return confident;
    const Eigen::Index high = mu1 > mu0 ? 1 : 0;

    std::array<double, 2> terms{};
    for (std::size_t i = 0; i < margins.size(); ++i) {
        VectorXd xi(1);
        xi(0) = margins[i];
        for (Eigen::Index j = 0; j < 2; ++j)
            terms[j] = std::log(fit.model.weights()(j)) + fit.model.component_log_density(j, xi);
        const double posterior = std::exp(terms[high] - log_sum_exp(terms));
        confident[i] = posterior > 0.5;
    }
    return confident;
}

ConfidenceSplit split_confidence(const LabelMap& predicted, const ConfidenceMap& margins,
                                 std::size_t num_classes, Rng& rng) {
    if (predicted.height() != margins.height() || predicted.width() != margins.width())
        throw std::invalid_argument("split_confidence: label and margin maps differ in size");
    std::vector<std::vector<std::size_t>> members(num_classes);
    for (std::size_t p = 0; p < predicted.pixels(); ++p) {
        const auto label = predicted.data()[p];
        if (label == kIgnoreLabel) continue;
        if (label >= num_classes) throw std::invalid_argument("split_confidence: label out of range");
        members[label].push_back(p);
    }
    ConfidenceSplit split{std::vector<std::vector<std::size_t>>(num_classes),
                          std::vector<std::vector<std::size_t>>(num_classes)};
    for (std::size_t k = 0; k < num_classes; ++k) {
        std::vector<double> values;
        values.reserve(members[k].size());
        for (auto p : members[k]) {
            const double v = margins.data()[p];
            if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("split_confidence: margin outside [0, 1]");
            values.push_back(v);
        }
        const auto confident = split_margins(values, rng);
        for (std::size_t i = 0; i < members[k].size(); ++i)
            (confident[i] ? split.confident[k] : split.hard[k]).push_back(members[k][i]);
    }
    return split;
}

// Class bank ---------------------------------------------------------------

std::size_t ClassGmmBank::fitted_classes() const {
    return static_cast<std::size_t>(
        std::count_if(classes.begin(), classes.end(), [](const auto& g) { return g.has_value(); }));
}

MatrixXd gather_spectra(const Image& cube, const std::vector<std::size_t>& pixels) {
    MatrixXd out(static_cast<Eigen::Index>(pixels.size()), static_cast<Eigen::Index>(cube.channels()));
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const auto px = cube.pixel(pixels[i]);
        for (std::size_t b = 0; b < px.size(); ++b)
            out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b)) = px[b];
    }
    return out;
}

MatrixXd all_spectra(const Image& cube) {
    std::vector<std::size_t> all(cube.pixels());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return gather_spectra(cube, all);
}

ClassGmmBank fit_class_bank(const HsiCube& normalized, const ConfidenceSplit& split, const PcaModel& pca,
                            unsigned components, Rng& rng, const EmOptions& options) {
    if (components < 1) throw std::invalid_argument("class bank: need at least one component");
    ClassGmmBank bank{pca, {}};
    const auto q = static_cast<std::size_t>(pca.output_dims());
    // Every class starts from the same sub-seed so identical inputs give identical fits.
    const auto class_seed = rng();
    for (std::size_t k = 0; k < split.confident.size(); ++k) {
        const auto& pixels = split.confident[k];
        if (pixels.empty()) {
            spdlog::warn("class bank: class {} has no confident pixels; excluded", k);
            bank.classes.emplace_back(std::nullopt);
            continue;
        }
        const MatrixXd reduced = project_rows(pca, gather_spectra(normalized.values, pixels));
        const unsigned m = pixels.size() < components * (q + 1) ? 1u : components;
        Rng class_rng(class_seed);
        bank.classes.emplace_back(fit_gmm_em(reduced, m, class_rng, options).model);
    }
    return bank;
}

MatrixXd soft_labels(const ClassGmmBank& bank, const MatrixXd& reduced) {
    const std::size_t k = bank.num_classes();
    if (bank.fitted_classes() == 0) throw std::invalid_argument("soft_labels: bank has no fitted classes");
    MatrixXd out = MatrixXd::Zero(reduced.rows(), static_cast<Eigen::Index>(k));
    std::vector<double> logd;
    std::vector<std::size_t> fitted;
    for (std::size_t c = 0; c < k; ++c) {
        if (bank.classes[c]) {
            if (bank.classes[c]->dims() != reduced.cols())
                throw std::invalid_argument("soft_labels: dimension mismatch");
            fitted.push_back(c);
        }
    }
    logd.resize(fitted.size());
    for (Eigen::Index i = 0; i < reduced.rows(); ++i) {
        const VectorXd x = reduced.row(i).transpose();
        for (std::size_t j = 0; j < fitted.size(); ++j) logd[j] = bank.classes[fitted[j]]->log_density(x);
        const double top = *std::max_element(logd.begin(), logd.end());
        if (!(top >= kLogDensityFloor)) {
            for (auto c : fitted) out(i, static_cast<Eigen::Index>(c)) = 1.0 / static_cast<double>(fitted.size());
            continue;
        }
        const double lse = log_sum_exp(logd);
        for (std::size_t j = 0; j < fitted.size(); ++j)
            out(i, static_cast<Eigen::Index>(fitted[j])) = std::exp(logd[j] - lse);
    }
    return out;
}

// Persistence --------------------------------------------------------------

namespace {

ptf::Tensor tensor_of(std::vector<std::uint64_t> dims, const double* data, std::size_t n) {
    std::vector<float> v(data, data + n);
    return ptf::Tensor{std::move(dims), std::move(v)};
}

std::vector<double> doubles(const ptf::Tensor& t) {
    const auto& f = t.f32();
    return {f.begin(), f.end()};
}

}  // namespace

void ClassGmmBank::save(const std::filesystem::path& dir) const {
    namespace pt = boost::property_tree;
    std::filesystem::create_directories(dir);
    const auto b = static_cast<std::uint64_t>(pca.input_dims());
    const auto q = static_cast<std::uint64_t>(pca.output_dims());
    ptf::write_file(tensor_of({b}, pca.mean.data(), b), dir / "pca_mean.ptf");
    const MatrixXd rows = pca.components;  // column-major copy
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = rows;
    ptf::write_file(tensor_of({q, b}, rm.data(), q * b), dir / "pca_components.ptf");
    ptf::write_file(tensor_of({q}, pca.eigenvalues.data(), q), dir / "pca_eigenvalues.ptf");

    pt::ptree manifest;
    manifest.put("bank.classes", num_classes());
    manifest.put("bank.input_dims", b);
    manifest.put("bank.pca_dims", q);
    for (std::size_t k = 0; k < classes.size(); ++k) {
        const std::string sec = fmt::format("class{}", k);
        if (!classes[k]) {
            manifest.put(sec + ".fitted", false);
            continue;
        }
        const Gmm& g = *classes[k];
        const auto m = static_cast<std::uint64_t>(g.components());
        manifest.put(sec + ".fitted", true);
        manifest.put(sec + ".components", m);
        ptf::write_file(tensor_of({m}, g.weights().data(), m), dir / fmt::format("class{}_weights.ptf", k));
        std::vector<double> means;
        std::vector<double> covs;
        for (Eigen::Index j = 0; j < g.components(); ++j) {
            means.insert(means.end(), g.means()[j].data(), g.means()[j].data() + q);
            const auto& c = g.covariances()[j];
            for (Eigen::Index r = 0; r < c.rows(); ++r)
                for (Eigen::Index s = 0; s < c.cols(); ++s) covs.push_back(c(r, s));
        }
        ptf::write_file(tensor_of({m, q}, means.data(), means.size()), dir / fmt::format("class{}_means.ptf", k));
        ptf::write_file(tensor_of({m, q, q}, covs.data(), covs.size()), dir / fmt::format("class{}_covariances.ptf", k));
    }
    pt::write_ini((dir / "manifest.ini").string(), manifest);
}

ClassGmmBank ClassGmmBank::load(const std::filesystem::path& dir) {
    namespace pt = boost::property_tree;
    pt::ptree manifest;
    pt::read_ini((dir / "manifest.ini").string(), manifest);
    const auto k = manifest.get<std::size_t>("bank.classes");
    const auto b = manifest.get<Eigen::Index>("bank.input_dims");
    const auto q = manifest.get<Eigen::Index>("bank.pca_dims");

    ClassGmmBank bank;
    const auto mean = doubles(ptf::read_file(dir / "pca_mean.ptf"));
    const auto comps = doubles(ptf::read_file(dir / "pca_components.ptf"));
    const auto eig = doubles(ptf::read_file(dir / "pca_eigenvalues.ptf"));
    bank.pca.mean = Eigen::Map<const VectorXd>(mean.data(), b);
    bank.pca.components =
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(comps.data(), q, b);
    bank.pca.eigenvalues = Eigen::Map<const VectorXd>(eig.data(), q);

    for (std::size_t c = 0; c < k; ++c) {
        const std::string sec = fmt::format("class{}", c);
        if (!manifest.get<bool>(sec + ".fitted")) {
            bank.classes.emplace_back(std::nullopt);
            continue;
        }
        const auto m = manifest.get<Eigen::Index>(sec + ".components");
        const auto w = doubles(ptf::read_file(dir / fmt::format("class{}_weights.ptf", c)));
        const auto mu = doubles(ptf::read_file(dir / fmt::format("class{}_means.ptf", c)));
        const auto cv = doubles(ptf::read_file(dir / fmt::format("class{}_covariances.ptf", c)));
        std::vector<VectorXd> means;
        std::vector<MatrixXd> covs;
        for (Eigen::Index j = 0; j < m; ++j) {
            means.emplace_back(Eigen::Map<const VectorXd>(mu.data() + j * q, q));
            MatrixXd s = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                cv.data() + j * q * q, q, q);
            covs.push_back(0.5 * (s + s.transpose()));
        }
        bank.classes.emplace_back(Gmm(Eigen::Map<const VectorXd>(w.data(), m), means, covs));
    }
    return bank;
}

}  // namespace special
