#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "special/grid.hpp"
#include "special/hsi.hpp"
#include "special/rng.hpp"

namespace special {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Principal subspace: rows of `components` are orthonormal, eigenvalues are
// sorted in non-increasing order.
struct PcaModel {
    VectorXd mean;
    MatrixXd components;  // q x B
    VectorXd eigenvalues;

    Eigen::Index input_dims() const { return mean.size(); }
    Eigen::Index output_dims() const { return components.rows(); }
};

// `samples` holds one observation per row.
PcaModel fit_pca(const MatrixXd& samples, Eigen::Index q);
VectorXd project(const PcaModel& pca, const VectorXd& x);
MatrixXd project_rows(const PcaModel& pca, const MatrixXd& samples);

// Full-covariance Gaussian mixture with cached Cholesky factors.
class Gmm {
public:
    Gmm(VectorXd weights, std::vector<VectorXd> means, std::vector<MatrixXd> covariances);

    Eigen::Index components() const { return weights_.size(); }
    Eigen::Index dims() const { return means_.empty() ? 0 : means_.front().size(); }
    const VectorXd& weights() const { return weights_; }
    const std::vector<VectorXd>& means() const { return means_; }
    const std::vector<MatrixXd>& covariances() const { return covariances_; }

    // log N(x | mu_m, Sigma_m), without the mixture weight.
    double component_log_density(Eigen::Index m, const VectorXd& x) const;
    double log_density(const VectorXd& x) const;
    double mahalanobis_sq(Eigen::Index m, const VectorXd& x) const;

private:
    VectorXd weights_;
    std::vector<VectorXd> means_;
    std::vector<MatrixXd> covariances_;
    std::vector<MatrixXd> chol_;  // lower factors
    std::vector<double> log_norm_;
};

struct EmOptions {
    unsigned max_iter = 200;
    double tol = 1e-6;   // on the mean per-sample log-likelihood
    double reg = 1e-4;   // ridge added to every covariance
};

struct GmmFit {
    Gmm model;
    // Mean per-sample log-likelihood after each E-step since the last re-seed.
    std::vector<double> log_likelihood;
    unsigned iterations = 0;
    unsigned reseeds = 0;
    bool converged = false;
};

double log_sum_exp(std::span<const double> values);

// EM with k-means++ seeding. Rows of `samples` are observations.
GmmFit fit_gmm_em(const MatrixXd& samples, unsigned components, Rng& rng, const EmOptions& options = {});

// Per-class confident / hard pixel indices (flat y * W + x).
struct ConfidenceSplit {
    std::vector<std::vector<std::size_t>> confident;
    std::vector<std::vector<std::size_t>> hard;
};

inline constexpr std::size_t kMinSplitCount = 8;
inline constexpr double kMinSplitSeparation = 0.02;

// Two-component 1-D mixture over margin values; true marks members of the
// higher-mean component (posterior > 0.5). Falls back to all-true for fewer
// than kMinSplitCount values or components closer than kMinSplitSeparation.
std::vector<bool> split_margins(const std::vector<double>& margins, Rng& rng);

ConfidenceSplit split_confidence(const LabelMap& predicted, const ConfidenceMap& margins,
                                 std::size_t num_classes, Rng& rng);

// One optional mixture per class over a shared PCA space; classes with no
// confident pixels are left empty.
struct ClassGmmBank {
    PcaModel pca;
    std::vector<std::optional<Gmm>> classes;

    std::size_t num_classes() const { return classes.size(); }
    std::size_t fitted_classes() const;

    void save(const std::filesystem::path& dir) const;
    static ClassGmmBank load(const std::filesystem::path& dir);
};

// Spectra of the listed pixels of a [H][W][B] cube as rows.
MatrixXd gather_spectra(const Image& cube, const std::vector<std::size_t>& pixels);
MatrixXd all_spectra(const Image& cube);

ClassGmmBank fit_class_bank(const HsiCube& normalized, const ConfidenceSplit& split, const PcaModel& pca,
                            unsigned components, Rng& rng, const EmOptions& options = {});

inline constexpr double kLogDensityFloor = -700.0;

// Normalised class-conditional densities; one row per sample, one column per
// class. Unfitted classes get 0.
MatrixXd soft_labels(const ClassGmmBank& bank, const MatrixXd& reduced);

}  // namespace special
