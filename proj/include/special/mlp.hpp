#pragma once

// Per-pixel spectral classifier: affine -> ReLU stacks with a softmax head,
// plus the soft-target cross-entropy and Adam pieces used to train it.
// Templated on the scalar so gradient checks can run in double precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "special/rng.hpp"

namespace special {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Samples are columns throughout: inputs are B x n, scores/probs are K x n.
template <typename T>
class BasicMlp {
public:
    struct Cache {
        std::vector<Mat<T>> activations;  // a_0 = input, a_l = relu(z_l)
        std::vector<Mat<T>> pre;          // z_l for every layer
        Mat<T> probs;
    };

    struct Gradients {
        std::vector<Mat<T>> weights;
        std::vector<Vec<T>> biases;
    };

    BasicMlp() = default;

    // Zero-initialised network with the given layer widths [B, h1, ..., K].
    explicit BasicMlp(std::vector<std::size_t> widths) : widths_(std::move(widths)) {
        if (widths_.size() < 2) throw std::invalid_argument("mlp: need at least input and output widths");
        for (auto w : widths_) {
            if (w == 0) throw std::invalid_argument("mlp: zero layer width");
        }
        for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
            weights_.push_back(Mat<T>::Zero(static_cast<Eigen::Index>(widths_[l + 1]),
                                            static_cast<Eigen::Index>(widths_[l])));
            biases_.push_back(Vec<T>::Zero(static_cast<Eigen::Index>(widths_[l + 1])));
        }
    }

    // He-normal weights, zero biases.
    static BasicMlp initialized(std::vector<std::size_t> widths, Rng& rng) {
        BasicMlp mlp(std::move(widths));
        for (auto& w : mlp.weights_) {
            std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(w.cols())));
            for (Eigen::Index j = 0; j < w.cols(); ++j)
                for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<T>(dist(rng));
        }
        return mlp;
    }

    template <typename U>
    BasicMlp<U> cast() const {
        BasicMlp<U> out(widths_);
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            out.weights()[l] = weights_[l].template cast<U>();
            out.biases()[l] = biases_[l].template cast<U>();
        }
        return out;
    }

    const std::vector<std::size_t>& widths() const { return widths_; }
    std::size_t input_dims() const { return widths_.front(); }
    std::size_t num_classes() const { return widths_.back(); }
    std::size_t layers() const { return weights_.size(); }

    std::vector<Mat<T>>& weights() { return weights_; }
    const std::vector<Mat<T>>& weights() const { return weights_; }
    std::vector<Vec<T>>& biases() { return biases_; }
    const std::vector<Vec<T>>& biases() const { return biases_; }

    Cache forward(const Mat<T>& input) const {
        if (static_cast<std::size_t>(input.rows()) != input_dims())
            throw std::invalid_argument(fmt::format("mlp: input has {} features, expected {}", input.rows(), input_dims()));
        Cache cache;
        cache.activations.reserve(layers());
        cache.pre.reserve(layers());
        cache.activations.push_back(input);
        for (std::size_t l = 0; l < layers(); ++l) {
            Mat<T> z = weights_[l] * cache.activations.back();
            z.colwise() += biases_[l];
            if (l + 1 < layers()) cache.activations.push_back(z.cwiseMax(T(0)));
            cache.pre.push_back(std::move(z));
        }
        cache.probs = softmax_columns(cache.pre.back());
        return cache;
    }

    Mat<T> predict(const Mat<T>& input) const { return forward(input).probs; }

    // Backpropagates d(loss)/d(scores) (K x n) through the cached pass.
    Gradients backward(const Cache& cache, const Mat<T>& dscores) const {
        Gradients g;
        g.weights.resize(layers());
        g.biases.resize(layers());
        Mat<T> delta = dscores;
        for (std::size_t l = layers(); l-- > 0;) {
            g.weights[l] = delta * cache.activations[l].transpose();
            g.biases[l] = delta.rowwise().sum();
            if (l == 0) break;
            Mat<T> back = weights_[l].transpose() * delta;
            const Mat<T>& z = cache.pre[l - 1];
            delta = (z.array() > T(0)).select(back, Mat<T>::Zero(back.rows(), back.cols()));
        }
        return g;
    }

    static Mat<T> softmax_columns(const Mat<T>& scores) {
        Mat<T> out(scores.rows(), scores.cols());
        for (Eigen::Index j = 0; j < scores.cols(); ++j) {
            const T top = scores.col(j).maxCoeff();
            double total = 0.0;
            for (Eigen::Index i = 0; i < scores.rows(); ++i) {
                const double e = std::exp(static_cast<double>(scores(i, j) - top));
                out(i, j) = static_cast<T>(e);
                total += e;
            }
            for (Eigen::Index i = 0; i < scores.rows(); ++i)
                out(i, j) = static_cast<T>(static_cast<double>(out(i, j)) / total);
        }
        return out;
    }

private:
    std::vector<std::size_t> widths_;
    std::vector<Mat<T>> weights_;
    std::vector<Vec<T>> biases_;
};

using Mlp = BasicMlp<float>;

inline constexpr double kProbFloor = 1e-12;

template <typename T>
struct SoftCrossEntropy {
    double loss = 0.0;
    Mat<T> dscores;  // d(weight * loss) / d(scores)
};

// Mean over columns of -sum_k t_k ln p_k; the score gradient of that mean,
// scaled by `weight`, is weight * (p - t) / n.
template <typename T>
SoftCrossEntropy<T> cross_entropy_soft(const Mat<T>& probs, const Mat<T>& targets, double weight = 1.0) {
    if (probs.rows() != targets.rows() || probs.cols() != targets.cols())
        throw std::invalid_argument("cross_entropy: shape mismatch");
    SoftCrossEntropy<T> out;
    const Eigen::Index n = probs.cols();
    if (n == 0) {
        out.dscores = Mat<T>::Zero(probs.rows(), 0);
        return out;
    }
    double total = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        double sample = 0.0;
        for (Eigen::Index i = 0; i < probs.rows(); ++i) {
            const double t = static_cast<double>(targets(i, j));
            if (t != 0.0) sample -= t * std::log(std::max(static_cast<double>(probs(i, j)), kProbFloor));
        }
        total += sample;
    }
    out.loss = total / static_cast<double>(n);
    out.dscores = (probs - targets) * static_cast<T>(weight / static_cast<double>(n));
    return out;
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamMoments {
    std::vector<double> m;
    std::vector<double> v;
    long long step = 0;
};

// One bias-corrected Adam update of a flat parameter tensor.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamMoments<T>& state, double lr,
               const AdamConfig& cfg = {}) {
    if (params.size() != grads.size()) throw std::invalid_argument("adam: parameter/gradient size mismatch");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size()) throw std::invalid_argument("adam: state size mismatch");
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = static_cast<double>(grads[i]);
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        params[i] = static_cast<T>(static_cast<double>(params[i]) - lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
}

// Adam over every tensor of an MLP, one moment pair per tensor.
template <typename T>
class AdamOptimizer {
public:
    explicit AdamOptimizer(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(BasicMlp<T>& model, const typename BasicMlp<T>::Gradients& grads, double lr) {
        const std::size_t n = model.layers();
        if (weights_.empty()) {
            weights_.resize(n);
            biases_.resize(n);
        }
        for (std::size_t l = 0; l < n; ++l) {
            auto& w = model.weights()[l];
            auto& b = model.biases()[l];
            adam_step<T>({w.data(), static_cast<std::size_t>(w.size())},
                         {grads.weights[l].data(), static_cast<std::size_t>(grads.weights[l].size())},
                         weights_[l], lr, cfg_);
            adam_step<T>({b.data(), static_cast<std::size_t>(b.size())},
                         {grads.biases[l].data(), static_cast<std::size_t>(grads.biases[l].size())},
                         biases_[l], lr, cfg_);
        }
    }

private:
    AdamConfig cfg_;
    std::vector<AdamMoments<T>> weights_;
    std::vector<AdamMoments<T>> biases_;
};

// Cosine annealing from lr0 at t = 0 to eta_min at t = total.
inline double cosine_lr(double t, double total, double lr0, double eta_min) {
    constexpr double pi = 3.14159265358979323846;
    return eta_min + 0.5 * (lr0 - eta_min) * (1.0 + std::cos(pi * t / total));
}

// One supervised term of the training objective.
template <typename T>
struct LossTerm {
    Mat<T> inputs;   // B x n
    Mat<T> targets;  // K x n distributions
    double weight = 1.0;
};

template <typename T>
struct ObjectiveResult {
    std::vector<double> term_losses;  // unweighted, in term order
    double total = 0.0;               // sum of weight * loss
    typename BasicMlp<T>::Gradients grads;
};

// Weighted sum of soft cross-entropies over several batches, with gradients.
// Terms that are empty or carry zero weight are skipped entirely.
template <typename T>
ObjectiveResult<T> weighted_objective(const BasicMlp<T>& model, std::span<const LossTerm<T>> terms) {
    ObjectiveResult<T> result;
    result.term_losses.assign(terms.size(), 0.0);
    Eigen::Index columns = 0;
    for (const auto& t : terms) {
        if (t.weight != 0.0 && t.inputs.cols() > 0) columns += t.inputs.cols();
    }
    const auto b = static_cast<Eigen::Index>(model.input_dims());
    const auto k = static_cast<Eigen::Index>(model.num_classes());
    if (columns == 0) {
        result.grads.weights.clear();
        for (const auto& w : model.weights()) result.grads.weights.push_back(Mat<T>::Zero(w.rows(), w.cols()));
        for (const auto& v : model.biases()) result.grads.biases.push_back(Vec<T>::Zero(v.size()));
        return result;
    }

    Mat<T> inputs(b, columns);
    Eigen::Index at = 0;
    for (const auto& t : terms) {
        if (t.weight == 0.0 || t.inputs.cols() == 0) continue;
        inputs.middleCols(at, t.inputs.cols()) = t.inputs;
        at += t.inputs.cols();
    }
    const auto cache = model.forward(inputs);
    Mat<T> dscores(k, columns);
    at = 0;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        const auto& t = terms[i];
        if (t.weight == 0.0 || t.inputs.cols() == 0) continue;
        const auto n = t.inputs.cols();
        auto ce = cross_entropy_soft<T>(cache.probs.middleCols(at, n), t.targets, t.weight);
        result.term_losses[i] = ce.loss;
        result.total += t.weight * ce.loss;
        dscores.middleCols(at, n) = ce.dscores;
        at += n;
    }
    result.grads = model.backward(cache, dscores);
    return result;
}

}  // namespace special
