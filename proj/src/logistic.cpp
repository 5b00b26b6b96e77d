#include <cmath>
#include <iostream>
#include <stdexcept>

#include "triage/detectors.hpp"

namespace triage {

namespace {

double softplus(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

double loss_only(std::span<const std::vector<double>> rows, std::span<const int> labels,
                 std::span<const double> w, double b, double l2) {
    double total = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double z = dot(rows[i], w) + b;
        total += softplus(z) - labels[i] * z;
    }
    return total / static_cast<double>(rows.size()) + 0.5 * l2 * dot(w, w);
}

}  // namespace

std::vector<double> Standardizer::transform(std::span<const double> x) const {
    if (x.size() != means.size()) {
        throw std::invalid_argument("standardizer: dimension mismatch");
    }
    std::vector<double> out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
        out[j] = (x[j] - means[j]) / stds[j];
    }
    return out;
}

Standardizer fit_standardizer(const AlertStream& stream) {
    if (stream.empty()) {
        throw std::invalid_argument("fit_standardizer: empty stream");
    }
    const auto d = stream.dim();
    const auto n = static_cast<double>(stream.size());
    Standardizer s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    for (const auto& a : stream.alerts()) {
        for (std::size_t j = 0; j < d; ++j) {
            s.means[j] += a.features[j];
        }
    }
    for (auto& m : s.means) {
        m /= n;
    }
    for (const auto& a : stream.alerts()) {
        for (std::size_t j = 0; j < d; ++j) {
            const double c = a.features[j] - s.means[j];
            s.stds[j] += c * c;
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        const double sd = std::sqrt(s.stds[j] / n);
        // relative test so tiny rounding noise on a constant column still counts as constant
        s.stds[j] = sd <= 1e-12 * std::max(1.0, std::abs(s.means[j])) ? 1.0 : sd;
    }
    return s;
}

double logistic_loss_and_gradient(std::span<const std::vector<double>> rows, std::span<const int> labels,
                                  std::span<const double> weights, double bias, double l2_lambda,
                                  std::vector<double>& grad_w, double& grad_b) {
    const auto d = weights.size();
    const auto n = static_cast<double>(rows.size());
    grad_w.assign(d, 0.0);
    grad_b = 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& x = rows[i];
        const double z = dot(x, weights) + bias;
        total += softplus(z) - labels[i] * z;
        const double r = sigmoid(z) - labels[i];
        for (std::size_t j = 0; j < d; ++j) {
            grad_w[j] += r * x[j];
        }
        grad_b += r;
    }
    for (std::size_t j = 0; j < d; ++j) {
        grad_w[j] = grad_w[j] / n + l2_lambda * weights[j];
    }
    grad_b /= n;
    return total / n + 0.5 * l2_lambda * dot(weights, weights);
}

double LogisticModel::predict_one(std::span<const double> x) const {
    const auto z = standardizer.transform(x);
    return sigmoid(dot(z, weights) + bias);
}

LogRegFit train_logreg(const AlertStream& stream, const LogRegConfig& config) {
    if (stream.empty()) {
        throw std::invalid_argument("train_logreg: empty stream");
    }
    const auto pos = stream.positives();
    if (pos == 0 || pos == stream.size()) {
        throw std::invalid_argument("train_logreg: training data contains a single class");
    }
    if (config.l2_lambda < 0.0 || config.max_iters < 1 || config.tol < 0.0) {
        throw std::invalid_argument("train_logreg: invalid configuration");
    }

    LogRegFit fit;
    auto& model = fit.model;
    model.config = config;
    model.feature_names = stream.feature_names();
    model.standardizer = fit_standardizer(stream);
    model.weights.assign(stream.dim(), 0.0);

    std::vector<std::vector<double>> rows;
    std::vector<int> labels;
    rows.reserve(stream.size());
    labels.reserve(stream.size());
    for (const auto& a : stream.alerts()) {
        rows.push_back(model.standardizer.transform(a.features));
        labels.push_back(a.label);
    }

    // Gradient descent with Armijo backtracking; the trial step doubles after
    // every accepted step so the rate adapts upward as well as downward.
    constexpr double armijo = 1e-4;
    std::vector<double> gw;
    double gb = 0.0;
    double step = 1.0;
    double loss = logistic_loss_and_gradient(rows, labels, model.weights, model.bias, config.l2_lambda, gw, gb);
    auto& report = fit.report;
    report.loss_history.push_back(loss);

    std::vector<double> trial_w(model.weights.size());
    for (int it = 0; it < config.max_iters; ++it) {
        const double g2 = dot(gw, gw) + gb * gb;
        report.final_grad_norm = std::sqrt(g2);
        if (report.final_grad_norm <= config.tol) {
            report.converged = true;
            break;
        }
        double t = step;
        double trial_loss = 0.0;
        double trial_b = 0.0;
        bool accepted = false;
        while (t > 1e-18) {
            for (std::size_t j = 0; j < trial_w.size(); ++j) {
                trial_w[j] = model.weights[j] - t * gw[j];
            }
            trial_b = model.bias - t * gb;
            trial_loss = loss_only(rows, labels, trial_w, trial_b, config.l2_lambda);
            if (trial_loss <= loss - armijo * t * g2) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            break;  // no representable descent step left
        }
        model.weights = trial_w;
        model.bias = trial_b;
        step = 2.0 * t;
        loss = logistic_loss_and_gradient(rows, labels, model.weights, model.bias, config.l2_lambda, gw, gb);
        report.loss_history.push_back(loss);
        report.iterations = it + 1;
    }
    if (!report.converged) {
        report.final_grad_norm = std::sqrt(dot(gw, gw) + gb * gb);
        report.converged = report.final_grad_norm <= config.tol;
    }
    if (!report.converged) {
        std::cerr << "train_logreg: not converged after " << report.iterations
                  << " iterations, gradient norm " << report.final_grad_norm << "\n";
    }
    return fit;
}

}  // namespace triage
