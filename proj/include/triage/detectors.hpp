#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "triage/alert.hpp"

namespace triage {

/// Per-feature z-scoring. Constant features get std = 1 so they map to 0.
struct Standardizer {
    std::vector<double> means;
    std::vector<double> stds;

    [[nodiscard]] std::vector<double> transform(std::span<const double> x) const;
};

[[nodiscard]] Standardizer fit_standardizer(const AlertStream& stream);

struct LogRegConfig {
    double l2_lambda = 1e-4;
    int max_iters = 5000;
    double tol = 1e-8;
    std::uint64_t seed = 0;  // recorded only; full-batch descent is seed-free
};

struct LogisticModel {
    std::vector<double> weights;  // on standardized features
    double bias = 0.0;
    Standardizer standardizer;
    LogRegConfig config;
    std::vector<std::string> feature_names;

    [[nodiscard]] double predict_one(std::span<const double> x) const;
};

/// Optimizer trace returned next to the fitted model.
struct LogRegReport {
    int iterations = 0;
    bool converged = false;
    double final_grad_norm = 0.0;
    std::vector<double> loss_history;  // loss before the first step, then after each step
};

struct LogRegFit {
    LogisticModel model;
    LogRegReport report;
};

/// Mean binary cross-entropy plus (lambda/2)·|w|² over already standardized
/// rows; the bias is not penalized. Writes d/dw into grad_w and returns the
/// loss; grad_b receives d/db.
double logistic_loss_and_gradient(std::span<const std::vector<double>> rows, std::span<const int> labels,
                                  std::span<const double> weights, double bias, double l2_lambda,
                                  std::vector<double>& grad_w, double& grad_b);

[[nodiscard]] LogRegFit train_logreg(const AlertStream& stream, const LogRegConfig& config = {});

struct ForestConfig {
    int n_trees = 100;
    int max_depth = 12;
    int min_samples_leaf = 10;
    int features_per_split = 0;  // 0 = ceil(sqrt(d))
    std::uint64_t seed = 42;
    int threads = 0;  // 0 = hardware concurrency
};

/// Flat CART tree. A node with feature < 0 is a leaf holding the positive
/// fraction of its training samples; otherwise x[feature] <= threshold goes left.
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
    int samples = 0;
};

struct DecisionTree {
    std::vector<TreeNode> nodes;

    [[nodiscard]] double predict_one(std::span<const double> x) const;
    [[nodiscard]] int depth() const;
};

struct ForestModel {
    std::vector<DecisionTree> trees;
    ForestConfig config;
    std::size_t n_features = 0;
    std::vector<std::string> feature_names;

    [[nodiscard]] double predict_one(std::span<const double> x) const;
};

[[nodiscard]] ForestModel train_forest(const AlertStream& stream, const ForestConfig& config = {});

/// Bootstrap positions used for tree i of a forest trained with the given
/// master seed on n rows. Exposed so tests can reconstruct tree inputs.
[[nodiscard]] std::vector<std::size_t> bootstrap_sample(std::size_t n, std::uint64_t tree_seed);

using Detector = std::variant<LogisticModel, ForestModel>;

[[nodiscard]] std::string detector_kind(const Detector& d);

struct IdScore {
    std::string id;
    double score = 0.0;
};

/// Scores every alert; pure and order-preserving.
[[nodiscard]] std::vector<IdScore> predict(const Detector& model, const AlertStream& stream);

[[nodiscard]] nlohmann::json detector_to_json(const Detector& d);
[[nodiscard]] Detector detector_from_json(const nlohmann::json& j);
void save_detector(const Detector& d, const std::filesystem::path& path);
[[nodiscard]] Detector load_detector(const std::filesystem::path& path);

}  // namespace triage
