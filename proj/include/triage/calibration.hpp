#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

namespace triage {

struct ScoreLabel {
    double score = 0.0;
    int label = 0;
};

/// Platt sigmoid over the log-odds of the raw score:
///   p_cal = 1 / (1 + exp(a * logit(s) + b))
/// a = -1, b = 0 is the identity map; a = 0 is a constant.
struct PlattCalibrator {
    double a = 0.0;
    double b = 0.0;

    [[nodiscard]] double operator()(double s) const;
};

/// Raw scores are clamped to [kLogitClamp, 1 - kLogitClamp] before taking
/// the log-odds so that hard 0/1 scores stay finite.
inline constexpr double kLogitClamp = 1e-12;
[[nodiscard]] double clamped_logit(double s);

struct PlattFit {
    PlattCalibrator calibrator;
    double nll = 0.0;  // against the smoothed targets
    int iterations = 0;
    bool converged = false;
};

/// Newton's method with backtracking on the negative log-likelihood of the
/// smoothed targets (N+ + 1)/(N+ + 2) and 1/(N- + 2).
[[nodiscard]] PlattFit fit_platt(std::span<const ScoreLabel> pairs);

/// The objective fit_platt minimizes, evaluated at (a, b).
[[nodiscard]] double platt_nll(std::span<const ScoreLabel> pairs, double a, double b);

/// Monotone piecewise-linear map through (xs[i], ys[i]); flat outside the knots.
struct IsotonicCalibrator {
    std::vector<double> xs;
    std::vector<double> ys;

    [[nodiscard]] double operator()(double s) const;
};

struct IsotonicBlock {
    double lo = 0.0;  // smallest score in the block
    double hi = 0.0;  // largest score in the block
    double value = 0.0;
    double weight = 0.0;
    std::size_t first = 0;  // position range in score order, [first, last)
    std::size_t last = 0;
};

/// Pool-adjacent-violators over values already in score order.
[[nodiscard]] std::vector<IsotonicBlock> pava(std::span<const double> values, std::span<const double> weights);

struct IsotonicFit {
    IsotonicCalibrator calibrator;
    std::vector<double> fitted;  // one value per input pair, input order
    std::vector<IsotonicBlock> blocks;
};

[[nodiscard]] IsotonicFit fit_isotonic(std::span<const ScoreLabel> pairs);

using Calibrator = std::variant<PlattCalibrator, IsotonicCalibrator>;

[[nodiscard]] std::string calibrator_kind(const Calibrator& c);

/// Applies a calibrator to scores in [0,1]; throws on out-of-range input.
[[nodiscard]] std::vector<double> calibrate(const Calibrator& c, std::span<const double> raw_scores);

[[nodiscard]] nlohmann::json calibrator_to_json(const Calibrator& c);
[[nodiscard]] Calibrator calibrator_from_json(const nlohmann::json& j);

struct ReliabilityBin {
    double bin_low = 0.0;
    double bin_high = 0.0;
    double mean_confidence = 0.0;
    double empirical_frequency = 0.0;
    std::size_t count = 0;
};

struct ReliabilityTable {
    std::vector<ReliabilityBin> bins;
    double ece = 0.0;
    std::size_t n = 0;
};

/// Equal-width bins over [0,1]; bin k covers [k/B, (k+1)/B) and the last bin
/// also takes 1.0. Empty bins report zeros and do not enter the ECE.
[[nodiscard]] ReliabilityTable reliability(std::span<const ScoreLabel> pairs, int n_bins = 10);

}  // namespace triage
