#include "triage/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace triage {

namespace {

// log(1 + exp(x)) without overflow
double log1pexp(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

struct SmoothedTargets {
    double positive = 0.0;
    double negative = 0.0;
};

SmoothedTargets smoothed_targets(std::span<const ScoreLabel> pairs) {
    double np = 0.0;
    double nn = 0.0;
    for (const auto& p : pairs) {
        (p.label == 1 ? np : nn) += 1.0;
    }
    return {(np + 1.0) / (np + 2.0), 1.0 / (nn + 2.0)};
}

void check_pairs(std::span<const ScoreLabel> pairs, const char* who) {
    for (const auto& p : pairs) {
        if (!(p.score >= 0.0 && p.score <= 1.0)) {
            throw std::invalid_argument(std::string(who) + ": score outside [0,1]");
        }
        if (p.label != 0 && p.label != 1) {
            throw std::invalid_argument(std::string(who) + ": label outside {0,1}");
        }
    }
}

}  // namespace

double clamped_logit(double s) {
    const double c = std::clamp(s, kLogitClamp, 1.0 - kLogitClamp);
    return std::log(c) - std::log1p(-c);
}

double PlattCalibrator::operator()(double s) const {
    const double z = a * clamped_logit(s) + b;
    // 1 / (1 + e^z), evaluated on the stable side
    if (z >= 0.0) {
        const double e = std::exp(-z);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(z));
}

double platt_nll(std::span<const ScoreLabel> pairs, double a, double b) {
    const auto t = smoothed_targets(pairs);
    double nll = 0.0;
    for (const auto& p : pairs) {
        const double target = p.label == 1 ? t.positive : t.negative;
        const double z = a * clamped_logit(p.score) + b;
        // -[t log q + (1-t) log(1-q)] with q = 1/(1+e^z)
        nll += target * log1pexp(z) + (1.0 - target) * log1pexp(-z);
    }
    return nll;
}

PlattFit fit_platt(std::span<const ScoreLabel> pairs) {
    check_pairs(pairs, "fit_platt");
    if (pairs.size() < 4) {
        throw std::invalid_argument("fit_platt: need at least 4 samples");
    }
    const auto np = std::count_if(pairs.begin(), pairs.end(), [](const ScoreLabel& p) { return p.label == 1; });
    const auto nn = static_cast<std::ptrdiff_t>(pairs.size()) - np;
    if (np == 0 || nn == 0) {
        throw std::invalid_argument("fit_platt: calibration data contains a single class");
    }
    const auto t = smoothed_targets(pairs);
    std::vector<double> f(pairs.size());
    std::vector<double> target(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        f[i] = clamped_logit(pairs[i].score);
        target[i] = pairs[i].label == 1 ? t.positive : t.negative;
    }

    constexpr int max_iter = 200;
    constexpr double min_step = 1e-12;
    constexpr double sigma = 1e-12;  // keeps the Hessian positive definite
    const double grad_tol = 1e-11 * static_cast<double>(pairs.size());

    PlattFit fit;
    double a = 0.0;
    double b = std::log((static_cast<double>(nn) + 1.0) / (static_cast<double>(np) + 1.0));
    double fval = platt_nll(pairs, a, b);
    for (int it = 0; it < max_iter; ++it) {
        double h11 = sigma;
        double h22 = sigma;
        double h21 = 0.0;
        double g1 = 0.0;
        double g2 = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i) {
            const double q = PlattCalibrator{a, b}(pairs[i].score);
            const double d2 = q * (1.0 - q);
            h11 += f[i] * f[i] * d2;
            h22 += d2;
            h21 += f[i] * d2;
            const double d1 = target[i] - q;
            g1 += f[i] * d1;
            g2 += d1;
        }
        fit.iterations = it;
        if (std::abs(g1) < grad_tol && std::abs(g2) < grad_tol) {
            fit.converged = true;
            break;
        }
        const double det = h11 * h22 - h21 * h21;
        const double da = -(h22 * g1 - h21 * g2) / det;
        const double db = -(-h21 * g1 + h11 * g2) / det;
        const double gd = g1 * da + g2 * db;
        double step = 1.0;
        bool moved = false;
        while (step >= min_step) {
            const double na = a + step * da;
            const double nb = b + step * db;
            const double nf = platt_nll(pairs, na, nb);
            if (nf < fval + 1e-4 * step * gd) {
                a = na;
                b = nb;
                fval = nf;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if (!moved) {
            // line search stalled: the iterate is optimal to working precision
            fit.converged = std::abs(gd) < 1e-12 * std::max(1.0, fval);
            break;
        }
    }
    fit.calibrator = {a, b};
    fit.nll = fval;
    return fit;
}

double IsotonicCalibrator::operator()(double s) const {
    if (xs.empty()) {
        throw std::logic_error("isotonic calibrator has no knots");
    }
    if (s <= xs.front()) {
        return ys.front();
    }
    if (s >= xs.back()) {
        return ys.back();
    }
    const auto hi = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), s) - xs.begin());
    const auto lo = hi - 1;
    const double w = (s - xs[lo]) / (xs[hi] - xs[lo]);
    return ys[lo] + w * (ys[hi] - ys[lo]);
}

std::vector<IsotonicBlock> pava(std::span<const double> values, std::span<const double> weights) {
    if (values.size() != weights.size()) {
        throw std::invalid_argument("pava: values and weights differ in length");
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i]) || !(weights[i] > 0.0) || !std::isfinite(weights[i])) {
            throw std::invalid_argument("pava: values must be finite and weights positive");
        }
    }
    std::vector<IsotonicBlock> blocks;
    std::vector<double> sums;
    blocks.reserve(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        IsotonicBlock cur;
        double sum = values[i] * weights[i];
        cur.value = values[i];
        cur.weight = weights[i];
        cur.first = i;
        cur.last = i + 1;
        // pool while the previous block violates monotonicity
        while (!blocks.empty() && blocks.back().value >= cur.value) {
            sum += sums.back();
            cur.weight += blocks.back().weight;
            cur.value = sum / cur.weight;
            cur.first = blocks.back().first;
            blocks.pop_back();
            sums.pop_back();
        }
        blocks.push_back(cur);
        sums.push_back(sum);
    }
    return blocks;
}

IsotonicFit fit_isotonic(std::span<const ScoreLabel> pairs) {
    if (pairs.empty()) {
        throw std::invalid_argument("fit_isotonic: empty input");
    }
    if (pairs.size() < 2) {
        throw std::invalid_argument("fit_isotonic: need at least 2 samples");
    }
    check_pairs(pairs, "fit_isotonic");

    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t l, std::size_t r) { return pairs[l].score < pairs[r].score; });

    // tied scores enter PAVA as one pre-averaged group
    std::vector<double> group_score;
    std::vector<double> group_value;
    std::vector<double> group_weight;
    std::vector<std::size_t> group_of(pairs.size());
    for (auto i : order) {
        const auto& p = pairs[i];
        if (group_score.empty() || group_score.back() != p.score) {
            group_score.push_back(p.score);
            group_value.push_back(0.0);
            group_weight.push_back(0.0);
        }
        group_value.back() += p.label;
        group_weight.back() += 1.0;
        group_of[i] = group_score.size() - 1;
    }
    for (std::size_t g = 0; g < group_value.size(); ++g) {
        group_value[g] /= group_weight[g];
    }

    IsotonicFit fit;
    fit.blocks = pava(group_value, group_weight);
    std::vector<double> group_fitted(group_score.size());
    for (auto& blk : fit.blocks) {
        blk.lo = group_score[blk.first];
        blk.hi = group_score[blk.last - 1];
        for (auto g = blk.first; g < blk.last; ++g) {
            group_fitted[g] = blk.value;
        }
        fit.calibrator.xs.push_back(blk.lo);
        fit.calibrator.ys.push_back(blk.value);
        if (blk.hi > blk.lo) {
            fit.calibrator.xs.push_back(blk.hi);
            fit.calibrator.ys.push_back(blk.value);
        }
    }
    fit.fitted.resize(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        fit.fitted[i] = group_fitted[group_of[i]];
    }
    return fit;
}

std::string calibrator_kind(const Calibrator& c) {
    return std::holds_alternative<PlattCalibrator>(c) ? "platt" : "isotonic";
}

std::vector<double> calibrate(const Calibrator& c, std::span<const double> raw_scores) {
    std::vector<double> out;
    out.reserve(raw_scores.size());
    for (double s : raw_scores) {
        if (!(s >= 0.0 && s <= 1.0)) {
            throw std::invalid_argument("calibrate: score outside [0,1]");
        }
        out.push_back(std::visit([s](const auto& cal) { return cal(s); }, c));
    }
    return out;
}

nlohmann::json calibrator_to_json(const Calibrator& c) {
    nlohmann::json j = {{"format", "triage-calibrator"}, {"version", 1}, {"kind", calibrator_kind(c)}};
    if (const auto* p = std::get_if<PlattCalibrator>(&c)) {
        j["a"] = p->a;
        j["b"] = p->b;
        j["input"] = "logit";
    } else {
        const auto& iso = std::get<IsotonicCalibrator>(c);
        j["xs"] = iso.xs;
        j["ys"] = iso.ys;
    }
    return j;
}

Calibrator calibrator_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "triage-calibrator" || j.value("version", 0) != 1) {
        throw std::invalid_argument("not a calibrator document");
    }
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "platt") {
        return PlattCalibrator{j.at("a").get<double>(), j.at("b").get<double>()};
    }
    if (kind == "isotonic") {
        IsotonicCalibrator iso{j.at("xs").get<std::vector<double>>(), j.at("ys").get<std::vector<double>>()};
        if (iso.xs.empty() || iso.xs.size() != iso.ys.size() || !std::is_sorted(iso.xs.begin(), iso.xs.end()) ||
            !std::is_sorted(iso.ys.begin(), iso.ys.end())) {
            throw std::invalid_argument("calibrator document: malformed isotonic knots");
        }
        return iso;
    }
    throw std::invalid_argument("calibrator document: unknown kind '" + kind + "'");
}

ReliabilityTable reliability(std::span<const ScoreLabel> pairs, int n_bins) {
    if (pairs.empty()) {
        throw std::invalid_argument("reliability: empty input");
    }
    if (n_bins < 2) {
        throw std::invalid_argument("reliability: need at least 2 bins");
    }
    check_pairs(pairs, "reliability");
    const auto nb = static_cast<std::size_t>(n_bins);
    std::vector<double> conf(nb, 0.0);
    std::vector<double> hits(nb, 0.0);
    std::vector<std::size_t> count(nb, 0);
    for (const auto& p : pairs) {
        const auto k = std::min(static_cast<std::size_t>(p.score * static_cast<double>(n_bins)), nb - 1);
        conf[k] += p.score;
        hits[k] += p.label;
        ++count[k];
    }
    ReliabilityTable table;
    table.n = pairs.size();
    for (std::size_t k = 0; k < nb; ++k) {
        ReliabilityBin bin;
        bin.bin_low = static_cast<double>(k) / n_bins;
        bin.bin_high = static_cast<double>(k + 1) / n_bins;
        bin.count = count[k];
        if (count[k] > 0) {
            const auto c = static_cast<double>(count[k]);
            bin.mean_confidence = conf[k] / c;
            bin.empirical_frequency = hits[k] / c;
            table.ece += c / static_cast<double>(table.n) * std::abs(bin.mean_confidence - bin.empirical_frequency);
        }
        table.bins.push_back(bin);
    }
    return table;
}

}  // namespace triage
