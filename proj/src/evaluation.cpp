#include "triage/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace triage {

TriageOutcome score_decisions(std::span<const DecisionLabel> decisions, const CostModel& cost) {
    TriageOutcome out;
    for (const auto& d : decisions) {
        const bool esc = d.decision == Decision::Escalate;
        if (d.label == 1) {
            ++(esc ? out.tp : out.fn);
        } else {
            ++(esc ? out.fp : out.tn);
        }
    }
    out.cost = cost.c_fn * static_cast<double>(out.fn) + cost.c_fp * static_cast<double>(out.fp);
    return out;
}

std::vector<LabeledScore> join_scores(const AlertStream& stream, std::span<const IdScore> raw,
                                      std::span<const IdScore> cal) {
    if (raw.empty() || cal.empty() || stream.empty()) {
        throw std::invalid_argument("simulate: empty score list");
    }
    if (raw.size() != stream.size() || cal.size() != stream.size()) {
        throw std::invalid_argument("simulate: score lists and stream differ in length");
    }
    std::unordered_map<std::string_view, std::size_t> raw_at;
    std::unordered_map<std::string_view, std::size_t> cal_at;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        raw_at.emplace(raw[i].id, i);
        cal_at.emplace(cal[i].id, i);
    }
    std::vector<LabeledScore> out;
    out.reserve(stream.size());
    for (const auto& a : stream.alerts()) {
        auto r = raw_at.find(a.id);
        auto c = cal_at.find(a.id);
        if (r == raw_at.end() || c == cal_at.end()) {
            throw std::invalid_argument("simulate: no score for alert '" + a.id + "'");
        }
        out.push_back({a.id, a.label, raw[r->second].score, cal[c->second].score});
    }
    return out;
}

std::vector<AlertDecisions> decide_all(std::span<const LabeledScore> items, const CostModel& cost,
                                       const PolicyParams& params) {
    if (items.empty()) {
        throw std::invalid_argument("simulate: empty score list");
    }
    const auto threshold = derive_threshold(cost);
    std::vector<AlertDecisions> out;
    out.reserve(items.size());
    for (const auto& it : items) {
        AlertDecisions ad;
        ad.scored = make_scored(it.id, it.p_raw, it.p_cal, params.bands);
        ad.label = it.label;
        for (std::size_t c = 0; c < kAllConditions.size(); ++c) {
            ad.decisions[c] = decide(kAllConditions[c], ad.scored, threshold, params);
        }
        out.push_back(std::move(ad));
    }
    return out;
}

std::vector<TriageOutcome> simulate(std::span<const LabeledScore> items, const CostModel& cost,
                                    const PolicyParams& params, const std::string& model_name) {
    const auto decided = decide_all(items, cost, params);
    std::vector<TriageOutcome> out;
    std::vector<DecisionLabel> column(decided.size());
    for (std::size_t c = 0; c < kAllConditions.size(); ++c) {
        for (std::size_t i = 0; i < decided.size(); ++i) {
            column[i] = {decided[i].decisions[c], decided[i].label};
        }
        auto outcome = score_decisions(column, cost);
        outcome.model_name = model_name;
        outcome.condition = std::string(to_string(kAllConditions[c]));
        out.push_back(std::move(outcome));
    }
    return out;
}

std::vector<TriageOutcome> simulate(const AlertStream& stream, std::span<const IdScore> raw,
                                    std::span<const IdScore> cal, const CostModel& cost, const PolicyParams& params,
                                    const std::string& model_name) {
    const auto items = join_scores(stream, raw, cal);
    return simulate(items, cost, params, model_name);
}

std::vector<double> SweepGrid::points() const {
    if (!(step > 0.0) || !(min > 0.0) || !(max < 1.0) || min > max) {
        throw std::invalid_argument("sweep grid must satisfy 0 < min <= max < 1 and step > 0");
    }
    const auto count = static_cast<long long>(std::floor((max - min) / step + 1e-9)) + 1;
    std::vector<double> pts;
    pts.reserve(static_cast<std::size_t>(count));
    for (long long k = 0; k < count; ++k) {
        pts.push_back(min + static_cast<double>(k) * step);
    }
    return pts;
}

SweepResult sweep_threshold(std::span<const double> cal_scores, std::span<const int> labels, const CostModel& cost,
                            const SweepGrid& grid) {
    if (cal_scores.size() != labels.size()) {
        throw std::invalid_argument("sweep_threshold: scores and labels differ in length");
    }
    const auto pts = grid.points();
    if (pts.empty()) {
        throw std::invalid_argument("sweep_threshold: empty grid");
    }
    // Sort once so each threshold's counts come from a binary search.
    std::vector<std::pair<double, int>> sorted;
    sorted.reserve(cal_scores.size());
    for (std::size_t i = 0; i < cal_scores.size(); ++i) {
        sorted.emplace_back(cal_scores[i], labels[i]);
    }
    std::sort(sorted.begin(), sorted.end());
    std::vector<long long> pos_below(sorted.size() + 1, 0);
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        pos_below[i + 1] = pos_below[i] + sorted[i].second;
    }
    const long long total_pos = pos_below.back();
    const auto n = static_cast<long long>(sorted.size());

    SweepResult res;
    res.t_star = derive_threshold(cost).t_star;
    for (double t : pts) {
        // everything below t is closed
        const auto k = static_cast<long long>(
            std::lower_bound(sorted.begin(), sorted.end(), t, [](const auto& e, double v) { return e.first < v; }) -
            sorted.begin());
        const long long fn = pos_below[static_cast<std::size_t>(k)];
        const long long fp = (n - k) - (total_pos - fn);
        const double c = cost.c_fn * static_cast<double>(fn) + cost.c_fp * static_cast<double>(fp);
        res.points.push_back({t, c});
    }
    auto best = std::min_element(res.points.begin(), res.points.end(),
                                 [](const SweepPoint& a, const SweepPoint& b) { return a.cost < b.cost; });
    res.argmin_threshold = best->threshold;
    res.min_cost = best->cost;
    return res;
}

std::vector<CostRatioRow> sweep_cost_ratio(std::span<const LabeledScore> items, std::span<const double> ratios,
                                           const PolicyParams& params) {
    std::vector<CostRatioRow> rows;
    for (double r : ratios) {
        if (!(r >= 1.0)) {
            throw std::invalid_argument("sweep_cost_ratio: ratios must be >= 1");
        }
        const CostModel cost(r, 1.0);
        const double t_star = derive_threshold(cost).t_star;
        for (const auto& o : simulate(items, cost, params)) {
            rows.push_back({r, o.condition, o.cost, t_star});
        }
    }
    return rows;
}

std::string_view to_string(WilcoxonMethod m) noexcept {
    return m == WilcoxonMethod::Exact ? "exact" : "normal_approx";
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> paired_diffs) {
    if (paired_diffs.empty()) {
        throw std::invalid_argument("wilcoxon_signed_rank: no differences");
    }
    std::vector<double> d;
    for (double x : paired_diffs) {
        if (!std::isfinite(x)) {
            throw std::invalid_argument("wilcoxon_signed_rank: non-finite difference");
        }
        if (x != 0.0) {
            d.push_back(x);
        }
    }
    WilcoxonResult res;
    res.n_nonzero = static_cast<int>(d.size());
    if (d.empty()) {
        return res;  // p = 1 by convention
    }
    const auto n = d.size();
    std::sort(d.begin(), d.end(), [](double a, double b) { return std::abs(a) < std::abs(b); });

    // Doubled average ranks keep tied ranks integral: positions i..j (1-based)
    // share rank (i+j)/2, i.e. doubled rank i+j.
    std::vector<long long> rank2(n);
    double tie_term = 0.0;  // sum of t^3 - t over tie groups
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && std::abs(d[j + 1]) == std::abs(d[i])) {
            ++j;
        }
        const auto r2 = static_cast<long long>(i + 1 + j + 1);
        for (auto k = i; k <= j; ++k) {
            rank2[k] = r2;
        }
        const auto t = static_cast<double>(j - i + 1);
        tie_term += t * t * t - t;
        i = j + 1;
    }
    long long w_plus2 = 0;
    long long total2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        total2 += rank2[i];
        if (d[i] > 0.0) {
            w_plus2 += rank2[i];
        }
    }
    const long long w2 = std::min(w_plus2, total2 - w_plus2);
    res.w_plus = static_cast<double>(w_plus2) / 2.0;
    res.w_statistic = static_cast<double>(w2) / 2.0;

    if (res.n_nonzero <= kWilcoxonExactMax) {
        res.method = WilcoxonMethod::Exact;
        // count[s] = number of sign assignments with doubled W+ equal to s
        std::vector<unsigned long long> count(static_cast<std::size_t>(total2) + 1, 0);
        count[0] = 1;
        long long reach = 0;
        for (auto r : rank2) {
            for (long long s = reach; s >= 0; --s) {
                if (count[static_cast<std::size_t>(s)] != 0) {
                    count[static_cast<std::size_t>(s + r)] += count[static_cast<std::size_t>(s)];
                }
            }
            reach += r;
        }
        unsigned long long extreme = 0;
        for (long long s = 0; s <= total2; ++s) {
            if (std::min(s, total2 - s) <= w2) {
                extreme += count[static_cast<std::size_t>(s)];
            }
        }
        res.p_value = static_cast<double>(extreme) / std::ldexp(1.0, res.n_nonzero);
    } else {
        res.method = WilcoxonMethod::NormalApprox;
        const auto nn = static_cast<double>(n);
        const double mean = nn * (nn + 1.0) / 4.0;
        const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
        const double z = std::max(0.0, std::abs(res.w_plus - mean) - 0.5) / std::sqrt(var);
        res.p_value = std::erfc(z / std::sqrt(2.0));
    }
    res.p_value = std::clamp(res.p_value, 0.0, 1.0);
    return res;
}

}  // namespace triage
