#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "triage/alert.hpp"
#include "triage/detectors.hpp"
#include "triage/policy.hpp"

namespace triage {

struct TriageOutcome {
    std::string model_name;
    std::string condition;
    long long fn = 0;
    long long fp = 0;
    long long tn = 0;
    long long tp = 0;
    double cost = 0.0;  // c_fn * fn + c_fp * fp
};

struct DecisionLabel {
    Decision decision = Decision::Close;
    int label = 0;
};

[[nodiscard]] TriageOutcome score_decisions(std::span<const DecisionLabel> decisions, const CostModel& cost);

/// One alert with both scores attached, the unit every simulation consumes.
struct LabeledScore {
    std::string id;
    int label = 0;
    double p_raw = 0.0;
    double p_cal = 0.0;
};

/// Joins raw and calibrated scores onto the stream by id.
[[nodiscard]] std::vector<LabeledScore> join_scores(const AlertStream& stream, std::span<const IdScore> raw,
                                                    std::span<const IdScore> cal);

/// Per-alert decisions under all three conditions, in kAllConditions order.
struct AlertDecisions {
    ScoredAlert scored;
    int label = 0;
    std::array<Decision, 3> decisions{};
};

[[nodiscard]] std::vector<AlertDecisions> decide_all(std::span<const LabeledScore> items, const CostModel& cost,
                                                     const PolicyParams& params = {});

/// One TriageOutcome per condition (C0, C1, C2).
[[nodiscard]] std::vector<TriageOutcome> simulate(std::span<const LabeledScore> items, const CostModel& cost,
                                                  const PolicyParams& params = {},
                                                  const std::string& model_name = {});

[[nodiscard]] std::vector<TriageOutcome> simulate(const AlertStream& stream, std::span<const IdScore> raw,
                                                  std::span<const IdScore> cal, const CostModel& cost,
                                                  const PolicyParams& params = {},
                                                  const std::string& model_name = {});

struct SweepGrid {
    double min = 0.01;
    double max = 0.99;
    double step = 0.01;

    [[nodiscard]] std::vector<double> points() const;
};

struct SweepPoint {
    double threshold = 0.0;
    double cost = 0.0;
};

struct SweepResult {
    std::vector<SweepPoint> points;
    double argmin_threshold = 0.0;  // lowest threshold among minimal-cost points
    double min_cost = 0.0;
    double t_star = 0.0;
};

/// Cost of "escalate iff p_cal >= t" for every grid threshold t.
[[nodiscard]] SweepResult sweep_threshold(std::span<const double> cal_scores, std::span<const int> labels,
                                          const CostModel& cost, const SweepGrid& grid = {});

struct CostRatioRow {
    double ratio = 0.0;
    std::string condition;
    double cost = 0.0;
    double t_star = 0.0;
};

/// Re-simulates all conditions at c_fn = ratio, c_fp = 1 for every ratio.
[[nodiscard]] std::vector<CostRatioRow> sweep_cost_ratio(std::span<const LabeledScore> items,
                                                         std::span<const double> ratios,
                                                         const PolicyParams& params = {});

enum class WilcoxonMethod { Exact, NormalApprox };

struct WilcoxonResult {
    int n_nonzero = 0;
    double w_statistic = 0.0;  // min(W+, W-)
    double w_plus = 0.0;
    double p_value = 1.0;  // two-sided
    WilcoxonMethod method = WilcoxonMethod::Exact;
};

inline constexpr int kWilcoxonExactMax = 25;

/// Wilcoxon signed-rank test on paired differences. Zeros are dropped, tied
/// magnitudes share their average rank. Up to 25 non-zero differences the
/// two-sided p-value is the exact share of the 2^n sign assignments whose
/// min(W+, W-) is at most the observed one; beyond that a normal
/// approximation with tie and continuity corrections is used.
[[nodiscard]] WilcoxonResult wilcoxon_signed_rank(std::span<const double> paired_diffs);

[[nodiscard]] std::string_view to_string(WilcoxonMethod m) noexcept;

}  // namespace triage
