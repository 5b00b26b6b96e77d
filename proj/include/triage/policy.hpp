#pragma once

#include <array>
#include <string>
#include <string_view>

#include "triage/alert.hpp"

namespace triage {

enum class UncertaintyBand { High, Medium, Low };

[[nodiscard]] std::string_view to_string(UncertaintyBand b) noexcept;

/// Band edges on the calibrated probability.
///   High:   [high_lo, high_hi]
///   Medium: [medium_lo, high_lo) and (high_hi, medium_hi]
///   Low:    everything else
struct BandEdges {
    double medium_lo = 0.35;
    double high_lo = 0.45;
    double high_hi = 0.55;
    double medium_hi = 0.65;

    void validate() const;
};

[[nodiscard]] UncertaintyBand band_of(double p_cal, const BandEdges& edges = {});

/// Expected-cost-minimizing cutoff for calibrated probabilities.
struct Threshold {
    double t_star = 0.5;
    CostModel derived_from;
};

[[nodiscard]] Threshold derive_threshold(const CostModel& cost);

struct ScoredAlert {
    std::string alert_id;
    double p_raw = 0.0;
    double p_cal = 0.0;
    UncertaintyBand band = UncertaintyBand::Low;
};

[[nodiscard]] ScoredAlert make_scored(std::string id, double p_raw, double p_cal, const BandEdges& edges = {});

enum class PolicyCondition { C0_Baseline, C1_Misaligned, C2_Aligned };

inline constexpr std::array<PolicyCondition, 3> kAllConditions = {
    PolicyCondition::C0_Baseline, PolicyCondition::C1_Misaligned, PolicyCondition::C2_Aligned};

/// Short tag used in files and on the wire: "C0", "C1", "C2".
[[nodiscard]] std::string_view to_string(PolicyCondition c) noexcept;
[[nodiscard]] PolicyCondition condition_from_string(std::string_view s);

/// Fixed raw-probability cutoffs of the two non-aligned conditions.
struct PolicyParams {
    double baseline_threshold = 0.5;
    double misaligned_threshold = 0.7;
    BandEdges bands;
};

/// C0 compares raw p to 0.5, C1 compares raw p to 0.7, C2 compares p_cal to
/// t* and escalates any High-uncertainty alert. Ties escalate.
[[nodiscard]] Decision decide(PolicyCondition condition, const ScoredAlert& alert, const Threshold& threshold,
                              const PolicyParams& params = {});

}  // namespace triage
