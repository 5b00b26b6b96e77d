#include "triage/policy.hpp"

#include <stdexcept>

namespace triage {

std::string_view to_string(UncertaintyBand b) noexcept {
    switch (b) {
        case UncertaintyBand::High:
            return "High";
        case UncertaintyBand::Medium:
            return "Medium";
        case UncertaintyBand::Low:
            return "Low";
    }
    return "Low";
}

void BandEdges::validate() const {
    if (!(0.0 <= medium_lo && medium_lo <= high_lo && high_lo <= high_hi && high_hi <= medium_hi &&
          medium_hi <= 1.0)) {
        throw std::invalid_argument("band edges must satisfy 0 <= medium_lo <= high_lo <= high_hi <= medium_hi <= 1");
    }
}

UncertaintyBand band_of(double p_cal, const BandEdges& e) {
    if (!(p_cal >= 0.0 && p_cal <= 1.0)) {
        throw std::invalid_argument("band_of: probability outside [0,1]");
    }
    if (p_cal >= e.high_lo && p_cal <= e.high_hi) {
        return UncertaintyBand::High;
    }
    if ((p_cal >= e.medium_lo && p_cal < e.high_lo) || (p_cal > e.high_hi && p_cal <= e.medium_hi)) {
        return UncertaintyBand::Medium;
    }
    return UncertaintyBand::Low;
}

Threshold derive_threshold(const CostModel& cost) {
    const CostModel checked(cost.c_fn, cost.c_fp);
    return {checked.c_fp / (checked.c_fp + checked.c_fn), checked};
}

ScoredAlert make_scored(std::string id, double p_raw, double p_cal, const BandEdges& edges) {
    if (!(p_raw >= 0.0 && p_raw <= 1.0)) {
        throw std::invalid_argument("make_scored: raw probability outside [0,1]");
    }
    return {std::move(id), p_raw, p_cal, band_of(p_cal, edges)};
}

std::string_view to_string(PolicyCondition c) noexcept {
    switch (c) {
        case PolicyCondition::C0_Baseline:
            return "C0";
        case PolicyCondition::C1_Misaligned:
            return "C1";
        case PolicyCondition::C2_Aligned:
            return "C2";
    }
    return "C0";
}

PolicyCondition condition_from_string(std::string_view s) {
    if (s == "C0") {
        return PolicyCondition::C0_Baseline;
    }
    if (s == "C1") {
        return PolicyCondition::C1_Misaligned;
    }
    if (s == "C2") {
        return PolicyCondition::C2_Aligned;
    }
    throw std::invalid_argument("unknown condition '" + std::string(s) + "'");
}

Decision decide(PolicyCondition condition, const ScoredAlert& alert, const Threshold& threshold,
                const PolicyParams& params) {
    auto escalate_if = [](bool b) { return b ? Decision::Escalate : Decision::Close; };
    switch (condition) {
        case PolicyCondition::C0_Baseline:
            return escalate_if(alert.p_raw >= params.baseline_threshold);
        case PolicyCondition::C1_Misaligned:
            return escalate_if(alert.p_raw >= params.misaligned_threshold);
        case PolicyCondition::C2_Aligned:
            return escalate_if(alert.p_cal >= threshold.t_star || alert.band == UncertaintyBand::High);
    }
    return Decision::Escalate;
}

}  // namespace triage
