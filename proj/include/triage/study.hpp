#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "triage/alert.hpp"
#include "triage/evaluation.hpp"
#include "triage/policy.hpp"

namespace triage {

/// Study-protocol violation carrying the HTTP status it maps to.
class StudyError : public std::runtime_error {
public:
    StudyError(int status, std::string code, const std::string& message)
        : std::runtime_error(message), status_(status), code_(std::move(code)) {}

    [[nodiscard]] int status() const noexcept { return status_; }
    [[nodiscard]] const std::string& code() const noexcept { return code_; }

private:
    int status_;
    std::string code_;
};

enum class ParticipantGroup { ProxyAnalyst, Practitioner };

[[nodiscard]] std::string_view to_string(ParticipantGroup g) noexcept;
[[nodiscard]] ParticipantGroup group_from_string(std::string_view s);

/// Latin-square rotations; participant k gets rotation k mod 3.
inline constexpr std::array<std::array<PolicyCondition, 3>, 3> kLatinSquare = {{
    {PolicyCondition::C0_Baseline, PolicyCondition::C1_Misaligned, PolicyCondition::C2_Aligned},
    {PolicyCondition::C1_Misaligned, PolicyCondition::C2_Aligned, PolicyCondition::C0_Baseline},
    {PolicyCondition::C2_Aligned, PolicyCondition::C0_Baseline, PolicyCondition::C1_Misaligned},
}};

/// An alert as the study shows it, with every signal precomputed; the
/// payload builder decides which of them a condition may reveal.
struct StudyAlert {
    std::string id;
    int label = 0;
    std::vector<double> features;
    ScoredAlert scored;
    Decision recommendation = Decision::Close;  // C2 rule
};

struct StudyConfig {
    std::vector<std::string> feature_names;
    std::vector<StudyAlert> alerts;
    std::uint64_t seed = 42;
    std::filesystem::path log_dir;  // empty: in-memory only
    std::string instructions;
};

/// Stratified fixed-size sample of the scored test stream that keeps its
/// malicious rate; returned in stream order.
[[nodiscard]] std::vector<StudyAlert> select_study_alerts(const AlertStream& stream,
                                                          std::span<const LabeledScore> scores, std::size_t size,
                                                          std::uint64_t seed, const CostModel& cost,
                                                          const PolicyParams& params = {});

struct TrialRecord {
    std::string participant_id;
    ParticipantGroup group = ParticipantGroup::ProxyAnalyst;
    PolicyCondition condition = PolicyCondition::C0_Baseline;
    std::string alert_id;
    int label = 0;
    Decision decision = Decision::Close;
    long long decision_time_ms = 0;
    std::optional<int> confidence_rating;
    std::string server_ts;
};

[[nodiscard]] nlohmann::json to_json(const TrialRecord& r);
[[nodiscard]] TrialRecord trial_record_from_json(const nlohmann::json& j);
[[nodiscard]] std::vector<TrialRecord> parse_trial_log(std::string_view jsonl);

struct SessionDescriptor {
    std::string session_id;
    std::string participant_id;
    ParticipantGroup group = ParticipantGroup::ProxyAnalyst;
    std::array<PolicyCondition, 3> order{};
    std::size_t trials_per_block = 0;
};

[[nodiscard]] nlohmann::json to_json(const SessionDescriptor& d);

struct Progress {
    std::size_t block_index = 0;
    std::size_t trial_index = 0;
    std::size_t trials_per_block = 0;
    std::size_t blocks = 3;
    bool completed = false;
    std::optional<PolicyCondition> condition;
};

[[nodiscard]] nlohmann::json to_json(const Progress& p);

struct Submission {
    std::string alert_id;
    Decision decision = Decision::Close;
    long long decision_time_ms = 0;
    std::optional<int> confidence_rating;
};

[[nodiscard]] Submission submission_from_json(const nlohmann::json& j);

struct ConditionTiming {
    PolicyCondition condition = PolicyCondition::C0_Baseline;
    std::size_t n = 0;
    double mean_ms = 0.0;
    double median_ms = 0.0;
};

struct LikertRow {
    int level = 0;
    std::size_t n = 0;
    std::optional<double> accuracy;
};

struct ParticipantOutcome {
    std::string participant_id;
    ParticipantGroup group = ParticipantGroup::ProxyAnalyst;
    std::array<TriageOutcome, 3> outcomes;  // C0, C1, C2
};

struct StudyAnalysis {
    std::size_t n_completed = 0;
    std::vector<ParticipantOutcome> participants;
    std::vector<ConditionTiming> timing;
    std::vector<LikertRow> confidence;
    std::size_t unrated_trials = 0;
    WilcoxonResult cost_c0_vs_c2;
    WilcoxonResult fn_c0_vs_c2;
    /// True when fewer than 6 participants completed: with n <= 5 pairs no
    /// exact two-sided p-value can fall below 0.05.
    bool underpowered = true;
};

/// Pure function of the trial log. Only participants with a full record set
/// (every condition, alerts_per_block distinct alerts each) are analyzed.
[[nodiscard]] StudyAnalysis analyze_study(std::span<const TrialRecord> logs, const CostModel& cost,
                                          std::size_t alerts_per_block);

[[nodiscard]] nlohmann::json to_json(const StudyAnalysis& a);

/// Session bookkeeping for the within-subjects triage protocol.
///
/// Sessions advance independently; each is mutated under its own lock and
/// every accepted decision is appended to the JSONL trial log as one write.
/// With a log directory set, construction replays sessions.jsonl and
/// trials.jsonl to restore state after a restart.
class StudyService {
public:
    explicit StudyService(StudyConfig config);
    ~StudyService();

    StudyService(const StudyService&) = delete;
    StudyService& operator=(const StudyService&) = delete;

    SessionDescriptor create_session(const std::string& participant_id, ParticipantGroup group);
    [[nodiscard]] nlohmann::json next_trial(const std::string& session_id) const;
    Progress submit_decision(const std::string& session_id, const Submission& submission);
    [[nodiscard]] Progress progress(const std::string& session_id) const;

    [[nodiscard]] std::vector<TrialRecord> records() const;
    [[nodiscard]] std::string export_jsonl() const;
    [[nodiscard]] StudyAnalysis analysis(const CostModel& cost) const;

    [[nodiscard]] std::size_t trials_per_block() const noexcept { return config_.alerts.size(); }
    [[nodiscard]] const std::string& instructions() const noexcept { return config_.instructions; }
    [[nodiscard]] std::vector<std::string> block_alert_order(const std::string& session_id, std::size_t block) const;

private:
    struct Session;

    Session& find(const std::string& session_id) const;
    SessionDescriptor add_session(const std::string& session_id, const std::string& participant_id,
                                  ParticipantGroup group, std::size_t rotation);
    void apply(Session& s, const TrialRecord& record);
    void append_line(const std::filesystem::path& file, const std::string& line);
    void replay();

    StudyConfig config_;
    mutable std::shared_mutex sessions_mutex_;
    std::map<std::string, std::unique_ptr<Session>> sessions_;
    std::map<std::string, std::string> session_of_participant_;
    std::size_t session_count_ = 0;

    mutable std::mutex log_mutex_;
    std::vector<TrialRecord> records_;
};

}  // namespace triage
