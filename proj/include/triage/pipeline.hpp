#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "triage/alert.hpp"
#include "triage/calibration.hpp"
#include "triage/detectors.hpp"
#include "triage/evaluation.hpp"
#include "triage/policy.hpp"
#include "triage/study.hpp"

namespace triage {

struct ExternalScores {
    std::filesystem::path calibration_scores;  // id,raw_score,label
    std::filesystem::path test_scores;
};

struct StudySettings {
    std::size_t size = 60;
    std::optional<std::uint64_t> seed;
    std::string model = "logreg";
    std::string host = "127.0.0.1";
    int port = 8080;
    std::filesystem::path log_dir;  // default <out_dir>/study
    std::string instructions =
        "Each alert is shown with the information your interface provides. Choose Escalate to send it for "
        "investigation or Close to dismiss it. Work at your normal pace; you will not be told whether a "
        "decision was correct. You may rate your confidence from 1 (guess) to 5 (certain).";
    std::filesystem::path logs;  // analyze-study input
};

struct RunConfig {
    std::filesystem::path train_path;
    std::filesystem::path test_path;
    std::string label_column = "label";
    std::string id_column = "id";
    std::string detector = "both";  // logreg | forest | both | external_scores
    std::string calibrator = "auto";  // auto | platt | isotonic
    LogRegConfig logreg;
    ForestConfig forest;
    ExternalScores external;
    CostModel cost;
    PolicyParams policy;
    SweepGrid sweep;
    std::vector<double> cost_ratios = {5.0, 10.0, 15.0, 20.0};
    int reliability_bins = 10;
    std::string reliability_split = "calibration";  // calibration | test
    double calibration_fraction = 0.2;
    std::uint64_t seed = 42;
    std::optional<std::uint64_t> split_seed;
    StudySettings study;
    std::filesystem::path out_dir = "out";
    bool deterministic = false;

    [[nodiscard]] std::uint64_t effective_split_seed() const { return split_seed.value_or(seed); }
    [[nodiscard]] std::uint64_t effective_study_seed() const { return study.seed.value_or(seed); }
    [[nodiscard]] std::vector<std::string> model_names() const;
    [[nodiscard]] std::string calibrator_for(const std::string& model) const;
    void validate() const;
};

/// Missing keys keep their defaults; unknown keys are rejected.
[[nodiscard]] RunConfig config_from_json(const nlohmann::json& j);
[[nodiscard]] RunConfig load_config(const std::filesystem::path& path);
/// Full echo with every seed spelled out.
[[nodiscard]] nlohmann::json config_to_json(const RunConfig& c);
/// SHA-256 of the echo minus the keys that cannot change results
/// (out_dir, deterministic, forest.threads).
[[nodiscard]] std::string config_digest(const RunConfig& c);

struct SplitManifest {
    std::uint64_t seed = 0;
    double calibration_fraction = 0.2;
    std::vector<std::string> fit_ids;
    std::vector<std::string> calibration_ids;
};

/// Stratified split of the training stream; each class contributes
/// round(fraction * class size) alerts to the calibration part.
[[nodiscard]] SplitManifest stratified_split(const AlertStream& stream, double fraction, std::uint64_t seed);

void write_file_atomic(const std::filesystem::path& path, const std::string& content);
[[nodiscard]] std::string format_double(double v);

struct TrainSummary {
    IngestReport ingest;
    SplitManifest split;
    std::vector<std::string> models;
};

TrainSummary cmd_train(const RunConfig& c);
std::vector<std::string> cmd_calibrate(const RunConfig& c);
std::vector<TriageOutcome> cmd_simulate(const RunConfig& c);
std::vector<SweepResult> cmd_sweep_threshold(const RunConfig& c);
std::vector<CostRatioRow> cmd_sweep_costs(const RunConfig& c);
std::vector<ReliabilityTable> cmd_reliability(const RunConfig& c);
void cmd_serve(const RunConfig& c);
StudyAnalysis cmd_analyze(const RunConfig& c);
void cmd_make_fixture(const RunConfig& c, std::size_t train_rows, std::size_t test_rows);

/// Scores of one model on the test stream or the calibration split, loaded
/// from the artifacts in out_dir.
[[nodiscard]] std::vector<LabeledScore> model_scores(const RunConfig& c, const std::string& model,
                                                     const std::string& split);

[[nodiscard]] StudyConfig study_config(const RunConfig& c);

}  // namespace triage
