#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace triage {

/// Raised for unreadable or unusable input files.
class IngestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One network-flow record: one triage item.
struct Alert {
    std::string id;
    std::vector<double> features;
    int label = 0;  // 1 = malicious
};

/// Immutable, ordered stream of alerts with a shared feature layout.
///
/// The constructor enforces the stream invariants: equal dimensionality,
/// finite features, labels in {0,1} and unique ids.
class AlertStream {
public:
    AlertStream(std::vector<Alert> alerts, std::vector<std::string> feature_names,
                std::string source_digest = {});

    [[nodiscard]] const std::vector<Alert>& alerts() const noexcept { return alerts_; }
    [[nodiscard]] const std::vector<std::string>& feature_names() const noexcept { return names_; }
    [[nodiscard]] const std::string& source_digest() const noexcept { return digest_; }
    [[nodiscard]] std::size_t size() const noexcept { return alerts_.size(); }
    [[nodiscard]] bool empty() const noexcept { return alerts_.empty(); }
    [[nodiscard]] std::size_t dim() const noexcept { return names_.size(); }
    [[nodiscard]] const Alert& operator[](std::size_t i) const { return alerts_[i]; }

    [[nodiscard]] std::size_t positives() const noexcept;

    /// Sub-stream of the given positions, in the order given.
    [[nodiscard]] AlertStream subset(const std::vector<std::size_t>& positions) const;

private:
    std::vector<Alert> alerts_;
    std::vector<std::string> names_;
    std::string digest_;
};

enum class Decision { Escalate, Close };

[[nodiscard]] std::string_view to_string(Decision d) noexcept;
[[nodiscard]] Decision decision_from_string(std::string_view s);

/// Asymmetric error costs. Both must be finite and strictly positive.
struct CostModel {
    double c_fn = 10.0;
    double c_fp = 1.0;

    CostModel() = default;
    CostModel(double fn_cost, double fp_cost);
};

struct IngestOptions {
    std::string label_column = "label";
    std::string positive_token = "1";
    std::string negative_token = "0";
    /// Column holding the alert identifier; row numbers are used when absent.
    std::string id_column = "id";
    /// When set, only these numeric columns are retained, in this order.
    std::optional<std::vector<std::string>> keep_columns;
};

struct DiscardedColumn {
    std::string name;
    std::string reason;
};

struct IngestReport {
    std::string path;
    std::size_t rows_total = 0;
    std::size_t rows_kept = 0;
    std::size_t rows_dropped_nonfinite = 0;
    std::vector<std::string> columns_retained;
    std::vector<DiscardedColumn> columns_discarded;
    std::string source_digest;

    [[nodiscard]] std::string to_text() const;
    [[nodiscard]] nlohmann::json to_json() const;
};

struct IngestResult {
    AlertStream stream;
    IngestReport report;
};

/// Reads a labeled alert CSV. Non-numeric columns are dropped and rows with
/// any non-finite retained value are skipped and counted.
[[nodiscard]] IngestResult ingest_csv(const std::filesystem::path& path,
                                      const IngestOptions& options = {});

/// Same as ingest_csv but over in-memory CSV text.
[[nodiscard]] IngestResult ingest_csv_text(std::string_view text, const IngestOptions& options = {},
                                           std::string source_name = "<memory>");

struct ScoreRecord {
    std::string id;
    double raw_score = 0.0;
    int label = 0;
};

/// Reads an external-scores CSV with the exact header `id,raw_score,label`.
[[nodiscard]] std::vector<ScoreRecord> ingest_scores(const std::filesystem::path& path);
[[nodiscard]] std::vector<ScoreRecord> ingest_scores_text(std::string_view text);

/// Hex SHA-256 of a byte string.
[[nodiscard]] std::string sha256_hex(std::string_view bytes);

}  // namespace triage
