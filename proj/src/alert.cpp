#include "triage/alert.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_set>

#include <boost/algorithm/string/trim.hpp>
#include <boost/tokenizer.hpp>
#include <openssl/evp.h>

namespace triage {

namespace {

using Row = std::vector<std::string>;

Row split_csv_line(std::string_view line) {
    if (!line.empty() && line.back() == '\r') {
        line.remove_suffix(1);
    }
    using Sep = boost::escaped_list_separator<char>;
    const std::string owned(line);
    boost::tokenizer<Sep> tok(owned, Sep('\0', ',', '"'));
    Row out;
    for (const auto& cell : tok) {
        out.push_back(boost::algorithm::trim_copy(cell));
    }
    return out;
}

std::vector<Row> read_rows(std::string_view text) {
    std::vector<Row> rows;
    std::size_t pos = 0;
    // UTF-8 byte order mark
    if (text.substr(0, 3) == "\xEF\xBB\xBF") {
        pos = 3;
    }
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        auto line = text.substr(pos, end - pos);
        pos = end + 1;
        if (line.empty() || line == "\r" || line.front() == '#') {
            continue;
        }
        rows.push_back(split_csv_line(line));
    }
    return rows;
}

std::optional<double> parse_double(std::string_view s) {
    if (s.empty()) {
        return std::nullopt;
    }
    if (s.front() == '+') {
        s.remove_prefix(1);
    }
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        return std::nullopt;
    }
    return v;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IngestError("cannot open file: " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t column_index(const Row& header, const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? header.size() : static_cast<std::size_t>(it - header.begin());
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 digest failed");
    }
    std::ostringstream out;
    out << std::hex << std::setfill('0');
    for (unsigned int i = 0; i < len; ++i) {
        out << std::setw(2) << static_cast<int>(md[i]);
    }
    return out.str();
}

AlertStream::AlertStream(std::vector<Alert> alerts, std::vector<std::string> feature_names,
                         std::string source_digest)
    : alerts_(std::move(alerts)), names_(std::move(feature_names)), digest_(std::move(source_digest)) {
    std::unordered_set<std::string_view> seen;
    seen.reserve(alerts_.size());
    for (const auto& a : alerts_) {
        if (a.features.size() != names_.size()) {
            throw std::invalid_argument("alert '" + a.id + "' has " + std::to_string(a.features.size()) +
                                        " features, expected " + std::to_string(names_.size()));
        }
        if (a.label != 0 && a.label != 1) {
            throw std::invalid_argument("alert '" + a.id + "' has label outside {0,1}");
        }
        if (!std::all_of(a.features.begin(), a.features.end(), [](double v) { return std::isfinite(v); })) {
            throw std::invalid_argument("alert '" + a.id + "' has a non-finite feature");
        }
        if (!seen.insert(a.id).second) {
            throw std::invalid_argument("duplicate alert id '" + a.id + "'");
        }
    }
}

std::size_t AlertStream::positives() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(alerts_.begin(), alerts_.end(), [](const Alert& a) { return a.label == 1; }));
}

AlertStream AlertStream::subset(const std::vector<std::size_t>& positions) const {
    std::vector<Alert> out;
    out.reserve(positions.size());
    for (auto p : positions) {
        out.push_back(alerts_.at(p));
    }
    return AlertStream(std::move(out), names_, digest_);
}

std::string_view to_string(Decision d) noexcept {
    return d == Decision::Escalate ? "Escalate" : "Close";
}

Decision decision_from_string(std::string_view s) {
    if (s == "Escalate") {
        return Decision::Escalate;
    }
    if (s == "Close") {
        return Decision::Close;
    }
    throw std::invalid_argument("decision must be 'Escalate' or 'Close', got '" + std::string(s) + "'");
}

CostModel::CostModel(double fn_cost, double fp_cost) : c_fn(fn_cost), c_fp(fp_cost) {
    if (!(std::isfinite(c_fn) && c_fn > 0.0) || !(std::isfinite(c_fp) && c_fp > 0.0)) {
        throw std::invalid_argument("cost model requires finite c_fn > 0 and c_fp > 0");
    }
}

std::string IngestReport::to_text() const {
    std::ostringstream out;
    out << "ingest " << path << ": kept " << rows_kept << " of " << rows_total << " rows ("
        << rows_dropped_nonfinite << " dropped for non-finite values); " << columns_retained.size()
        << " feature columns retained, " << columns_discarded.size() << " discarded";
    for (const auto& d : columns_discarded) {
        out << "\n  discarded " << d.name << ": " << d.reason;
    }
    return out.str();
}

nlohmann::json IngestReport::to_json() const {
    nlohmann::json discarded = nlohmann::json::array();
    for (const auto& d : columns_discarded) {
        discarded.push_back({{"name", d.name}, {"reason", d.reason}});
    }
    return {{"path", path},
            {"rows_total", rows_total},
            {"rows_kept", rows_kept},
            {"rows_dropped_nonfinite", rows_dropped_nonfinite},
            {"columns_retained", columns_retained},
            {"columns_discarded", discarded},
            {"source_digest", source_digest}};
}

IngestResult ingest_csv(const std::filesystem::path& path, const IngestOptions& options) {
    if (!std::filesystem::exists(path)) {
        throw IngestError("missing file: " + path.string());
    }
    return ingest_csv_text(read_file(path), options, path.string());
}

IngestResult ingest_csv_text(std::string_view text, const IngestOptions& options, std::string source_name) {
    auto rows = read_rows(text);
    if (rows.empty()) {
        throw IngestError(source_name + ": missing header row");
    }
    const Row header = rows.front();
    rows.erase(rows.begin());

    const auto label_idx = column_index(header, options.label_column);
    if (label_idx == header.size()) {
        throw IngestError(source_name + ": missing label column '" + options.label_column + "'");
    }
    const auto id_idx = column_index(header, options.id_column);
    const bool has_id = id_idx != header.size();

    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != header.size()) {
            throw IngestError(source_name + ": row " + std::to_string(r + 1) + " has " +
                              std::to_string(rows[r].size()) + " cells, header has " +
                              std::to_string(header.size()));
        }
    }

    IngestReport report;
    report.path = source_name;
    report.rows_total = rows.size();
    report.source_digest = sha256_hex(text);

    // A column is numeric when every non-empty cell parses as a number; empty
    // cells count as missing values and mark the row non-finite.
    std::vector<std::size_t> numeric_cols;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (c == label_idx || (has_id && c == id_idx)) {
            continue;
        }
        bool numeric = true;
        bool any_value = false;
        for (const auto& row : rows) {
            if (row[c].empty()) {
                continue;
            }
            any_value = true;
            if (!parse_double(row[c])) {
                numeric = false;
                break;
            }
        }
        if (!any_value) {
            report.columns_discarded.push_back({header[c], "empty"});
        } else if (numeric) {
            numeric_cols.push_back(c);
        } else {
            report.columns_discarded.push_back({header[c], "non-numeric"});
        }
    }

    std::vector<std::size_t> feature_cols;
    if (options.keep_columns) {
        for (const auto& name : *options.keep_columns) {
            auto c = column_index(header, name);
            if (c == header.size()) {
                throw IngestError(source_name + ": keep column '" + name + "' not found");
            }
            if (std::find(numeric_cols.begin(), numeric_cols.end(), c) == numeric_cols.end()) {
                throw IngestError(source_name + ": keep column '" + name + "' is not numeric");
            }
            feature_cols.push_back(c);
        }
        for (auto c : numeric_cols) {
            if (std::find(feature_cols.begin(), feature_cols.end(), c) == feature_cols.end()) {
                report.columns_discarded.push_back({header[c], "not in keep list"});
            }
        }
    } else {
        feature_cols = numeric_cols;
    }
    if (feature_cols.empty()) {
        throw IngestError(source_name + ": zero numeric feature columns");
    }

    std::vector<std::string> names;
    for (auto c : feature_cols) {
        names.push_back(header[c]);
    }
    report.columns_retained = names;

    std::vector<Alert> alerts;
    alerts.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& row = rows[r];
        int label = 0;
        if (row[label_idx] == options.positive_token) {
            label = 1;
        } else if (row[label_idx] != options.negative_token) {
            throw IngestError(source_name + ": row " + std::to_string(r + 1) + " has label '" + row[label_idx] +
                              "', expected '" + options.positive_token + "' or '" + options.negative_token + "'");
        }
        Alert a;
        a.id = has_id ? row[id_idx] : "row-" + std::to_string(r + 1);
        a.label = label;
        a.features.reserve(feature_cols.size());
        bool finite = true;
        for (auto c : feature_cols) {
            auto v = parse_double(row[c]);
            if (!v || !std::isfinite(*v)) {
                finite = false;
                break;
            }
            a.features.push_back(*v);
        }
        if (!finite) {
            ++report.rows_dropped_nonfinite;
            continue;
        }
        alerts.push_back(std::move(a));
    }
    if (alerts.empty()) {
        throw IngestError(source_name + ": zero usable rows");
    }
    report.rows_kept = alerts.size();

    try {
        AlertStream stream(std::move(alerts), std::move(names), report.source_digest);
        return {std::move(stream), std::move(report)};
    } catch (const std::invalid_argument& e) {
        throw IngestError(source_name + ": " + e.what());
    }
}

std::vector<ScoreRecord> ingest_scores(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw IngestError("missing file: " + path.string());
    }
    return ingest_scores_text(read_file(path));
}

std::vector<ScoreRecord> ingest_scores_text(std::string_view text) {
    auto rows = read_rows(text);
    if (rows.empty()) {
        throw IngestError("scores file: zero usable rows");
    }
    if (rows.front() != Row{"id", "raw_score", "label"}) {
        throw IngestError("scores file: header must be exactly 'id,raw_score,label'");
    }
    std::vector<ScoreRecord> out;
    std::unordered_set<std::string> seen;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        const auto where = "scores file row " + std::to_string(r);
        if (row.size() != 3) {
            throw IngestError(where + ": expected 3 cells");
        }
        auto score = parse_double(row[1]);
        if (!score || !(*score >= 0.0 && *score <= 1.0)) {
            throw IngestError(where + ": raw_score '" + row[1] + "' outside [0,1]");
        }
        if (row[2] != "0" && row[2] != "1") {
            throw IngestError(where + ": malformed label '" + row[2] + "'");
        }
        if (!seen.insert(row[0]).second) {
            throw IngestError(where + ": duplicate id '" + row[0] + "'");
        }
        out.push_back({row[0], *score, row[2] == "1" ? 1 : 0});
    }
    if (out.empty()) {
        throw IngestError("scores file: zero usable rows");
    }
    return out;
}

}  // namespace triage
