#include "triage/study.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace triage {

namespace {

using nlohmann::json;

constexpr std::size_t kBlocks = 3;

std::uint64_t fnv1a(std::uint64_t h, std::string_view bytes) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t block_seed(std::uint64_t seed, const std::string& session_id, std::size_t block) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    h = fnv1a(h, std::to_string(seed));
    h = fnv1a(h, "/");
    h = fnv1a(h, session_id);
    h = fnv1a(h, "/");
    return fnv1a(h, std::to_string(block));
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const auto secs = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[48];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

std::size_t condition_index(PolicyCondition c) {
    return static_cast<std::size_t>(c);
}

bool correct(Decision d, int label) {
    return (d == Decision::Escalate) == (label == 1);
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

json outcome_json(const TriageOutcome& o) {
    return {{"condition", o.condition}, {"fn", o.fn}, {"fp", o.fp},
            {"tn", o.tn},               {"tp", o.tp}, {"cost", o.cost}};
}

json wilcoxon_json(const WilcoxonResult& w) {
    return {{"n_nonzero", w.n_nonzero},
            {"w_statistic", w.w_statistic},
            {"w_plus", w.w_plus},
            {"p_value", w.p_value},
            {"method", std::string(to_string(w.method))}};
}

}  // namespace

std::string_view to_string(ParticipantGroup g) noexcept {
    return g == ParticipantGroup::Practitioner ? "practitioner" : "proxy_analyst";
}

ParticipantGroup group_from_string(std::string_view s) {
    if (s == "proxy_analyst") {
        return ParticipantGroup::ProxyAnalyst;
    }
    if (s == "practitioner") {
        return ParticipantGroup::Practitioner;
    }
    throw std::invalid_argument("unknown participant group '" + std::string(s) + "'");
}

std::vector<StudyAlert> select_study_alerts(const AlertStream& stream, std::span<const LabeledScore> scores,
                                            std::size_t size, std::uint64_t seed, const CostModel& cost,
                                            const PolicyParams& params) {
    if (scores.size() != stream.size()) {
        throw std::invalid_argument("select_study_alerts: scores and stream differ in length");
    }
    if (size == 0 || size > stream.size()) {
        throw std::invalid_argument("select_study_alerts: study size must be in 1.." + std::to_string(stream.size()));
    }
    std::vector<std::size_t> pos;
    std::vector<std::size_t> neg;
    for (std::size_t i = 0; i < stream.size(); ++i) {
        if (scores[i].id != stream[i].id) {
            throw std::invalid_argument("select_study_alerts: scores not aligned with stream");
        }
        (stream[i].label == 1 ? pos : neg).push_back(i);
    }
    const double rate = static_cast<double>(pos.size()) / static_cast<double>(stream.size());
    auto n_pos = static_cast<std::size_t>(std::llround(rate * static_cast<double>(size)));
    n_pos = std::min(n_pos, pos.size());
    if (size - n_pos > neg.size()) {
        n_pos = size - neg.size();
    }
    const std::size_t n_neg = size - n_pos;

    std::mt19937_64 rng(seed);
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);
    std::vector<std::size_t> picked(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(n_pos));
    picked.insert(picked.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(n_neg));
    std::sort(picked.begin(), picked.end());

    const auto threshold = derive_threshold(cost);
    std::vector<StudyAlert> out;
    out.reserve(picked.size());
    for (auto i : picked) {
        StudyAlert a;
        a.id = stream[i].id;
        a.label = stream[i].label;
        a.features = stream[i].features;
        a.scored = make_scored(a.id, scores[i].p_raw, scores[i].p_cal, params.bands);
        a.recommendation = decide(PolicyCondition::C2_Aligned, a.scored, threshold, params);
        out.push_back(std::move(a));
    }
    return out;
}

json to_json(const TrialRecord& r) {
    return {{"participant_id", r.participant_id},
            {"group", std::string(to_string(r.group))},
            {"condition", std::string(to_string(r.condition))},
            {"alert_id", r.alert_id},
            {"label", r.label},
            {"decision", std::string(to_string(r.decision))},
            {"decision_time_ms", r.decision_time_ms},
            {"confidence_rating", r.confidence_rating ? json(*r.confidence_rating) : json(nullptr)},
            {"server_ts", r.server_ts}};
}

TrialRecord trial_record_from_json(const json& j) {
    TrialRecord r;
    r.participant_id = j.at("participant_id").get<std::string>();
    r.group = group_from_string(j.at("group").get<std::string>());
    r.condition = condition_from_string(j.at("condition").get<std::string>());
    r.alert_id = j.at("alert_id").get<std::string>();
    r.label = j.at("label").get<int>();
    if (r.label != 0 && r.label != 1) {
        throw std::invalid_argument("trial record label must be 0 or 1");
    }
    r.decision = decision_from_string(j.at("decision").get<std::string>());
    r.decision_time_ms = j.at("decision_time_ms").get<long long>();
    if (r.decision_time_ms < 0) {
        throw std::invalid_argument("trial record decision_time_ms is negative");
    }
    if (j.contains("confidence_rating") && !j.at("confidence_rating").is_null()) {
        r.confidence_rating = j.at("confidence_rating").get<int>();
    }
    r.server_ts = j.value("server_ts", "");
    return r;
}

std::vector<TrialRecord> parse_trial_log(std::string_view jsonl) {
    std::vector<TrialRecord> out;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < jsonl.size()) {
        auto end = jsonl.find('\n', start);
        if (end == std::string_view::npos) {
            end = jsonl.size();
        }
        const auto line = jsonl.substr(start, end - start);
        ++line_no;
        start = end + 1;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) {
            continue;
        }
        try {
            out.push_back(trial_record_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw std::invalid_argument("trial log line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

json to_json(const SessionDescriptor& d) {
    json order = json::array();
    for (auto c : d.order) {
        order.push_back(std::string(to_string(c)));
    }
    return {{"session_id", d.session_id},   {"participant_id", d.participant_id},
            {"group", std::string(to_string(d.group))}, {"order", order},
            {"trials_per_block", d.trials_per_block}};
}

json to_json(const Progress& p) {
    return {{"block_index", p.block_index},
            {"trial_index", p.trial_index},
            {"trials_per_block", p.trials_per_block},
            {"blocks", p.blocks},
            {"completed", p.completed},
            {"condition", p.condition ? json(std::string(to_string(*p.condition))) : json(nullptr)}};
}

Submission submission_from_json(const json& j) {
    if (!j.is_object()) {
        throw StudyError(400, "bad_request", "decision body must be a JSON object");
    }
    Submission s;
    try {
        s.alert_id = j.at("alert_id").get<std::string>();
        s.decision = decision_from_string(j.at("decision").get<std::string>());
        s.decision_time_ms = j.at("decision_time_ms").get<long long>();
        if (j.contains("confidence_rating") && !j.at("confidence_rating").is_null()) {
            s.confidence_rating = j.at("confidence_rating").get<int>();
        }
    } catch (const std::exception& e) {
        throw StudyError(400, "bad_request", e.what());
    }
    return s;
}

StudyAnalysis analyze_study(std::span<const TrialRecord> logs, const CostModel& cost, std::size_t alerts_per_block) {
    if (alerts_per_block == 0) {
        throw std::invalid_argument("analyze_study: alerts_per_block must be positive");
    }
    std::map<std::string, std::vector<const TrialRecord*>> by_participant;
    for (const auto& r : logs) {
        by_participant[r.participant_id].push_back(&r);
    }

    StudyAnalysis out;
    std::array<std::vector<double>, 3> times;
    std::array<std::size_t, 5> likert_n{};
    std::array<std::size_t, 5> likert_hits{};
    std::vector<double> cost_diffs;
    std::vector<double> fn_diffs;

    for (const auto& [pid, recs] : by_participant) {
        std::array<std::set<std::string>, 3> seen;
        bool clean = true;
        for (const auto* r : recs) {
            if (!seen[condition_index(r->condition)].insert(r->alert_id).second) {
                clean = false;
            }
        }
        const bool complete = clean && std::all_of(seen.begin(), seen.end(), [&](const auto& s) {
                                  return s.size() == alerts_per_block;
                              });
        if (!complete) {
            continue;
        }
        ParticipantOutcome po;
        po.participant_id = pid;
        po.group = recs.front()->group;
        std::array<std::vector<DecisionLabel>, 3> per;
        for (const auto* r : recs) {
            const auto c = condition_index(r->condition);
            per[c].push_back({r->decision, r->label});
            times[c].push_back(static_cast<double>(r->decision_time_ms));
            if (r->confidence_rating) {
                const int lvl = *r->confidence_rating;
                if (lvl < 1 || lvl > 5) {
                    throw std::invalid_argument("analyze_study: confidence rating outside 1..5");
                }
                ++likert_n[static_cast<std::size_t>(lvl - 1)];
                likert_hits[static_cast<std::size_t>(lvl - 1)] += correct(r->decision, r->label) ? 1 : 0;
            } else {
                ++out.unrated_trials;
            }
        }
        for (std::size_t c = 0; c < 3; ++c) {
            po.outcomes[c] = score_decisions(per[c], cost);
            po.outcomes[c].model_name = pid;
            po.outcomes[c].condition = std::string(to_string(kAllConditions[c]));
        }
        cost_diffs.push_back(po.outcomes[0].cost - po.outcomes[2].cost);
        fn_diffs.push_back(static_cast<double>(po.outcomes[0].fn - po.outcomes[2].fn));
        out.participants.push_back(std::move(po));
    }
    if (out.participants.empty()) {
        throw std::invalid_argument("analyze_study: no completed sessions in the log");
    }
    out.n_completed = out.participants.size();
    out.underpowered = out.n_completed < 6;

    for (std::size_t c = 0; c < 3; ++c) {
        ConditionTiming t;
        t.condition = kAllConditions[c];
        t.n = times[c].size();
        t.mean_ms = std::accumulate(times[c].begin(), times[c].end(), 0.0) / static_cast<double>(t.n);
        t.median_ms = median_of(times[c]);
        out.timing.push_back(t);
    }
    for (int lvl = 1; lvl <= 5; ++lvl) {
        LikertRow row;
        row.level = lvl;
        row.n = likert_n[static_cast<std::size_t>(lvl - 1)];
        if (row.n > 0) {
            row.accuracy =
                static_cast<double>(likert_hits[static_cast<std::size_t>(lvl - 1)]) / static_cast<double>(row.n);
        }
        out.confidence.push_back(row);
    }
    out.cost_c0_vs_c2 = wilcoxon_signed_rank(cost_diffs);
    out.fn_c0_vs_c2 = wilcoxon_signed_rank(fn_diffs);
    return out;
}

json to_json(const StudyAnalysis& a) {
    json participants = json::array();
    for (const auto& p : a.participants) {
        json outs = json::array();
        for (const auto& o : p.outcomes) {
            outs.push_back(outcome_json(o));
        }
        participants.push_back(
            {{"participant_id", p.participant_id}, {"group", std::string(to_string(p.group))}, {"outcomes", outs}});
    }
    json timing = json::array();
    for (const auto& t : a.timing) {
        timing.push_back({{"condition", std::string(to_string(t.condition))},
                          {"n", t.n},
                          {"mean_ms", t.mean_ms},
                          {"median_ms", t.median_ms}});
    }
    json conf = json::array();
    for (const auto& row : a.confidence) {
        conf.push_back({{"level", row.level}, {"n", row.n}, {"accuracy", row.accuracy ? json(*row.accuracy) : json()}});
    }
    return {{"n_completed", a.n_completed},
            {"underpowered", a.underpowered},
            {"participants", participants},
            {"decision_time", timing},
            {"confidence_calibration", conf},
            {"unrated_trials", a.unrated_trials},
            {"wilcoxon_cost_c0_vs_c2", wilcoxon_json(a.cost_c0_vs_c2)},
            {"wilcoxon_fn_c0_vs_c2", wilcoxon_json(a.fn_c0_vs_c2)}};
}

struct StudyService::Session {
    SessionDescriptor descriptor;
    std::array<std::vector<std::size_t>, kBlocks> orders;
    std::size_t block = 0;
    std::size_t trial = 0;
    bool completed = false;
    std::string last_alert;
    mutable std::mutex mutex;
};

StudyService::StudyService(StudyConfig config) : config_(std::move(config)) {
    if (config_.alerts.empty()) {
        throw std::invalid_argument("study service needs at least one alert");
    }
    std::set<std::string> ids;
    for (const auto& a : config_.alerts) {
        if (!ids.insert(a.id).second) {
            throw std::invalid_argument("duplicate study alert id '" + a.id + "'");
        }
    }
    if (!config_.log_dir.empty()) {
        std::filesystem::create_directories(config_.log_dir);
        replay();
    }
}

StudyService::~StudyService() = default;

StudyService::Session& StudyService::find(const std::string& session_id) const {
    std::shared_lock lock(sessions_mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) {
        throw StudyError(404, "unknown_session", "no session '" + session_id + "'");
    }
    return *it->second;
}

SessionDescriptor StudyService::add_session(const std::string& session_id, const std::string& participant_id,
                                            ParticipantGroup group, std::size_t rotation) {
    auto s = std::make_unique<Session>();
    s->descriptor = {session_id, participant_id, group, kLatinSquare[rotation % 3], config_.alerts.size()};
    for (std::size_t b = 0; b < kBlocks; ++b) {
        auto& order = s->orders[b];
        order.resize(config_.alerts.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(block_seed(config_.seed, session_id, b));
        std::shuffle(order.begin(), order.end(), rng);
    }
    auto desc = s->descriptor;
    sessions_.emplace(session_id, std::move(s));
    session_of_participant_.emplace(participant_id, session_id);
    ++session_count_;
    return desc;
}

SessionDescriptor StudyService::create_session(const std::string& participant_id, ParticipantGroup group) {
    if (participant_id.empty()) {
        throw StudyError(400, "bad_request", "participant_id must be non-empty");
    }
    std::unique_lock lock(sessions_mutex_);
    if (session_of_participant_.count(participant_id) != 0) {
        throw StudyError(409, "duplicate_participant", "participant '" + participant_id + "' already has a session");
    }
    char id[16];
    std::snprintf(id, sizeof id, "s%04zu", session_count_ + 1);
    const std::size_t rotation = session_count_ % 3;
    if (!config_.log_dir.empty()) {
        const json line = {{"session_id", id},
                           {"participant_id", participant_id},
                           {"group", std::string(to_string(group))},
                           {"rotation", rotation}};
        append_line(config_.log_dir / "sessions.jsonl", line.dump());
    }
    return add_session(id, participant_id, group, rotation);
}

json StudyService::next_trial(const std::string& session_id) const {
    auto& s = find(session_id);
    std::lock_guard lock(s.mutex);
    if (s.completed) {
        throw StudyError(409, "session_completed", "session '" + session_id + "' is completed");
    }
    const auto condition = s.descriptor.order[s.block];
    const auto& alert = config_.alerts[s.orders[s.block][s.trial]];

    json features = json::object();
    for (std::size_t j = 0; j < alert.features.size(); ++j) {
        const auto name = j < config_.feature_names.size() ? config_.feature_names[j] : "f" + std::to_string(j);
        features[name] = alert.features[j];
    }
    json signals = json::object();
    switch (condition) {
        case PolicyCondition::C0_Baseline:
            signals["predicted_label"] = alert.scored.p_raw >= 0.5 ? "Malicious" : "Benign";
            break;
        case PolicyCondition::C1_Misaligned:
            signals["raw_confidence"] = alert.scored.p_raw;
            break;
        case PolicyCondition::C2_Aligned:
            signals["calibrated_confidence"] = alert.scored.p_cal;
            signals["uncertainty_band"] = std::string(to_string(alert.scored.band));
            signals["recommendation"] = std::string(to_string(alert.recommendation));
            break;
    }
    return {{"session_id", session_id},
            {"condition", std::string(to_string(condition))},
            {"block_index", s.block},
            {"trial_index", s.trial},
            {"trials_per_block", config_.alerts.size()},
            {"alert_id", alert.id},
            {"features", features},
            {"signals", signals}};
}

void StudyService::apply(Session& s, const TrialRecord&) {
    s.last_alert = config_.alerts[s.orders[s.block][s.trial]].id;
    if (++s.trial == config_.alerts.size()) {
        s.trial = 0;
        if (++s.block == kBlocks) {
            s.block = kBlocks - 1;
            s.trial = config_.alerts.size();
            s.completed = true;
        }
    }
}

Progress StudyService::submit_decision(const std::string& session_id, const Submission& sub) {
    auto& s = find(session_id);
    std::lock_guard lock(s.mutex);
    if (s.completed) {
        throw StudyError(409, "session_completed", "session '" + session_id + "' is completed");
    }
    const auto& alert = config_.alerts[s.orders[s.block][s.trial]];
    if (sub.alert_id != alert.id) {
        const auto& order = s.orders[s.block];
        const bool done_here = std::any_of(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(s.trial),
                                           [&](std::size_t i) { return config_.alerts[i].id == sub.alert_id; });
        if (done_here || sub.alert_id == s.last_alert) {
            throw StudyError(409, "duplicate_submission", "alert '" + sub.alert_id + "' was already decided");
        }
        throw StudyError(400, "wrong_alert", "current trial is alert '" + alert.id + "'");
    }
    if (sub.confidence_rating && (*sub.confidence_rating < 1 || *sub.confidence_rating > 5)) {
        throw StudyError(400, "bad_confidence", "confidence_rating must be an integer in 1..5");
    }
    if (sub.decision_time_ms < 0) {
        throw StudyError(400, "bad_time", "decision_time_ms must be non-negative");
    }
    TrialRecord rec;
    rec.participant_id = s.descriptor.participant_id;
    rec.group = s.descriptor.group;
    rec.condition = s.descriptor.order[s.block];
    rec.alert_id = alert.id;
    rec.label = alert.label;
    rec.decision = sub.decision;
    rec.decision_time_ms = sub.decision_time_ms;
    rec.confidence_rating = sub.confidence_rating;
    rec.server_ts = utc_now();
    {
        std::lock_guard log_lock(log_mutex_);
        if (!config_.log_dir.empty()) {
            append_line(config_.log_dir / "trials.jsonl", to_json(rec).dump());
        }
        records_.push_back(rec);
    }
    apply(s, rec);
    Progress p;
    p.block_index = s.block;
    p.trial_index = s.trial;
    p.trials_per_block = config_.alerts.size();
    p.completed = s.completed;
    if (!s.completed) {
        p.condition = s.descriptor.order[s.block];
    }
    return p;
}

Progress StudyService::progress(const std::string& session_id) const {
    auto& s = find(session_id);
    std::lock_guard lock(s.mutex);
    Progress p;
    p.block_index = s.block;
    p.trial_index = s.trial;
    p.trials_per_block = config_.alerts.size();
    p.completed = s.completed;
    if (!s.completed) {
        p.condition = s.descriptor.order[s.block];
    }
    return p;
}

std::vector<std::string> StudyService::block_alert_order(const std::string& session_id, std::size_t block) const {
    if (block >= kBlocks) {
        throw std::out_of_range("block index out of range");
    }
    auto& s = find(session_id);
    std::vector<std::string> out;
    for (auto i : s.orders[block]) {
        out.push_back(config_.alerts[i].id);
    }
    return out;
}

std::vector<TrialRecord> StudyService::records() const {
    std::lock_guard lock(log_mutex_);
    return records_;
}

std::string StudyService::export_jsonl() const {
    std::string out;
    for (const auto& r : records()) {
        out += to_json(r).dump();
        out += '\n';
    }
    return out;
}

StudyAnalysis StudyService::analysis(const CostModel& cost) const {
    const auto snapshot = records();
    return analyze_study(snapshot, cost, config_.alerts.size());
}

void StudyService::append_line(const std::filesystem::path& file, const std::string& line) {
    std::ofstream f(file, std::ios::app | std::ios::binary);
    const std::string full = line + '\n';
    f.write(full.data(), static_cast<std::streamsize>(full.size()));
    f.flush();
    if (!f) {
        throw std::runtime_error("cannot append to " + file.string());
    }
}

void StudyService::replay() {
    const auto sessions_file = config_.log_dir / "sessions.jsonl";
    if (std::ifstream f(sessions_file); f) {
        std::string line;
        while (std::getline(f, line)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) {
                continue;
            }
            const auto j = json::parse(line);
            add_session(j.at("session_id").get<std::string>(), j.at("participant_id").get<std::string>(),
                        group_from_string(j.at("group").get<std::string>()), j.at("rotation").get<std::size_t>());
        }
    }
    const auto trials_file = config_.log_dir / "trials.jsonl";
    std::ifstream f(trials_file, std::ios::binary);
    if (!f) {
        return;
    }
    std::stringstream ss;
    ss << f.rdbuf();
    for (auto& rec : parse_trial_log(ss.str())) {
        auto sid = session_of_participant_.find(rec.participant_id);
        if (sid == session_of_participant_.end()) {
            throw std::runtime_error("trial log names unknown participant '" + rec.participant_id + "'");
        }
        auto& s = *sessions_.at(sid->second);
        if (s.completed || config_.alerts[s.orders[s.block][s.trial]].id != rec.alert_id ||
            s.descriptor.order[s.block] != rec.condition) {
            throw std::runtime_error("trial log does not match the study alert set or session order");
        }
        apply(s, rec);
        records_.push_back(std::move(rec));
    }
}

}  // namespace triage
