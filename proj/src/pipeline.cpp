#include "triage/pipeline.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include "triage/study_server.hpp"
#include "triage/synthetic.hpp"

namespace triage {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string utc_stamp() {
    const auto secs = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string csv_preamble(const RunConfig& c) {
    std::string out = "# config_digest=" + config_digest(c) + " seed=" + std::to_string(c.seed) + "\n";
    if (!c.deterministic) {
        out += "# generated=" + utc_stamp() + "\n";
    }
    return out;
}

json with_provenance(const RunConfig& c, json doc) {
    doc["config_digest"] = config_digest(c);
    doc["seed"] = c.seed;
    if (!c.deterministic) {
        doc["generated"] = utc_stamp();
    }
    return doc;
}

fs::path model_path(const RunConfig& c, const std::string& model) {
    return c.out_dir / ("model_" + model + ".json");
}

fs::path calibrator_path(const RunConfig& c, const std::string& model) {
    return c.out_dir / ("calibrator_" + model + ".json");
}

json read_json(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) {
        throw std::runtime_error("missing artifact " + p.string() + " (run the earlier pipeline step first)");
    }
    return json::parse(f);
}

IngestOptions ingest_options(const RunConfig& c) {
    IngestOptions o;
    o.label_column = c.label_column;
    o.id_column = c.id_column;
    return o;
}

const std::vector<std::string>& feature_names_of(const Detector& d) {
    return std::visit([](const auto& m) -> const std::vector<std::string>& { return m.feature_names; }, d);
}

SplitManifest load_manifest(const RunConfig& c) {
    const auto j = read_json(c.out_dir / "split_manifest.json");
    SplitManifest m;
    m.seed = j.at("split_seed").get<std::uint64_t>();
    m.calibration_fraction = j.at("calibration_fraction").get<double>();
    m.fit_ids = j.at("fit_ids").get<std::vector<std::string>>();
    m.calibration_ids = j.at("calibration_ids").get<std::vector<std::string>>();
    return m;
}

AlertStream pick(const AlertStream& stream, const std::vector<std::string>& ids) {
    std::unordered_set<std::string> want(ids.begin(), ids.end());
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < stream.size(); ++i) {
        if (want.count(stream[i].id) != 0) {
            pos.push_back(i);
        }
    }
    if (pos.size() != want.size()) {
        throw std::runtime_error("split manifest does not match the training file");
    }
    return stream.subset(pos);
}

std::vector<LabeledScore> external_scores(const fs::path& path, const Calibrator* cal) {
    const auto recs = ingest_scores(path);
    std::vector<double> raw;
    raw.reserve(recs.size());
    for (const auto& r : recs) {
        raw.push_back(r.raw_score);
    }
    const auto p_cal = cal != nullptr ? calibrate(*cal, raw) : raw;
    std::vector<LabeledScore> out;
    for (std::size_t i = 0; i < recs.size(); ++i) {
        out.push_back({recs[i].id, recs[i].label, recs[i].raw_score, p_cal[i]});
    }
    return out;
}

std::vector<ScoreLabel> to_pairs(std::span<const LabeledScore> items, bool calibrated) {
    std::vector<ScoreLabel> out;
    out.reserve(items.size());
    for (const auto& it : items) {
        out.push_back({calibrated ? it.p_cal : it.p_raw, it.label});
    }
    return out;
}

std::string cell(Decision d) {
    return std::string(to_string(d));
}

template <class T>
T take(const json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
    for (const auto& [k, v] : j.items()) {
        if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; })) {
            throw std::invalid_argument("unknown config key '" + where + k + "'");
        }
    }
}

}  // namespace

std::string format_double(double v) {
    std::array<char, 32> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (ec != std::errc{}) {
        throw std::runtime_error("number formatting failed");
    }
    return std::string(buf.data(), ptr);
}

void write_file_atomic(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        f.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!f) {
            throw std::runtime_error("cannot write " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

std::vector<std::string> RunConfig::model_names() const {
    if (detector == "both") {
        return {"logreg", "forest"};
    }
    if (detector == "external_scores") {
        return {"external"};
    }
    return {detector};
}

std::string RunConfig::calibrator_for(const std::string& model) const {
    if (calibrator != "auto") {
        return calibrator;
    }
    return model == "logreg" ? "platt" : "isotonic";
}

void RunConfig::validate() const {
    static const std::set<std::string> detectors = {"logreg", "forest", "both", "external_scores"};
    static const std::set<std::string> calibrators = {"auto", "platt", "isotonic"};
    if (detectors.count(detector) == 0) {
        throw std::invalid_argument("detector must be one of logreg, forest, both, external_scores");
    }
    if (calibrators.count(calibrator) == 0) {
        throw std::invalid_argument("calibrator must be one of auto, platt, isotonic");
    }
    if (!(calibration_fraction > 0.0 && calibration_fraction < 1.0)) {
        throw std::invalid_argument("calibration_fraction must lie in (0,1)");
    }
    if (reliability_bins < 1) {
        throw std::invalid_argument("reliability_bins must be positive");
    }
    if (reliability_split != "calibration" && reliability_split != "test") {
        throw std::invalid_argument("reliability_split must be calibration or test");
    }
    if (forest.n_trees < 1 || forest.max_depth < 0 || forest.min_samples_leaf < 1) {
        throw std::invalid_argument("forest hyperparameters out of range");
    }
    if (logreg.l2_lambda < 0.0 || logreg.max_iters < 1) {
        throw std::invalid_argument("logreg hyperparameters out of range");
    }
    const CostModel check(cost.c_fn, cost.c_fp);
    policy.bands.validate();
    (void)sweep.points();
    for (double r : cost_ratios) {
        if (!(r >= 1.0)) {
            throw std::invalid_argument("cost_ratios must be >= 1");
        }
    }
}

RunConfig config_from_json(const json& j) {
    if (!j.is_object()) {
        throw std::invalid_argument("config must be a JSON object");
    }
    reject_unknown(j,
                   {"train_path", "test_path", "label_column", "id_column", "detector", "calibrator", "logreg",
                    "forest", "external", "cost", "policy", "sweep", "cost_ratios", "reliability_bins",
                    "reliability_split", "calibration_fraction", "seed", "split_seed", "study", "out_dir",
                    "deterministic", "config_digest"},
                   "");
    RunConfig c;
    c.train_path = take<std::string>(j, "train_path", "");
    c.test_path = take<std::string>(j, "test_path", "");
    c.label_column = take(j, "label_column", c.label_column);
    c.id_column = take(j, "id_column", c.id_column);
    c.detector = take(j, "detector", c.detector);
    c.calibrator = take(j, "calibrator", c.calibrator);
    c.seed = take(j, "seed", c.seed);
    if (j.contains("split_seed")) {
        c.split_seed = j.at("split_seed").get<std::uint64_t>();
    }
    c.forest.seed = c.seed;
    c.logreg.seed = c.seed;
    if (j.contains("logreg")) {
        const auto& l = j.at("logreg");
        reject_unknown(l, {"l2_lambda", "max_iters", "tol", "seed"}, "logreg.");
        c.logreg.l2_lambda = take(l, "l2_lambda", c.logreg.l2_lambda);
        c.logreg.max_iters = take(l, "max_iters", c.logreg.max_iters);
        c.logreg.tol = take(l, "tol", c.logreg.tol);
        c.logreg.seed = take(l, "seed", c.logreg.seed);
    }
    if (j.contains("forest")) {
        const auto& f = j.at("forest");
        reject_unknown(f, {"n_trees", "max_depth", "min_samples_leaf", "features_per_split", "seed", "threads"},
                       "forest.");
        c.forest.n_trees = take(f, "n_trees", c.forest.n_trees);
        c.forest.max_depth = take(f, "max_depth", c.forest.max_depth);
        c.forest.min_samples_leaf = take(f, "min_samples_leaf", c.forest.min_samples_leaf);
        c.forest.features_per_split = take(f, "features_per_split", c.forest.features_per_split);
        c.forest.seed = take(f, "seed", c.forest.seed);
        c.forest.threads = take(f, "threads", c.forest.threads);
    }
    if (j.contains("external")) {
        const auto& e = j.at("external");
        reject_unknown(e, {"calibration_scores", "test_scores"}, "external.");
        c.external.calibration_scores = take<std::string>(e, "calibration_scores", "");
        c.external.test_scores = take<std::string>(e, "test_scores", "");
    }
    if (j.contains("cost")) {
        const auto& k = j.at("cost");
        reject_unknown(k, {"c_fn", "c_fp"}, "cost.");
        c.cost = CostModel(take(k, "c_fn", c.cost.c_fn), take(k, "c_fp", c.cost.c_fp));
    }
    if (j.contains("policy")) {
        const auto& p = j.at("policy");
        reject_unknown(p, {"baseline_threshold", "misaligned_threshold", "bands"}, "policy.");
        c.policy.baseline_threshold = take(p, "baseline_threshold", c.policy.baseline_threshold);
        c.policy.misaligned_threshold = take(p, "misaligned_threshold", c.policy.misaligned_threshold);
        if (p.contains("bands")) {
            const auto& b = p.at("bands");
            reject_unknown(b, {"medium_lo", "high_lo", "high_hi", "medium_hi"}, "policy.bands.");
            c.policy.bands.medium_lo = take(b, "medium_lo", c.policy.bands.medium_lo);
            c.policy.bands.high_lo = take(b, "high_lo", c.policy.bands.high_lo);
            c.policy.bands.high_hi = take(b, "high_hi", c.policy.bands.high_hi);
            c.policy.bands.medium_hi = take(b, "medium_hi", c.policy.bands.medium_hi);
        }
    }
    if (j.contains("sweep")) {
        const auto& s = j.at("sweep");
        reject_unknown(s, {"min", "max", "step"}, "sweep.");
        c.sweep.min = take(s, "min", c.sweep.min);
        c.sweep.max = take(s, "max", c.sweep.max);
        c.sweep.step = take(s, "step", c.sweep.step);
    }
    c.cost_ratios = take(j, "cost_ratios", c.cost_ratios);
    c.reliability_bins = take(j, "reliability_bins", c.reliability_bins);
    c.reliability_split = take(j, "reliability_split", c.reliability_split);
    c.calibration_fraction = take(j, "calibration_fraction", c.calibration_fraction);
    if (j.contains("study")) {
        const auto& s = j.at("study");
        reject_unknown(s, {"size", "seed", "model", "host", "port", "log_dir", "instructions", "logs"}, "study.");
        c.study.size = take(s, "size", c.study.size);
        if (s.contains("seed")) {
            c.study.seed = s.at("seed").get<std::uint64_t>();
        }
        c.study.model = take(s, "model", c.study.model);
        c.study.host = take(s, "host", c.study.host);
        c.study.port = take(s, "port", c.study.port);
        c.study.log_dir = take<std::string>(s, "log_dir", "");
        c.study.instructions = take(s, "instructions", c.study.instructions);
        c.study.logs = take<std::string>(s, "logs", "");
    }
    c.out_dir = take<std::string>(j, "out_dir", c.out_dir.string());
    c.deterministic = take(j, "deterministic", c.deterministic);
    return c;
}

RunConfig load_config(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::invalid_argument("cannot read config " + path.string());
    }
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw std::invalid_argument("config " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

json config_to_json(const RunConfig& c) {
    return {
        {"train_path", c.train_path.string()},
        {"test_path", c.test_path.string()},
        {"label_column", c.label_column},
        {"id_column", c.id_column},
        {"detector", c.detector},
        {"calibrator", c.calibrator},
        {"logreg",
         {{"l2_lambda", c.logreg.l2_lambda},
          {"max_iters", c.logreg.max_iters},
          {"tol", c.logreg.tol},
          {"seed", c.logreg.seed}}},
        {"forest",
         {{"n_trees", c.forest.n_trees},
          {"max_depth", c.forest.max_depth},
          {"min_samples_leaf", c.forest.min_samples_leaf},
          {"features_per_split", c.forest.features_per_split},
          {"seed", c.forest.seed},
          {"threads", c.forest.threads}}},
        {"external",
         {{"calibration_scores", c.external.calibration_scores.string()},
          {"test_scores", c.external.test_scores.string()}}},
        {"cost", {{"c_fn", c.cost.c_fn}, {"c_fp", c.cost.c_fp}}},
        {"policy",
         {{"baseline_threshold", c.policy.baseline_threshold},
          {"misaligned_threshold", c.policy.misaligned_threshold},
          {"bands",
           {{"medium_lo", c.policy.bands.medium_lo},
            {"high_lo", c.policy.bands.high_lo},
            {"high_hi", c.policy.bands.high_hi},
            {"medium_hi", c.policy.bands.medium_hi}}}}},
        {"sweep", {{"min", c.sweep.min}, {"max", c.sweep.max}, {"step", c.sweep.step}}},
        {"cost_ratios", c.cost_ratios},
        {"reliability_bins", c.reliability_bins},
        {"reliability_split", c.reliability_split},
        {"calibration_fraction", c.calibration_fraction},
        {"seed", c.seed},
        {"split_seed", c.effective_split_seed()},
        {"study",
         {{"size", c.study.size},
          {"seed", c.effective_study_seed()},
          {"model", c.study.model},
          {"host", c.study.host},
          {"port", c.study.port},
          {"log_dir", c.study.log_dir.string()},
          {"instructions", c.study.instructions},
          {"logs", c.study.logs.string()}}},
        {"out_dir", c.out_dir.string()},
        {"deterministic", c.deterministic},
    };
}

std::string config_digest(const RunConfig& c) {
    auto j = config_to_json(c);
    j.erase("out_dir");
    j.erase("deterministic");
    j["forest"].erase("threads");
    return sha256_hex(j.dump());
}

SplitManifest stratified_split(const AlertStream& stream, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw std::invalid_argument("calibration fraction must lie in (0,1)");
    }
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < stream.size(); ++i) {
        by_class[static_cast<std::size_t>(stream[i].label)].push_back(i);
    }
    std::mt19937_64 rng(seed);
    std::vector<char> in_cal(stream.size(), 0);
    for (auto& idx : by_class) {
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
        for (std::size_t i = 0; i < k; ++i) {
            in_cal[idx[i]] = 1;
        }
    }
    SplitManifest m;
    m.seed = seed;
    m.calibration_fraction = fraction;
    for (std::size_t i = 0; i < stream.size(); ++i) {
        (in_cal[i] ? m.calibration_ids : m.fit_ids).push_back(stream[i].id);
    }
    return m;
}

TrainSummary cmd_train(const RunConfig& c) {
    c.validate();
    TrainSummary out;
    if (c.detector == "external_scores") {
        throw std::invalid_argument("train: detector external_scores has nothing to train");
    }
    if (c.train_path.empty()) {
        throw std::invalid_argument("train: train_path is not set");
    }
    auto ingest = ingest_csv(c.train_path, ingest_options(c));
    std::cerr << ingest.report.to_text() << "\n";
    out.ingest = ingest.report;
    out.split = stratified_split(ingest.stream, c.calibration_fraction, c.effective_split_seed());
    const auto fit = pick(ingest.stream, out.split.fit_ids);
    fs::create_directories(c.out_dir);

    const json manifest = with_provenance(c, {{"split_seed", out.split.seed},
                                              {"calibration_fraction", out.split.calibration_fraction},
                                              {"source_digest", ingest.stream.source_digest()},
                                              {"fit_ids", out.split.fit_ids},
                                              {"calibration_ids", out.split.calibration_ids}});
    for (const auto& name : c.model_names()) {
        Detector model;
        if (name == "logreg") {
            auto r = train_logreg(fit, c.logreg);
            model = std::move(r.model);
        } else {
            model = train_forest(fit, c.forest);
        }
        save_detector(model, model_path(c, name));
        out.models.push_back(name);
    }
    write_file_atomic(c.out_dir / "split_manifest.json", manifest.dump() + "\n");
    write_file_atomic(c.out_dir / "ingest_report.json", with_provenance(c, out.ingest.to_json()).dump(2) + "\n");
    write_file_atomic(c.out_dir / "config_echo.json", config_to_json(c).dump(2) + "\n");
    return out;
}

namespace {

std::vector<LabeledScore> scores_with(const RunConfig& c, const std::string& model, const std::string& split,
                                      const std::optional<Calibrator>& cal) {
    if (model == "external") {
        const auto& path = split == "test" ? c.external.test_scores : c.external.calibration_scores;
        if (path.empty()) {
            throw std::invalid_argument("external." + std::string(split == "test" ? "test_scores" : "calibration_scores") +
                                        " is not set");
        }
        return external_scores(path, cal ? &*cal : nullptr);
    }
    const auto detector = load_detector(model_path(c, model));
    auto opts = ingest_options(c);
    opts.keep_columns = feature_names_of(detector);
    const auto& path = split == "test" ? c.test_path : c.train_path;
    if (path.empty()) {
        throw std::invalid_argument(split == "test" ? "test_path is not set" : "train_path is not set");
    }
    auto ingested = ingest_csv(path, opts).stream;
    const auto stream = split == "test" ? std::move(ingested) : pick(ingested, load_manifest(c).calibration_ids);
    const auto raw = predict(detector, stream);
    std::vector<double> raw_p;
    raw_p.reserve(raw.size());
    for (const auto& r : raw) {
        raw_p.push_back(r.score);
    }
    const auto p_cal = cal ? calibrate(*cal, raw_p) : raw_p;
    std::vector<LabeledScore> out;
    out.reserve(stream.size());
    for (std::size_t i = 0; i < stream.size(); ++i) {
        out.push_back({stream[i].id, stream[i].label, raw_p[i], p_cal[i]});
    }
    return out;
}

}  // namespace

std::vector<LabeledScore> model_scores(const RunConfig& c, const std::string& model, const std::string& split) {
    std::optional<Calibrator> cal;
    if (fs::exists(calibrator_path(c, model))) {
        cal = calibrator_from_json(read_json(calibrator_path(c, model)));
    }
    return scores_with(c, model, split, cal);
}

std::vector<std::string> cmd_calibrate(const RunConfig& c) {
    c.validate();
    std::vector<std::string> written;
    for (const auto& name : c.model_names()) {
        const auto items = scores_with(c, name, "calibration", std::nullopt);
        const auto pairs = to_pairs(items, false);
        Calibrator cal;
        if (c.calibrator_for(name) == "platt") {
            cal = fit_platt(pairs).calibrator;
        } else {
            cal = fit_isotonic(pairs).calibrator;
        }
        auto doc = calibrator_to_json(cal);
        doc["model"] = name;
        doc["fitted_on"] = items.size();
        write_file_atomic(calibrator_path(c, name), with_provenance(c, doc).dump() + "\n");
        written.push_back(calibrator_path(c, name).string());
    }
    return written;
}

std::vector<TriageOutcome> cmd_simulate(const RunConfig& c) {
    c.validate();
    std::vector<TriageOutcome> all;
    std::string results = csv_preamble(c) + "model,condition,fn,fp,tn,tp,cost\n";
    for (const auto& name : c.model_names()) {
        if (!fs::exists(calibrator_path(c, name))) {
            throw std::runtime_error("missing artifact " + calibrator_path(c, name).string() +
                                     " (run calibrate first)");
        }
        const auto items = model_scores(c, name, "test");
        const auto outcomes = simulate(items, c.cost, c.policy, name);
        for (const auto& o : outcomes) {
            results += o.model_name + "," + o.condition + "," + std::to_string(o.fn) + "," + std::to_string(o.fp) +
                       "," + std::to_string(o.tn) + "," + std::to_string(o.tp) + "," + format_double(o.cost) + "\n";
            all.push_back(o);
        }
        std::string audit = csv_preamble(c) + "id,label,p_raw,p_cal,band,decision_c0,decision_c1,decision_c2\n";
        for (const auto& d : decide_all(items, c.cost, c.policy)) {
            audit += d.scored.alert_id + "," + std::to_string(d.label) + "," + format_double(d.scored.p_raw) + "," +
                     format_double(d.scored.p_cal) + "," + std::string(to_string(d.scored.band)) + "," +
                     cell(d.decisions[0]) + "," + cell(d.decisions[1]) + "," + cell(d.decisions[2]) + "\n";
        }
        write_file_atomic(c.out_dir / ("audit_" + name + ".csv"), audit);
    }
    write_file_atomic(c.out_dir / "results.csv", results);
    write_file_atomic(c.out_dir / "config_echo.json", config_to_json(c).dump(2) + "\n");
    return all;
}

std::vector<SweepResult> cmd_sweep_threshold(const RunConfig& c) {
    c.validate();
    std::vector<SweepResult> out;
    for (const auto& name : c.model_names()) {
        const auto items = model_scores(c, name, "test");
        std::vector<double> p;
        std::vector<int> y;
        for (const auto& it : items) {
            p.push_back(it.p_cal);
            y.push_back(it.label);
        }
        auto res = sweep_threshold(p, y, c.cost, c.sweep);
        std::string csv = csv_preamble(c) + "threshold,cost\n";
        for (const auto& pt : res.points) {
            csv += format_double(pt.threshold) + "," + format_double(pt.cost) + "\n";
        }
        csv += "# t_star=" + format_double(res.t_star) + " argmin=" + format_double(res.argmin_threshold) + "\n";
        write_file_atomic(c.out_dir / ("sweep_" + name + ".csv"), csv);
        out.push_back(std::move(res));
    }
    return out;
}

std::vector<CostRatioRow> cmd_sweep_costs(const RunConfig& c) {
    c.validate();
    std::vector<CostRatioRow> all;
    for (const auto& name : c.model_names()) {
        const auto items = model_scores(c, name, "test");
        const auto rows = sweep_cost_ratio(items, c.cost_ratios, c.policy);
        std::string csv = csv_preamble(c) + "ratio,condition,cost,t_star\n";
        for (const auto& r : rows) {
            csv += format_double(r.ratio) + "," + r.condition + "," + format_double(r.cost) + "," +
                   format_double(r.t_star) + "\n";
        }
        write_file_atomic(c.out_dir / ("cost_ratio_" + name + ".csv"), csv);
        all.insert(all.end(), rows.begin(), rows.end());
    }
    return all;
}

std::vector<ReliabilityTable> cmd_reliability(const RunConfig& c) {
    c.validate();
    std::vector<ReliabilityTable> out;
    std::string plots = "# reliability and cost curves; columns as in the CSV headers\n"
                        "set datafile separator ','\n"
                        "set key autotitle columnhead\n";
    for (const auto& name : c.model_names()) {
        const auto items = model_scores(c, name, c.reliability_split);
        for (bool calibrated : {false, true}) {
            const auto table = reliability(to_pairs(items, calibrated), c.reliability_bins);
            std::string csv = csv_preamble(c) + "bin_low,bin_high,mean_confidence,empirical_frequency,count\n";
            for (const auto& b : table.bins) {
                csv += format_double(b.bin_low) + "," + format_double(b.bin_high) + "," +
                       format_double(b.mean_confidence) + "," + format_double(b.empirical_frequency) + "," +
                       std::to_string(b.count) + "\n";
            }
            csv += "# ece=" + format_double(table.ece) + " n=" + std::to_string(table.n) + " split=" +
                   c.reliability_split + "\n";
            const auto file = "reliability_" + name + (calibrated ? "_calibrated" : "_raw") + ".csv";
            write_file_atomic(c.out_dir / file, csv);
            plots += "# " + file + ": plot '" + file + "' using 3:4 with linespoints, x with lines\n";
            out.push_back(table);
        }
        plots += "# sweep_" + name + ".csv: plot 'sweep_" + name + ".csv' using 1:2 with lines\n";
        plots += "# cost_ratio_" + name + ".csv: rows grouped by condition, plot ratio (1) against cost (3)\n";
    }
    write_file_atomic(c.out_dir / "plots.gp", plots);
    return out;
}

StudyConfig study_config(const RunConfig& c) {
    const auto names = c.model_names();
    if (std::find(names.begin(), names.end(), c.study.model) == names.end()) {
        throw std::invalid_argument("study.model '" + c.study.model + "' is not among the configured detectors");
    }
    if (c.study.model == "external") {
        throw std::invalid_argument("the study needs alert features; external scores carry none");
    }
    const auto detector = load_detector(model_path(c, c.study.model));
    auto opts = ingest_options(c);
    opts.keep_columns = feature_names_of(detector);
    const auto stream = ingest_csv(c.test_path, opts).stream;
    const auto items = model_scores(c, c.study.model, "test");
    StudyConfig sc;
    sc.feature_names = stream.feature_names();
    sc.alerts = select_study_alerts(stream, items, c.study.size, c.effective_study_seed(), c.cost, c.policy);
    sc.seed = c.effective_study_seed();
    sc.log_dir = c.study.log_dir.empty() ? c.out_dir / "study" : c.study.log_dir;
    sc.instructions = c.study.instructions;
    return sc;
}

void cmd_serve(const RunConfig& c) {
    c.validate();
    StudyService service(study_config(c));
    StudyServer server(service);
    std::cerr << "study service on http://" << c.study.host << ":" << c.study.port << " with "
              << service.trials_per_block() << " alerts per block\n";
    server.run(c.study.host, c.study.port);
}

StudyAnalysis cmd_analyze(const RunConfig& c) {
    c.validate();
    auto logs = c.study.logs;
    if (logs.empty()) {
        logs = (c.study.log_dir.empty() ? c.out_dir / "study" : c.study.log_dir) / "trials.jsonl";
    }
    std::ifstream f(logs, std::ios::binary);
    if (!f) {
        throw std::invalid_argument("cannot read trial log " + logs.string());
    }
    std::stringstream ss;
    ss << f.rdbuf();
    const auto records = parse_trial_log(ss.str());
    auto analysis = analyze_study(records, c.cost, c.study.size);
    auto doc = to_json(analysis);
    doc["cost"] = {{"c_fn", c.cost.c_fn}, {"c_fp", c.cost.c_fp}};
    doc["alerts_per_block"] = c.study.size;
    write_file_atomic(c.out_dir / "study_analysis.json", with_provenance(c, doc).dump(2) + "\n");
    return analysis;
}

void cmd_make_fixture(const RunConfig& c, std::size_t train_rows, std::size_t test_rows) {
    if (c.train_path.empty() || c.test_path.empty()) {
        throw std::invalid_argument("make-fixture: train_path and test_path must be set");
    }
    SyntheticOptions tr;
    tr.rows = train_rows;
    tr.seed = c.seed;
    tr.id_prefix = "train-";
    SyntheticOptions te;
    te.rows = test_rows;
    te.seed = c.seed + 1;
    te.id_prefix = "test-";
    write_file_atomic(c.train_path, synthetic_csv(tr));
    write_file_atomic(c.test_path, synthetic_csv(te));
}

}  // namespace triage
