#include <fstream>
#include <stdexcept>

#include "triage/detectors.hpp"

namespace triage {

namespace {

constexpr int kModelFormatVersion = 1;

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

nlohmann::json tree_to_json(const DecisionTree& t) {
    nlohmann::json feature = nlohmann::json::array();
    nlohmann::json threshold = nlohmann::json::array();
    nlohmann::json left = nlohmann::json::array();
    nlohmann::json right = nlohmann::json::array();
    nlohmann::json value = nlohmann::json::array();
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& n : t.nodes) {
        feature.push_back(n.feature);
        threshold.push_back(n.threshold);
        left.push_back(n.left);
        right.push_back(n.right);
        value.push_back(n.value);
        samples.push_back(n.samples);
    }
    return {{"feature", feature}, {"threshold", threshold}, {"left", left},
            {"right", right},     {"value", value},         {"samples", samples}};
}

DecisionTree tree_from_json(const nlohmann::json& j) {
    DecisionTree t;
    const auto& f = j.at("feature");
    t.nodes.resize(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) {
        auto& n = t.nodes[i];
        n.feature = f[i].get<int>();
        n.threshold = j.at("threshold")[i].get<double>();
        n.left = j.at("left")[i].get<int>();
        n.right = j.at("right")[i].get<int>();
        n.value = j.at("value")[i].get<double>();
        n.samples = j.at("samples")[i].get<int>();
        const auto count = static_cast<int>(f.size());
        if (n.feature >= 0 && (n.left <= 0 || n.left >= count || n.right <= 0 || n.right >= count)) {
            throw std::invalid_argument("model document: tree node has invalid children");
        }
    }
    if (t.nodes.empty()) {
        throw std::invalid_argument("model document: empty tree");
    }
    return t;
}

}  // namespace

std::string detector_kind(const Detector& d) {
    return std::holds_alternative<LogisticModel>(d) ? "logreg" : "forest";
}

std::vector<IdScore> predict(const Detector& model, const AlertStream& stream) {
    const auto dim = std::visit(
        overloaded{[](const LogisticModel& m) { return m.weights.size(); },
                   [](const ForestModel& m) { return m.n_features; }},
        model);
    if (dim != stream.dim()) {
        throw std::invalid_argument("predict: model expects " + std::to_string(dim) + " features, stream has " +
                                    std::to_string(stream.dim()));
    }
    std::vector<IdScore> out;
    out.reserve(stream.size());
    for (const auto& a : stream.alerts()) {
        const double p = std::visit([&](const auto& m) { return m.predict_one(a.features); }, model);
        out.push_back({a.id, p});
    }
    return out;
}

nlohmann::json detector_to_json(const Detector& d) {
    return std::visit(
        overloaded{
            [](const LogisticModel& m) -> nlohmann::json {
                return {{"format", "triage-model"},
                        {"version", kModelFormatVersion},
                        {"kind", "logreg"},
                        {"feature_names", m.feature_names},
                        {"standardizer", {{"means", m.standardizer.means}, {"stds", m.standardizer.stds}}},
                        {"weights", m.weights},
                        {"bias", m.bias},
                        {"config",
                         {{"l2_lambda", m.config.l2_lambda},
                          {"max_iters", m.config.max_iters},
                          {"tol", m.config.tol},
                          {"seed", m.config.seed}}}};
            },
            [](const ForestModel& m) -> nlohmann::json {
                nlohmann::json trees = nlohmann::json::array();
                for (const auto& t : m.trees) {
                    trees.push_back(tree_to_json(t));
                }
                return {{"format", "triage-model"},
                        {"version", kModelFormatVersion},
                        {"kind", "forest"},
                        {"feature_names", m.feature_names},
                        {"n_features", m.n_features},
                        {"config",
                         {{"n_trees", m.config.n_trees},
                          {"max_depth", m.config.max_depth},
                          {"min_samples_leaf", m.config.min_samples_leaf},
                          {"features_per_split", m.config.features_per_split},
                          {"seed", m.config.seed}}},
                        {"trees", trees}};
            }},
        d);
}

Detector detector_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "triage-model") {
        throw std::invalid_argument("not a model document");
    }
    if (j.value("version", 0) != kModelFormatVersion) {
        throw std::invalid_argument("unsupported model document version");
    }
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "logreg") {
        LogisticModel m;
        m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
        m.standardizer.means = j.at("standardizer").at("means").get<std::vector<double>>();
        m.standardizer.stds = j.at("standardizer").at("stds").get<std::vector<double>>();
        m.weights = j.at("weights").get<std::vector<double>>();
        m.bias = j.at("bias").get<double>();
        const auto& c = j.at("config");
        m.config.l2_lambda = c.at("l2_lambda").get<double>();
        m.config.max_iters = c.at("max_iters").get<int>();
        m.config.tol = c.at("tol").get<double>();
        m.config.seed = c.at("seed").get<std::uint64_t>();
        if (m.weights.size() != m.standardizer.means.size() || m.weights.size() != m.standardizer.stds.size()) {
            throw std::invalid_argument("model document: inconsistent dimensions");
        }
        return m;
    }
    if (kind == "forest") {
        ForestModel m;
        m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
        m.n_features = j.at("n_features").get<std::size_t>();
        const auto& c = j.at("config");
        m.config.n_trees = c.at("n_trees").get<int>();
        m.config.max_depth = c.at("max_depth").get<int>();
        m.config.min_samples_leaf = c.at("min_samples_leaf").get<int>();
        m.config.features_per_split = c.at("features_per_split").get<int>();
        m.config.seed = c.at("seed").get<std::uint64_t>();
        for (const auto& t : j.at("trees")) {
            m.trees.push_back(tree_from_json(t));
        }
        if (m.trees.empty()) {
            throw std::invalid_argument("model document: forest has no trees");
        }
        return m;
    }
    throw std::invalid_argument("model document: unknown kind '" + kind + "'");
}

void save_detector(const Detector& d, const std::filesystem::path& path) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp);
        if (!out) {
            throw std::runtime_error("cannot write " + tmp.string());
        }
        out << detector_to_json(d).dump(1) << "\n";
    }
    std::filesystem::rename(tmp, path);
}

Detector load_detector(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("missing model artifact: " + path.string());
    }
    return detector_from_json(nlohmann::json::parse(in));
}

}  // namespace triage
