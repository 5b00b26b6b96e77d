#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "triage/detectors.hpp"

using namespace triage;

namespace {

AlertStream linear_data(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<Alert> alerts;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = g(rng);
        const double b = g(rng);
        const double c = 50.0 + 10.0 * g(rng);
        const double z = 2.0 * a - 1.0 * b + 0.3 * g(rng);
        alerts.push_back({"r" + std::to_string(i), {a, b, c}, z > 0.0 ? 1 : 0});
    }
    return AlertStream(std::move(alerts), {"a", "b", "c"});
}

AlertStream xor_data(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<Alert> alerts;
    for (std::size_t i = 0; i < n; ++i) {
        const double a = u(rng);
        const double b = u(rng);
        alerts.push_back({"x" + std::to_string(i), {a, b}, (a > 0.0) != (b > 0.0) ? 1 : 0});
    }
    return AlertStream(std::move(alerts), {"a", "b"});
}

double accuracy(const Detector& d, const AlertStream& s) {
    const auto p = predict(d, s);
    double hits = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        hits += ((p[i].score >= 0.5) == (s[i].label == 1)) ? 1.0 : 0.0;
    }
    return hits / static_cast<double>(s.size());
}

}  // namespace

TEST_CASE("logistic gradient matches finite differences") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<std::vector<double>> rows(30, std::vector<double>(4));
    std::vector<int> labels(30);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (auto& v : rows[i]) {
            v = g(rng);
        }
        labels[i] = g(rng) > 0.0 ? 1 : 0;
    }
    const double lambda = 0.05;
    std::vector<double> theta = {0.3, -0.7, 1.1, 0.2, -0.4};  // weights then bias
    auto loss = [&](const std::vector<double>& t) {
        std::vector<double> gw;
        double gb = 0.0;
        return logistic_loss_and_gradient(rows, labels, std::span(t).first(4), t[4], lambda, gw, gb);
    };
    const auto numeric = oracle::numeric_gradient(loss, theta);
    std::vector<double> gw;
    double gb = 0.0;
    (void)logistic_loss_and_gradient(rows, labels, std::span(theta).first(4), theta[4], lambda, gw, gb);
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(gw[k] == doctest::Approx(numeric[k]).epsilon(1e-6));
    }
    CHECK(gb == doctest::Approx(numeric[4]).epsilon(1e-6));
}

TEST_CASE("logistic regression fits a linear boundary and never increases the loss") {
    const auto train = linear_data(800, 1);
    const auto test = linear_data(400, 2);
    const auto fit = train_logreg(train);
    CHECK(fit.report.converged);
    for (std::size_t i = 1; i < fit.report.loss_history.size(); ++i) {
        CHECK(fit.report.loss_history[i] <= fit.report.loss_history[i - 1]);
    }
    CHECK(accuracy(fit.model, test) > 0.93);
    // weight on the noise column stays small relative to the signal columns
    CHECK(std::abs(fit.model.weights[2]) < 0.2 * std::abs(fit.model.weights[0]));
    CHECK(fit.model.weights[0] > 0.0);
    CHECK(fit.model.weights[1] < 0.0);
}

TEST_CASE("logistic regression rejects single-class data") {
    const AlertStream s({{"a", {1.0}, 1}, {"b", {2.0}, 1}}, {"x"});
    CHECK_THROWS_AS((void)train_logreg(s), std::invalid_argument);
}

TEST_CASE("constant columns are standardized to zero, not NaN") {
    const AlertStream s({{"a", {1.0, 5.0}, 0}, {"b", {2.0, 5.0}, 1}, {"c", {3.0, 5.0}, 1}}, {"x", "k"});
    const auto st = fit_standardizer(s);
    CHECK(st.stds[1] == 1.0);
    const auto t = st.transform(s[0].features);
    CHECK(t[1] == 0.0);
}

TEST_CASE("forest learns XOR where a linear model cannot") {
    const auto train = xor_data(1500, 5);
    const auto test = xor_data(600, 6);
    ForestConfig fc;
    fc.n_trees = 30;
    fc.min_samples_leaf = 5;
    const auto forest = train_forest(train, fc);
    const auto lr = train_logreg(train).model;
    CHECK(accuracy(forest, test) > 0.9);
    CHECK(accuracy(lr, test) < 0.65);
}

TEST_CASE("forest is deterministic for a seed and independent of thread count") {
    const auto train = xor_data(400, 9);
    ForestConfig a;
    a.n_trees = 12;
    a.threads = 1;
    ForestConfig b = a;
    b.threads = 4;
    const auto fa = train_forest(train, a);
    const auto fb = train_forest(train, b);
    const auto pa = predict(fa, train);
    const auto pb = predict(fb, train);
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].score == pb[i].score);
    }
    ForestConfig c = a;
    c.seed = 43;
    const auto pc = predict(train_forest(train, c), train);
    bool differs = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        differs = differs || pa[i].score != pc[i].score;
    }
    CHECK(differs);
}

TEST_CASE("trees respect depth and leaf-size limits") {
    const auto train = xor_data(500, 11);
    ForestConfig fc;
    fc.n_trees = 5;
    fc.max_depth = 3;
    fc.min_samples_leaf = 20;
    const auto f = train_forest(train, fc);
    for (const auto& t : f.trees) {
        CHECK(t.depth() <= 3);
        for (const auto& n : t.nodes) {
            if (n.feature < 0) {
                CHECK(n.samples >= 20);
                CHECK(n.value >= 0.0);
                CHECK(n.value <= 1.0);
            }
        }
    }
}

TEST_CASE("bootstrap samples are seeded draws with replacement") {
    const auto a = bootstrap_sample(100, 7);
    const auto b = bootstrap_sample(100, 7);
    CHECK(a == b);
    CHECK(a.size() == 100);
    for (auto i : a) {
        CHECK(i < 100);
    }
    std::vector<int> seen(100, 0);
    for (auto i : a) {
        seen[i] = 1;
    }
    // roughly 1 - 1/e of the rows appear
    const int distinct = std::accumulate(seen.begin(), seen.end(), 0);
    CHECK(distinct > 50);
    CHECK(distinct < 80);
}

TEST_CASE("a single split on separable one-dimensional data lands between the classes") {
    std::vector<Alert> alerts;
    for (int i = 0; i < 40; ++i) {
        alerts.push_back({"p" + std::to_string(i), {static_cast<double>(i)}, i >= 20 ? 1 : 0});
    }
    const AlertStream s(std::move(alerts), {"x"});
    ForestConfig fc;
    fc.n_trees = 1;
    fc.max_depth = 1;
    fc.min_samples_leaf = 1;
    const auto f = train_forest(s, fc);
    const auto& root = f.trees[0].nodes[0];
    REQUIRE(root.feature == 0);
    // tree 0 sees the bootstrap draw for seed + 0; the best cut is midway
    // between the largest sampled negative and the smallest sampled positive
    double max_neg = -1.0;
    double min_pos = 100.0;
    for (auto i : bootstrap_sample(40, fc.seed)) {
        if (i < 20) {
            max_neg = std::max(max_neg, static_cast<double>(i));
        } else {
            min_pos = std::min(min_pos, static_cast<double>(i));
        }
    }
    CHECK(root.threshold == 0.5 * (max_neg + min_pos));
    CHECK(f.predict_one(std::vector<double>{0.0}) == 0.0);
    CHECK(f.predict_one(std::vector<double>{39.0}) == 1.0);
}

TEST_CASE("models survive a save/load round trip") {
    const auto train = linear_data(200, 4);
    ForestConfig fc;
    fc.n_trees = 5;
    const std::vector<Detector> models = {train_logreg(train).model, train_forest(train, fc)};
    const auto dir = std::filesystem::temp_directory_path() / "triage_detector_io";
    std::filesystem::create_directories(dir);
    for (const auto& m : models) {
        const auto path = dir / (detector_kind(m) + ".json");
        save_detector(m, path);
        const auto back = load_detector(path);
        CHECK(detector_kind(back) == detector_kind(m));
        const auto p1 = predict(m, train);
        const auto p2 = predict(back, train);
        for (std::size_t i = 0; i < p1.size(); ++i) {
            CHECK(p1[i].score == p2[i].score);
        }
    }
    std::filesystem::remove_all(dir);
    CHECK_THROWS((void)load_detector(dir / "missing.json"));
    CHECK_THROWS((void)detector_from_json(nlohmann::json{{"format", "other"}}));
}

TEST_CASE("prediction rejects a stream of the wrong width") {
    const auto train = linear_data(100, 4);
    const auto model = train_logreg(train).model;
    const AlertStream narrow({{"a", {1.0}, 0}}, {"x"});
    CHECK_THROWS_AS((void)predict(model, narrow), std::invalid_argument);
}
