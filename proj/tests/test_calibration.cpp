#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "triage/calibration.hpp"

using namespace triage;

TEST_CASE("PAVA equals brute-force monotone least squares") {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> len(1, 8);
    std::uniform_int_distribution<int> val(0, 9);
    std::uniform_int_distribution<int> wt(1, 4);
    for (int rep = 0; rep < 200; ++rep) {
        const int n = len(rng);
        std::vector<double> y(static_cast<std::size_t>(n));
        std::vector<double> w(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            y[static_cast<std::size_t>(i)] = val(rng);
            w[static_cast<std::size_t>(i)] = wt(rng);
        }
        const auto expect = oracle::monotone_lsq(y, w);
        const auto blocks = pava(y, w);
        std::vector<double> got(y.size());
        for (const auto& b : blocks) {
            for (auto k = b.first; k < b.last; ++k) {
                got[k] = b.value;
            }
        }
        CHECK(got == expect);
    }
}

TEST_CASE("PAVA pools a simple violation") {
    const std::vector<double> y = {1.0, 3.0, 2.0, 4.0};
    const std::vector<double> w = {1.0, 1.0, 1.0, 1.0};
    const auto b = pava(y, w);
    REQUIRE(b.size() == 3);
    CHECK(b[1].value == 2.5);
    CHECK(b[1].first == 1);
    CHECK(b[1].last == 3);
    CHECK_THROWS((void)pava(y, std::vector<double>{1.0, 0.0, 1.0, 1.0}));
}

TEST_CASE("isotonic fit is monotone, pools ties and interpolates") {
    const std::vector<ScoreLabel> pairs = {{0.1, 0}, {0.2, 1}, {0.2, 0}, {0.3, 0}, {0.8, 1}, {0.9, 1}};
    const auto fit = fit_isotonic(pairs);
    // groups 0.1:0 | 0.2:0.5 (weight 2) | 0.3:0 | 0.8:1 | 0.9:1
    // 0.2 and 0.3 pool to 1/3; 0.8 and 0.9 pool to 1
    CHECK(fit.fitted[0] == 0.0);
    CHECK(fit.fitted[1] == doctest::Approx(1.0 / 3.0));
    CHECK(fit.fitted[2] == fit.fitted[1]);
    CHECK(fit.fitted[3] == doctest::Approx(1.0 / 3.0));
    CHECK(fit.fitted[4] == 1.0);
    const auto& cal = fit.calibrator;
    CHECK(cal(0.0) == 0.0);
    CHECK(cal(1.0) == 1.0);
    CHECK(cal(0.25) == doctest::Approx(1.0 / 3.0));
    // halfway between the knots (0.3, 1/3) and (0.8, 1)
    CHECK(cal(0.55) == doctest::Approx(2.0 / 3.0));
    double prev = -1.0;
    for (int k = 0; k <= 100; ++k) {
        const double v = cal(k / 100.0);
        CHECK(v >= prev);
        prev = v;
    }
    CHECK_THROWS((void)fit_isotonic(std::vector<ScoreLabel>{}));
    CHECK_THROWS((void)fit_isotonic(std::vector<ScoreLabel>{{0.5, 1}}));
}

TEST_CASE("Platt reaches the grid-search optimum of its objective") {
    std::mt19937_64 rng(23);
    std::uniform_int_distribution<int> len(6, 30);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 20; ++rep) {
        const int n = len(rng);
        std::vector<double> s;
        std::vector<int> y;
        std::vector<ScoreLabel> pairs;
        while (true) {
            s.clear();
            y.clear();
            const double bend = 0.5 + 2.0 * u(rng);
            for (int i = 0; i < n; ++i) {
                const double v = u(rng);
                s.push_back(v);
                y.push_back(u(rng) < std::pow(v, bend) ? 1 : 0);
            }
            const int pos = std::accumulate(y.begin(), y.end(), 0);
            if (pos > 0 && pos < n) {
                break;
            }
        }
        for (int i = 0; i < n; ++i) {
            pairs.push_back({s[static_cast<std::size_t>(i)], y[static_cast<std::size_t>(i)]});
        }
        const auto fit = fit_platt(pairs);
        const auto grid = oracle::platt_grid(s, y);
        CHECK(fit.converged);
        CHECK(std::abs(fit.nll - grid.nll) <= 1e-6);
        CHECK(std::abs(platt_nll(pairs, fit.calibrator.a, fit.calibrator.b) -
                       oracle::platt_objective(s, y, fit.calibrator.a, fit.calibrator.b)) < 1e-9);
    }
}

TEST_CASE("Platt map conventions") {
    const PlattCalibrator identity{-1.0, 0.0};
    for (double s : {0.01, 0.2, 0.5, 0.77, 0.99}) {
        CHECK(identity(s) == doctest::Approx(s).epsilon(1e-12));
    }
    CHECK(std::isfinite(clamped_logit(0.0)));
    CHECK(std::isfinite(clamped_logit(1.0)));
    const PlattCalibrator flat{0.0, 0.0};
    CHECK(flat(0.9) == 0.5);
    CHECK_THROWS((void)fit_platt(std::vector<ScoreLabel>{{0.1, 0}, {0.2, 0}, {0.3, 0}, {0.4, 0}}));
    CHECK_THROWS((void)fit_platt(std::vector<ScoreLabel>{{0.1, 0}, {0.2, 1}}));
}

TEST_CASE("calibrators serialize and reject out-of-range scores") {
    const Calibrator p = PlattCalibrator{-1.3, 0.2};
    const Calibrator i = IsotonicCalibrator{{0.1, 0.5, 0.9}, {0.0, 0.4, 1.0}};
    for (const auto& c : {p, i}) {
        const auto back = calibrator_from_json(calibrator_to_json(c));
        CHECK(calibrator_kind(back) == calibrator_kind(c));
        const std::vector<double> s = {0.0, 0.3, 0.7, 1.0};
        CHECK(calibrate(back, s) == calibrate(c, s));
        CHECK_THROWS((void)calibrate(c, std::vector<double>{1.5}));
    }
}

TEST_CASE("reliability bins and ECE by hand") {
    // bin 0: scores 0.05, 0.05 labels 0,1 -> conf 0.05 freq 0.5
    // bin 9: scores 0.95, 1.0 labels 1,1 -> conf 0.975 freq 1
    const std::vector<ScoreLabel> pairs = {{0.05, 0}, {0.05, 1}, {0.95, 1}, {1.0, 1}};
    const auto t = reliability(pairs, 10);
    REQUIRE(t.bins.size() == 10);
    CHECK(t.n == 4);
    CHECK(t.bins[0].count == 2);
    CHECK(t.bins[0].mean_confidence == doctest::Approx(0.05));
    CHECK(t.bins[0].empirical_frequency == 0.5);
    CHECK(t.bins[9].count == 2);
    CHECK(t.bins[9].mean_confidence == doctest::Approx(0.975));
    CHECK(t.bins[5].count == 0);
    CHECK(t.bins[3].bin_low == doctest::Approx(0.3));
    CHECK(t.ece == doctest::Approx(0.5 * 0.45 + 0.5 * 0.025));
}

TEST_CASE("isotonic never worsens in-sample ECE") {
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<ScoreLabel> pairs;
    for (int i = 0; i < 2000; ++i) {
        const double s = u(rng);
        pairs.push_back({s, u(rng) < s * s ? 1 : 0});
    }
    const auto fit = fit_isotonic(pairs);
    std::vector<ScoreLabel> cal;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        cal.push_back({fit.fitted[i], pairs[i].label});
    }
    CHECK(reliability(cal).ece <= reliability(pairs).ece);
}
