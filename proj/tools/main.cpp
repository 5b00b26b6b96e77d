#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "triage/pipeline.hpp"

namespace {

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    bool deterministic = false;
    std::optional<std::string> train;
    std::optional<std::string> test;
    std::optional<std::string> detector;
    std::optional<std::string> calibrator;
    std::optional<double> c_fn;
    std::optional<double> c_fp;
    std::optional<int> trees;
    std::optional<int> threads;
    std::optional<std::string> logs;
    std::optional<std::string> host;
    std::optional<int> port;
    std::optional<std::size_t> study_size;
};

triage::RunConfig resolve(const Overrides& o) {
    auto c = o.config.empty() ? triage::RunConfig{} : triage::load_config(o.config);
    if (o.seed) {
        const bool forest_follows = c.forest.seed == c.seed;
        const bool logreg_follows = c.logreg.seed == c.seed;
        c.seed = *o.seed;
        if (forest_follows) {
            c.forest.seed = c.seed;
        }
        if (logreg_follows) {
            c.logreg.seed = c.seed;
        }
    }
    if (o.out_dir) c.out_dir = *o.out_dir;
    if (o.deterministic) c.deterministic = true;
    if (o.train) c.train_path = *o.train;
    if (o.test) c.test_path = *o.test;
    if (o.detector) c.detector = *o.detector;
    if (o.calibrator) c.calibrator = *o.calibrator;
    if (o.c_fn || o.c_fp) c.cost = triage::CostModel(o.c_fn.value_or(c.cost.c_fn), o.c_fp.value_or(c.cost.c_fp));
    if (o.trees) c.forest.n_trees = *o.trees;
    if (o.threads) c.forest.threads = *o.threads;
    if (o.logs) c.study.logs = *o.logs;
    if (o.host) c.study.host = *o.host;
    if (o.port) c.study.port = *o.port;
    if (o.study_size) c.study.size = *o.study_size;
    c.validate();
    return c;
}

void print_outcomes(const std::vector<triage::TriageOutcome>& outcomes) {
    std::cout << "model,condition,fn,fp,tn,tp,cost\n";
    for (const auto& o : outcomes) {
        std::cout << o.model_name << ',' << o.condition << ',' << o.fn << ',' << o.fp << ',' << o.tn << ','
                  << o.tp << ',' << triage::format_double(o.cost) << '\n';
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"triage: calibrated, cost-aware alert triage"};
    app.require_subcommand(1);
    Overrides o;
    app.add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--seed", o.seed, "master seed");
    app.add_option("--out-dir", o.out_dir, "artifact directory");
    app.add_flag("--deterministic", o.deterministic, "omit timestamp lines from outputs");
    app.add_option("--train", o.train, "training CSV");
    app.add_option("--test", o.test, "test CSV");
    app.add_option("--detector", o.detector, "logreg | forest | both | external_scores");
    app.add_option("--calibrator", o.calibrator, "auto | platt | isotonic");
    app.add_option("--c-fn", o.c_fn, "false-negative cost");
    app.add_option("--c-fp", o.c_fp, "false-positive cost");
    app.add_option("--trees", o.trees, "random-forest size");
    app.add_option("--threads", o.threads, "random-forest training threads");

    auto* train = app.add_subcommand("train", "fit detectors on the training split");
    auto* calibrate = app.add_subcommand("calibrate", "fit calibrators on the held-out calibration split");
    auto* simulate = app.add_subcommand("simulate", "triage outcomes under C0, C1, C2");
    auto* sweep = app.add_subcommand("sweep-threshold", "cost against decision threshold");
    auto* costs = app.add_subcommand("sweep-costs", "outcomes across false-negative cost ratios");
    auto* rel = app.add_subcommand("reliability", "reliability tables before and after calibration");
    auto* serve = app.add_subcommand("serve", "run the study HTTP service");
    auto* analyze = app.add_subcommand("analyze-study", "analyze a study trial log");
    auto* all = app.add_subcommand("all", "train, calibrate, simulate, sweeps and reliability in one go");
    auto* fixture = app.add_subcommand("make-fixture", "write a seeded synthetic train/test pair");

    serve->add_option("--host", o.host);
    serve->add_option("--port", o.port);
    serve->add_option("--study-size", o.study_size, "alerts per block");
    analyze->add_option("--logs", o.logs, "trials.jsonl to analyze");
    analyze->add_option("--study-size", o.study_size, "alerts per block");
    std::size_t train_rows = 3000;
    std::size_t test_rows = 5000;
    fixture->add_option("--train-rows", train_rows);
    fixture->add_option("--test-rows", test_rows);

    CLI11_PARSE(app, argc, argv);

    try {
        const auto c = resolve(o);
        if (train->parsed() || all->parsed()) {
            const auto s = triage::cmd_train(c);
            std::cerr << "trained " << s.models.size() << " model(s) on " << s.split.fit_ids.size()
                      << " alerts; " << s.split.calibration_ids.size() << " held out for calibration\n";
        }
        if (calibrate->parsed() || all->parsed()) {
            for (const auto& p : triage::cmd_calibrate(c)) {
                std::cerr << "wrote " << p << "\n";
            }
        }
        if (simulate->parsed() || all->parsed()) {
            print_outcomes(triage::cmd_simulate(c));
        }
        if (sweep->parsed() || all->parsed()) {
            const auto names = c.model_names();
            const auto res = triage::cmd_sweep_threshold(c);
            for (std::size_t i = 0; i < res.size(); ++i) {
                std::cout << names[i] << ": t*=" << res[i].t_star << " argmin=" << res[i].argmin_threshold
                          << " min_cost=" << res[i].min_cost << "\n";
            }
        }
        if (costs->parsed() || all->parsed()) {
            (void)triage::cmd_sweep_costs(c);
        }
        if (rel->parsed() || all->parsed()) {
            const auto names = c.model_names();
            const auto tables = triage::cmd_reliability(c);
            for (std::size_t i = 0; i < tables.size(); ++i) {
                std::cout << names[i / 2] << (i % 2 == 0 ? " raw" : " calibrated") << " ece=" << tables[i].ece
                          << "\n";
            }
        }
        if (serve->parsed()) {
            triage::cmd_serve(c);
        }
        if (analyze->parsed()) {
            std::cout << triage::to_json(triage::cmd_analyze(c)).dump(2) << "\n";
        }
        if (fixture->parsed()) {
            triage::cmd_make_fixture(c, train_rows, test_rows);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
