#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mnn/harness.hpp"
#include "oracles.hpp"

using namespace mnn;
namespace fs = std::filesystem;

TEST_CASE("sine dataset shape, range, and determinism") {
    Dataset a = make_sine_dataset(500, 9);
    Dataset b = make_sine_dataset(500, 9);
    CHECK(a.inputs.shape() == std::vector<int>{500, 1});
    CHECK(a.inputs.data() == b.inputs.data());
    CHECK(a.targets.data() == b.targets.data());
    CHECK_FALSE(a.classification);

    double resid_ss = 0.0;
    for (int i = 0; i < 500; ++i) {
        const double x = a.inputs.data()[i];
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
        const double r = a.targets.data()[i] - std::sin(10.0 * M_PI * x);
        resid_ss += r * r;
    }
    // noise is N(0, 0.2): residual variance near 0.04
    CHECK(resid_ss / 500 == doctest::Approx(0.04).epsilon(0.3));

    Dataset c = make_sine_dataset(500, 10);
    CHECK(a.inputs.data() != c.inputs.data());
}

TEST_CASE("synthetic images are class balanced and separable-ish") {
    Dataset d = make_synthetic_images(4, 3);
    CHECK(d.inputs.shape() == std::vector<int>{40, 3, 28, 28});
    CHECK(d.classification);
    std::vector<int> counts(10, 0);
    for (int l : d.labels) ++counts[l];
    for (int c : counts) CHECK(c == 4);

    Dataset again = make_synthetic_images(4, 3);
    CHECK(d.inputs.data() == again.inputs.data());
}

TEST_CASE("aggregate hand statistics") {
    AggregateRow r = aggregate("s", {0.1, 0.2, 0.3});
    CHECK(r.runs == 3);
    CHECK(r.min == doctest::Approx(0.1));
    CHECK(r.max == doctest::Approx(0.3));
    CHECK(r.median == doctest::Approx(0.2));
    CHECK(r.mean == doctest::Approx(0.2));
    CHECK(r.std_dev == doctest::Approx(0.1));

    AggregateRow one = aggregate("s", {0.42});
    CHECK(one.min == one.max);
    CHECK(one.max == one.median);
    CHECK(one.median == one.mean);
    CHECK(one.std_dev == 0.0);

    CHECK_THROWS_AS(aggregate("s", {}), ContractError);
}

TEST_CASE("aggregate matches the statistics oracle on 50 samples") {
    Rng rng(33);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> metrics;
    for (int i = 0; i < 50; ++i) metrics.push_back(u(rng));
    AggregateRow r = aggregate("s", metrics);
    oracle::Stats ref = oracle::reference_stats(metrics);
    CHECK(r.min == doctest::Approx(ref.min).epsilon(1e-12));
    CHECK(r.max == doctest::Approx(ref.max).epsilon(1e-12));
    CHECK(r.median == doctest::Approx(ref.median).epsilon(1e-12));
    CHECK(r.mean == doctest::Approx(ref.mean).epsilon(1e-12));
    CHECK(r.std_dev == doctest::Approx(ref.std_dev).epsilon(1e-12));
    CHECK(r.min <= r.median);
    CHECK(r.median <= r.max);
}

TEST_CASE("report save/load round trip") {
    const std::string dir = "report_roundtrip_test";
    RunReport r;
    r.strategy = "student";
    r.seed = 123;
    r.train_loss = {0.5, 0.25, 0.125};
    r.phase_boundaries = {1, 2, 3};
    r.phase_names = {"a", "b", "c"};
    r.final_test_metric = 0.077;
    r.wall_seconds = 1.5;
    r.epochs_consumed = 3;
    r.curve = {0.1, -0.1};
    save_report(r, dir);

    RunReport back = load_report(dir + "/student/123.json");
    CHECK(back.strategy == r.strategy);
    CHECK(back.seed == r.seed);
    CHECK(back.train_loss == r.train_loss);
    CHECK(back.phase_boundaries == r.phase_boundaries);
    CHECK(back.phase_names == r.phase_names);
    CHECK(back.final_test_metric == r.final_test_metric);
    CHECK(back.epochs_consumed == r.epochs_consumed);
    CHECK(back.curve == r.curve);

    r.strategy = "bo3";
    r.seed = 124;
    save_report(r, dir);
    auto all = load_reports(dir);
    CHECK(all.size() == 2);

    std::ofstream(dir + "/student/bad.json") << "{corrupt";
    CHECK_THROWS_AS(load_reports(dir), IoError);
    CHECK_THROWS_AS(load_reports("no_such_dir_zz"), IoError);
    fs::remove_all(dir);
}

TEST_CASE("aggregate_reports groups by strategy") {
    RunReport a, b, c;
    a.strategy = "student";
    a.final_test_metric = 0.1;
    b.strategy = "student";
    b.final_test_metric = 0.3;
    c.strategy = "one_model";
    c.final_test_metric = 0.25;
    auto rows = aggregate_reports({a, b, c});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].strategy == "student");
    CHECK(rows[0].runs == 2);
    CHECK(rows[0].mean == doctest::Approx(0.2));
    CHECK(rows[1].strategy == "one_model");
    CHECK(rows[1].runs == 1);
}

TEST_CASE("csv and table emitters") {
    const std::string dir = "csv_emit_test";
    fs::create_directories(dir);
    std::vector<RunReport> reports;
    for (int i = 0; i < 4; ++i) {
        RunReport r;
        r.strategy = i % 2 ? "bo3" : "student";
        r.seed = i;
        r.final_test_metric = 0.1 * (i + 1);
        r.curve = {0.5, -0.5};
        reports.push_back(r);
    }
    auto rows = aggregate_reports(reports);
    write_aggregate_csv(rows, dir + "/aggregate.csv");
    write_boxplot_csv(reports, dir + "/boxplot.csv");
    write_curves_csv(reports, dir + "/curves.csv");

    auto first_line = [](const std::string& path) {
        std::ifstream in(path);
        std::string line;
        std::getline(in, line);
        return line;
    };
    CHECK(first_line(dir + "/aggregate.csv") == "strategy,runs,min,max,median,mean,std");
    CHECK(first_line(dir + "/boxplot.csv") == "strategy,q0,q25,q50,q75,q100,mean");
    CHECK(first_line(dir + "/curves.csv") == "strategy,seed,x,prediction");

    std::string table = format_aggregate_table(rows);
    CHECK(table.find("student") != std::string::npos);
    CHECK(table.find("bo3") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("experiment driver writes one report per run") {
    const std::string dir = "experiment_smoke_test";
    ExperimentOptions opts;
    opts.task = Task::Sine;
    opts.strategies = {Strategy::OneModel};
    opts.runs = 2;
    opts.seed = 9;
    opts.out_dir = dir;
    opts.total_epochs = 2;
    opts.verbose = false;
    auto reports = run_experiment(opts);
    REQUIRE(reports.size() == 2);
    for (const auto& r : reports) {
        CHECK(r.epochs_consumed == 2);
        CHECK(std::isfinite(r.final_test_metric));
    }
    CHECK(reports[0].seed != reports[1].seed);
    CHECK(load_reports(dir).size() == 2);
    fs::remove_all(dir);
}

TEST_CASE("derived seeds separate streams") {
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2) != derive_seed(2, 2));
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
}
