#pragma once

#include <string>
#include <vector>

#include "mnn/strategies.hpp"

namespace mnn {

// 10000-sample training set (by default): x ~ U(0,1), y = sin(10*pi*x) + z,
// z ~ N(0, 0.2).
Dataset make_sine_dataset(int n, uint64_t seed);

// Class-balanced 28x28x3 parametric gratings, 10 classes.
Dataset make_synthetic_images(int n_per_class, uint64_t seed, int classes = 10);

struct AggregateRow {
    std::string strategy;
    int runs = 0;
    double min = 0, max = 0, median = 0, mean = 0, std_dev = 0;
};

// Sample statistics over the final test metric; std uses the n-1 denominator
// (0 for a single run).
AggregateRow aggregate(const std::string& strategy, const std::vector<double>& metrics);

// RunReport <-> JSON file under <dir>/<strategy>/<seed>.json
void save_report(const RunReport& report, const std::string& dir);
RunReport load_report(const std::string& path);
std::vector<RunReport> load_reports(const std::string& dir);

struct ExperimentOptions {
    Task task = Task::Sine;
    std::vector<Strategy> strategies{Strategy::Student, Strategy::Bo3, Strategy::OneModel};
    int runs = 50;
    uint64_t seed = 1;
    std::string out_dir = "runs";
    int total_epochs = 0;  // 0: task default
    bool verbose = true;
};

// Runs `runs` seeds per strategy, writing one report file per run.
// Returns all reports.
std::vector<RunReport> run_experiment(const ExperimentOptions& opts);

void write_aggregate_csv(const std::vector<AggregateRow>& rows, const std::string& path);
void write_boxplot_csv(const std::vector<RunReport>& reports, const std::string& path);
void write_curves_csv(const std::vector<RunReport>& reports, const std::string& path);
std::string format_aggregate_table(const std::vector<AggregateRow>& rows);

// Groups reports by strategy and aggregates the final test metric.
std::vector<AggregateRow> aggregate_reports(const std::vector<RunReport>& reports);

}  // namespace mnn
