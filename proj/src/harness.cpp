#include "mnn/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace mnn {

namespace fs = std::filesystem;
using nlohmann::json;

Dataset make_sine_dataset(int n, uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> ux(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.2);
    Dataset d;
    d.inputs = Tensor::zeros({n, 1});
    d.targets = Tensor::zeros({n, 1});
    for (int i = 0; i < n; ++i) {
        const double x = ux(rng);
        d.inputs.data()[i] = x;
        d.targets.data()[i] = std::sin(10.0 * M_PI * x) + noise(rng);
    }
    return d;
}

Dataset make_synthetic_images(int n_per_class, uint64_t seed, int classes) {
    Rng rng(seed);
    std::uniform_real_distribution<double> uphase(0.0, 2.0 * M_PI);
    std::normal_distribution<double> noise(0.0, 0.25);
    const int n = n_per_class * classes;
    Dataset d;
    d.classification = true;
    d.inputs = Tensor::zeros({n, 3, 28, 28});
    d.labels.resize(n);
    int idx = 0;
    for (int c = 0; c < classes; ++c) {
        const double theta = M_PI * c / classes;
        const double freq = 3.0 + (c % 3);
        const double dx = std::cos(theta), dy = std::sin(theta);
        // per-class channel mixture
        const double col[3] = {0.4 + 0.6 * ((c * 3) % 7) / 6.0,
                               0.4 + 0.6 * ((c * 5 + 2) % 7) / 6.0,
                               0.4 + 0.6 * ((c * 2 + 4) % 7) / 6.0};
        for (int s = 0; s < n_per_class; ++s, ++idx) {
            const double phase = uphase(rng);
            d.labels[idx] = c;
            double* img = d.inputs.data().data() + static_cast<size_t>(idx) * 3 * 28 * 28;
            for (int y = 0; y < 28; ++y)
                for (int x = 0; x < 28; ++x) {
                    const double g =
                        std::sin(2.0 * M_PI * freq * (x * dx + y * dy) / 28.0 + phase);
                    for (int ch = 0; ch < 3; ++ch)
                        img[(static_cast<size_t>(ch) * 28 + y) * 28 + x] =
                            col[ch] * g + noise(rng);
                }
        }
    }
    return d;
}

AggregateRow aggregate(const std::string& strategy, const std::vector<double>& metrics) {
    if (metrics.empty()) throw ContractError("aggregate: no metrics");
    AggregateRow row;
    row.strategy = strategy;
    row.runs = static_cast<int>(metrics.size());
    std::vector<double> sorted = metrics;
    std::sort(sorted.begin(), sorted.end());
    row.min = sorted.front();
    row.max = sorted.back();
    const size_t n = sorted.size();
    row.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    row.mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
    if (n > 1) {
        double ss = 0.0;
        for (double m : sorted) ss += (m - row.mean) * (m - row.mean);
        row.std_dev = std::sqrt(ss / (n - 1));
    }
    return row;
}

void save_report(const RunReport& report, const std::string& dir) {
    json j;
    j["strategy"] = report.strategy;
    j["seed"] = report.seed;
    j["train_loss"] = report.train_loss;
    j["phase_boundaries"] = report.phase_boundaries;
    j["phase_names"] = report.phase_names;
    j["final_test_metric"] = report.final_test_metric;
    j["wall_seconds"] = report.wall_seconds;
    j["epochs_consumed"] = report.epochs_consumed;
    j["curve"] = report.curve;
    const fs::path subdir = fs::path(dir) / report.strategy;
    std::error_code ec;
    fs::create_directories(subdir, ec);
    const fs::path path = subdir / (std::to_string(report.seed) + ".json");
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << j.dump();
}

RunReport load_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError("corrupt report file " + path + ": " + e.what());
    }
    RunReport r;
    r.strategy = j.at("strategy").get<std::string>();
    r.seed = j.at("seed").get<uint64_t>();
    r.train_loss = j.at("train_loss").get<std::vector<double>>();
    r.phase_boundaries = j.at("phase_boundaries").get<std::vector<int>>();
    r.phase_names = j.at("phase_names").get<std::vector<std::string>>();
    r.final_test_metric = j.at("final_test_metric").get<double>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    r.epochs_consumed = j.at("epochs_consumed").get<int>();
    r.curve = j.at("curve").get<std::vector<double>>();
    return r;
}

std::vector<RunReport> load_reports(const std::string& dir) {
    std::vector<RunReport> out;
    if (!fs::exists(dir)) throw IoError("no such directory: " + dir);
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".json")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out.push_back(load_report(f.string()));
    return out;
}

std::vector<RunReport> run_experiment(const ExperimentOptions& opts) {
    StrategyConfig base = opts.task == Task::Sine ? sine_config(0) : synth_config(0);
    if (opts.total_epochs > 0) {
        base = opts.task == Task::Sine ? sine_config(0)
                                       : synth_config(0, opts.total_epochs, base.batch_size);
        base.total_epochs = opts.total_epochs;
    }

    Dataset train, test;
    if (opts.task == Task::Sine) {
        train = make_sine_dataset(10000, derive_seed(opts.seed, 1000));
        test = make_sine_dataset(2000, derive_seed(opts.seed, 2000));
    } else {
        train = make_synthetic_images(32, derive_seed(opts.seed, 1000));
        test = make_synthetic_images(20, derive_seed(opts.seed, 2000));
    }

    std::vector<RunReport> reports;
    for (Strategy s : opts.strategies) {
        for (int r = 0; r < opts.runs; ++r) {
            StrategyConfig cfg = base;
            cfg.seed = derive_seed(opts.seed, 37 + r);
            auto [net, report] = run_strategy(s, cfg, train, test);
            if (opts.verbose)
                std::fprintf(stderr, "%s run %d/%d: test metric %.6f (%.1fs)\n",
                             strategy_name(s).c_str(), r + 1, opts.runs,
                             report.final_test_metric, report.wall_seconds);
            save_report(report, opts.out_dir);
            reports.push_back(std::move(report));
        }
    }
    return reports;
}

std::vector<AggregateRow> aggregate_reports(const std::vector<RunReport>& reports) {
    std::vector<AggregateRow> rows;
    for (const char* name : {"student", "bo3", "one_model"}) {
        std::vector<double> metrics;
        for (const auto& r : reports)
            if (r.strategy == name) metrics.push_back(r.final_test_metric);
        if (!metrics.empty()) rows.push_back(aggregate(name, metrics));
    }
    return rows;
}

void write_aggregate_csv(const std::vector<AggregateRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.precision(17);
    out << "strategy,runs,min,max,median,mean,std\n";
    for (const auto& r : rows)
        out << r.strategy << "," << r.runs << "," << r.min << "," << r.max << ","
            << r.median << "," << r.mean << "," << r.std_dev << "\n";
}

void write_boxplot_csv(const std::vector<RunReport>& reports, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.precision(17);
    out << "strategy,q0,q25,q50,q75,q100,mean\n";
    for (const char* name : {"student", "bo3", "one_model"}) {
        std::vector<double> m;
        for (const auto& r : reports)
            if (r.strategy == name) m.push_back(r.final_test_metric);
        if (m.empty()) continue;
        std::sort(m.begin(), m.end());
        auto quantile = [&](double q) {
            const double pos = q * (m.size() - 1);
            const size_t lo = static_cast<size_t>(pos);
            const size_t hi = std::min(lo + 1, m.size() - 1);
            return m[lo] + (pos - lo) * (m[hi] - m[lo]);
        };
        const double mean = std::accumulate(m.begin(), m.end(), 0.0) / m.size();
        out << name << "," << quantile(0) << "," << quantile(0.25) << "," << quantile(0.5)
            << "," << quantile(0.75) << "," << quantile(1.0) << "," << mean << "\n";
    }
}

void write_curves_csv(const std::vector<RunReport>& reports, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.precision(17);
    out << "strategy,seed,x,prediction\n";
    for (const auto& r : reports) {
        const int points = static_cast<int>(r.curve.size());
        for (int i = 0; i < points; ++i)
            out << r.strategy << "," << r.seed << "," << (i + 0.5) / points << ","
                << r.curve[i] << "\n";
    }
}

std::string format_aggregate_table(const std::vector<AggregateRow>& rows) {
    std::ostringstream os;
    os << "strategy     runs      min      max   median     mean      std\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-12s %4d %8.4f %8.4f %8.4f %8.4f %8.4f\n",
                      r.strategy.c_str(), r.runs, r.min, r.max, r.median, r.mean, r.std_dev);
        os << buf;
    }
    return os.str();
}

}  // namespace mnn
