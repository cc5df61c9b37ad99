#include <cstdio>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "mnn/compression.hpp"
#include "mnn/harness.hpp"
#include "mnn/merging.hpp"

namespace fs = std::filesystem;
using namespace mnn;

namespace {

Task task_from_name(const std::string& name) {
    if (name == "sine") return Task::Sine;
    if (name == "synth") return Task::SynthImages;
    throw CLI::ValidationError("--task", "unknown task '" + name + "' (sine|synth)");
}

StrategyConfig config_for(const std::string& task, uint64_t seed, int epochs) {
    StrategyConfig cfg =
        task_from_name(task) == Task::Sine ? sine_config(seed) : synth_config(seed);
    if (epochs > 0) cfg.total_epochs = epochs;
    return cfg;
}

std::pair<Dataset, Dataset> datasets_for(Task task, uint64_t seed) {
    if (task == Task::Sine)
        return {make_sine_dataset(10000, derive_seed(seed, 1000)),
                make_sine_dataset(2000, derive_seed(seed, 2000))};
    return {make_synthetic_images(32, derive_seed(seed, 1000)),
            make_synthetic_images(20, derive_seed(seed, 2000))};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural-network merging toolkit: train two teachers, concatenate "
                 "them into a double-width student, learn which half of each layer "
                 "to keep, compress, and fine-tune."};
    app.require_subcommand(1);

    // ---- train-teacher ----
    auto* train_cmd = app.add_subcommand("train-teacher", "Train one teacher network");
    std::string tt_task = "sine", tt_out = "teacher.json";
    uint64_t tt_seed = 1;
    int tt_epochs = 0;
    train_cmd->add_option("--task", tt_task, "sine|synth");
    train_cmd->add_option("--seed", tt_seed, "master seed");
    train_cmd->add_option("--epochs", tt_epochs, "teacher epochs (default: total/3)");
    train_cmd->add_option("--out", tt_out, "output network file");

    // ---- merge ----
    auto* merge_cmd = app.add_subcommand("merge", "Concatenate two teachers into a big student");
    std::string mg_a, mg_b, mg_out = "big.json";
    uint64_t mg_seed = 1;
    merge_cmd->add_option("--teacher-a", mg_a, "first teacher file")->required();
    merge_cmd->add_option("--teacher-b", mg_b, "second teacher file")->required();
    merge_cmd->add_option("--seed", mg_seed, "gate init seed");
    merge_cmd->add_option("--out", mg_out, "output network file");

    // ---- train-gates ----
    auto* gates_cmd = app.add_subcommand("train-gates", "Learn unit importance of a big student");
    std::string tg_task = "sine", tg_in, tg_out = "big-trained.json";
    uint64_t tg_seed = 1;
    int tg_epochs = 0;
    gates_cmd->add_option("--task", tg_task, "sine|synth");
    gates_cmd->add_option("--in", tg_in, "big student file")->required();
    gates_cmd->add_option("--seed", tg_seed, "master seed");
    gates_cmd->add_option("--epochs", tg_epochs, "importance epochs (default: total/6)");
    gates_cmd->add_option("--out", tg_out, "output network file");

    // ---- compress ----
    auto* comp_cmd = app.add_subcommand("compress", "Keep the most important half of units");
    std::string cp_in, cp_out = "student.json", cp_report;
    comp_cmd->add_option("--in", cp_in, "big student file")->required();
    comp_cmd->add_option("--out", cp_out, "output network file");
    comp_cmd->add_option("--report", cp_report, "per-unit CSV report path");

    // ---- finetune ----
    auto* ft_cmd = app.add_subcommand("finetune", "Fine-tune a compressed student");
    std::string ft_task = "sine", ft_in, ft_out = "student-final.json";
    uint64_t ft_seed = 1;
    int ft_epochs = 0;
    ft_cmd->add_option("--task", ft_task, "sine|synth");
    ft_cmd->add_option("--in", ft_in, "student file")->required();
    ft_cmd->add_option("--seed", ft_seed, "master seed");
    ft_cmd->add_option("--epochs", ft_epochs, "fine-tune epochs (default: total/6)");
    ft_cmd->add_option("--out", ft_out, "output network file");

    // ---- experiment ----
    auto* exp_cmd = app.add_subcommand("experiment", "Run budget-matched strategy comparisons");
    std::string ex_task = "sine", ex_strategy = "all", ex_out = "runs";
    uint64_t ex_seed = 1;
    int ex_runs = 50, ex_epochs = 0;
    exp_cmd->add_option("--task", ex_task, "sine|synth");
    exp_cmd->add_option("--strategy", ex_strategy, "student|bo3|one_model|all");
    exp_cmd->add_option("--runs", ex_runs, "runs per strategy");
    exp_cmd->add_option("--seed", ex_seed, "master seed");
    exp_cmd->add_option("--epochs", ex_epochs, "override total epoch budget");
    exp_cmd->add_option("--out", ex_out, "output directory");

    // ---- report ----
    auto* rep_cmd = app.add_subcommand("report", "Aggregate run reports into tables");
    std::string rp_dir = "runs";
    rep_cmd->add_option("dir", rp_dir, "directory with run reports");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) {
            StrategyConfig cfg = config_for(tt_task, tt_seed, 0);
            auto [train, test] = datasets_for(cfg.task, tt_seed);
            Rng init(derive_seed(tt_seed, 10));
            Network net = build_model(cfg, init);
            auto params = parameters(net);
            std::vector<std::vector<double>> vel;
            Rng order(derive_seed(tt_seed, 100)), gate(derive_seed(tt_seed, 101));
            const int epochs = tt_epochs > 0 ? tt_epochs : cfg.teacher_epochs();
            for (int e = 0; e < epochs; ++e) {
                double loss = train_epoch(net, train, params, vel,
                                          lr_at(cfg, Phase::Teacher, e), cfg.momentum,
                                          cfg.batch_size, order, gate);
                std::fprintf(stderr, "epoch %d/%d loss %.6f\n", e + 1, epochs, loss);
            }
            std::fprintf(stderr, "test metric: %.6f\n", evaluate(net, test, cfg.eval_metric));
            save_network(net, tt_out);
        } else if (merge_cmd->parsed()) {
            Network a = load_network(mg_a);
            Network b = load_network(mg_b);
            Rng rng(derive_seed(mg_seed, 30));
            save_network(merge_networks(a, b, rng), mg_out);
        } else if (gates_cmd->parsed()) {
            StrategyConfig cfg = config_for(tg_task, tg_seed, 0);
            auto [train, test] = datasets_for(cfg.task, tg_seed);
            Network net = load_network(tg_in);
            auto params = parameters(net);
            auto gp = gate_parameters(net);
            params.insert(params.end(), gp.begin(), gp.end());
            std::vector<std::vector<double>> vel;
            Rng order(derive_seed(tg_seed, 300)), gate(derive_seed(tg_seed, 301));
            const int epochs = tg_epochs > 0 ? tg_epochs : cfg.importance_epochs();
            for (int e = 0; e < epochs; ++e) {
                double loss = train_epoch(net, train, params, vel,
                                          lr_at(cfg, Phase::Importance, e), cfg.momentum,
                                          cfg.batch_size, order, gate,
                                          lambda_at(cfg.lambda_schedule, e));
                std::fprintf(stderr, "epoch %d/%d loss %.6f\n", e + 1, epochs, loss);
            }
            save_network(net, tg_out);
        } else if (comp_cmd->parsed()) {
            Network big = load_network(cp_in);
            if (!cp_report.empty())
                write_compression_report_csv(compression_report(big), cp_report);
            save_network(compress(big), cp_out);
        } else if (ft_cmd->parsed()) {
            StrategyConfig cfg = config_for(ft_task, ft_seed, 0);
            auto [train, test] = datasets_for(cfg.task, ft_seed);
            Network net = load_network(ft_in);
            auto params = parameters(net);
            std::vector<std::vector<double>> vel;
            Rng order(derive_seed(ft_seed, 400)), gate(derive_seed(ft_seed, 401));
            const int epochs = ft_epochs > 0 ? ft_epochs : cfg.finetune_epochs();
            for (int e = 0; e < epochs; ++e) {
                double loss = train_epoch(net, train, params, vel,
                                          lr_at(cfg, Phase::Finetune, e), cfg.momentum,
                                          cfg.batch_size, order, gate);
                std::fprintf(stderr, "epoch %d/%d loss %.6f\n", e + 1, epochs, loss);
            }
            std::fprintf(stderr, "test metric: %.6f\n", evaluate(net, test, cfg.eval_metric));
            save_network(net, ft_out);
        } else if (exp_cmd->parsed()) {
            ExperimentOptions opts;
            opts.task = task_from_name(ex_task);
            if (ex_strategy != "all") opts.strategies = {strategy_from_name(ex_strategy)};
            opts.runs = ex_runs;
            opts.seed = ex_seed;
            opts.out_dir = ex_out;
            opts.total_epochs = ex_epochs;
            auto reports = run_experiment(opts);
            auto rows = aggregate_reports(reports);
            write_aggregate_csv(rows, (fs::path(ex_out) / "aggregate.csv").string());
            write_boxplot_csv(reports, (fs::path(ex_out) / "boxplot.csv").string());
            write_curves_csv(reports, (fs::path(ex_out) / "curves.csv").string());
            std::cout << format_aggregate_table(rows);
        } else if (rep_cmd->parsed()) {
            auto reports = load_reports(rp_dir);
            auto rows = aggregate_reports(reports);
            write_aggregate_csv(rows, (fs::path(rp_dir) / "aggregate.csv").string());
            write_boxplot_csv(reports, (fs::path(rp_dir) / "boxplot.csv").string());
            write_curves_csv(reports, (fs::path(rp_dir) / "curves.csv").string());
            std::cout << format_aggregate_table(rows);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
