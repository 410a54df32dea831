#include <cstdio>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "psp/errors.hpp"
#include "psp/trainer.hpp"

namespace {

int exit_code_for(const std::string& category) {
    if (category == "dimension") return 2;
    if (category == "config") return 3;
    if (category == "data") return 4;
    if (category == "format") return 5;
    if (category == "contract") return 6;
    if (category == "unsupported-topology") return 7;
    if (category == "diverged") return 8;
    return 1;
}

/// Flag values override config-file values, which override the built-in
/// defaults; --data-dir also falls back to $PSP_DATA_DIR.
struct TrainArgs {
    std::string config_file;
    std::string model, dataset, data_dir, regularizer, normalization, precision, schedule;
    std::string output_dir, run_name;
    double lambda = -1.0, eta = -1.0, momentum = -1.0;
    int batch_size = -1, epochs = -1, warm_epochs = -1, train_limit = -1;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

void add_train_options(CLI::App& cmd, TrainArgs& a) {
    cmd.add_option("--config", a.config_file, "key=value config file, applied before flags");
    cmd.add_option("--model", a.model, "lenet5 or mlp(s0,s1,...)");
    cmd.add_option("--dataset", a.dataset, "dataset name, a subdirectory of the data dir");
    cmd.add_option("--data-dir", a.data_dir, "directory holding dataset subdirectories");
    cmd.add_option("--regularizer", a.regularizer, "none, l2, or psp");
    cmd.add_option("--normalization", a.normalization, "div255 or meanstd");
    cmd.add_option("--lambda", a.lambda, "regularization strength");
    cmd.add_option("--eta", a.eta, "learning rate");
    cmd.add_option("--momentum", a.momentum, "momentum coefficient");
    cmd.add_option("--batch-size", a.batch_size, "minibatch size");
    cmd.add_option("--epochs", a.epochs, "training epochs");
    cmd.add_option("--seed", a.seed, "run seed")->each([&a](const std::string&) {
        a.seed_set = true;
    });
    cmd.add_option("--precision", a.precision, "f32 or f64");
    cmd.add_option("--schedule", a.schedule, "constant or step-decay");
    cmd.add_option("--warm-epochs", a.warm_epochs, "epochs before step decay engages");
    cmd.add_option("--output-dir", a.output_dir, "where the CSV and checkpoint land");
    cmd.add_option("--run-name", a.run_name, "basename for outputs; derived when omitted");
    cmd.add_option("--train-limit", a.train_limit, "train on the first N samples only");
}

psp::TrainConfig resolve_config(const TrainArgs& a) {
    psp::TrainConfig cfg;
    if (const char* env = std::getenv("PSP_DATA_DIR")) cfg.data_dir = env;
    if (!a.config_file.empty()) psp::load_config_file(a.config_file, cfg);
    if (!a.model.empty()) cfg.model = a.model;
    if (!a.dataset.empty()) cfg.dataset = a.dataset;
    if (!a.data_dir.empty()) cfg.data_dir = a.data_dir;
    if (!a.regularizer.empty()) cfg.regularizer = a.regularizer;
    if (!a.normalization.empty()) cfg.normalization = a.normalization;
    if (a.lambda >= 0.0) cfg.lambda = a.lambda;
    if (a.eta >= 0.0) cfg.eta = a.eta;
    if (a.momentum >= 0.0) cfg.momentum = a.momentum;
    if (a.batch_size >= 0) cfg.batch_size = a.batch_size;
    if (a.epochs >= 0) cfg.epochs = a.epochs;
    if (a.seed_set) cfg.seed = a.seed;
    if (!a.precision.empty()) cfg.precision = a.precision;
    if (!a.schedule.empty()) cfg.schedule = a.schedule;
    if (a.warm_epochs >= 0) cfg.warm_epochs = a.warm_epochs;
    if (!a.output_dir.empty()) cfg.output_dir = a.output_dir;
    if (!a.run_name.empty()) cfg.run_name = a.run_name;
    if (a.train_limit >= 0) cfg.train_limit = a.train_limit;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PSP training engine"};
    app.require_subcommand(1);

    TrainArgs train_args;
    CLI::App* train_cmd = app.add_subcommand("train", "train a model and write metrics");
    add_train_options(*train_cmd, train_args);

    std::string eval_ckpt, eval_dataset = "mnist", eval_data_dir;
    CLI::App* eval_cmd = app.add_subcommand("evaluate", "test error of a saved checkpoint");
    eval_cmd->add_option("checkpoint", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--dataset", eval_dataset, "dataset name");
    eval_cmd->add_option("--data-dir", eval_data_dir, "directory holding dataset subdirectories");

    std::string hist_ckpt, hist_out = ".";
    CLI::App* hist_cmd =
        app.add_subcommand("export-histograms", "per-layer weight histograms from a checkpoint");
    hist_cmd->add_option("checkpoint", hist_ckpt, "checkpoint file")->required();
    hist_cmd->add_option("--output-dir", hist_out, "where histogram CSVs land");

    std::vector<std::string> compare_files;
    CLI::App* compare_cmd =
        app.add_subcommand("compare", "final test errors across run configurations");
    compare_cmd->add_option("configs", compare_files, "two or more config files")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train_cmd) {
            const psp::TrainConfig cfg = resolve_config(train_args);
            const psp::MetricsRecord last = psp::train(cfg);
            std::printf("run %s: %d epochs, final test error %.2f%%\n",
                        cfg.effective_run_name().c_str(), cfg.epochs, last.test_error_pct);
            std::printf("metrics %s\ncheckpoint %s\n", cfg.csv_path().c_str(),
                        cfg.checkpoint_path().c_str());
        } else if (*eval_cmd) {
            std::string dir = eval_data_dir;
            if (dir.empty()) {
                const char* env = std::getenv("PSP_DATA_DIR");
                dir = env ? env : "data";
            }
            const double err = psp::evaluate_checkpoint(eval_ckpt, eval_dataset, dir);
            std::printf("test error %.2f%%\n", err);
        } else if (*hist_cmd) {
            for (const std::string& f : psp::export_histograms(hist_ckpt, hist_out)) {
                std::printf("%s\n", f.c_str());
            }
        } else if (*compare_cmd) {
            std::vector<psp::TrainConfig> cfgs;
            for (const std::string& path : compare_files) {
                psp::TrainConfig cfg;
                if (const char* env = std::getenv("PSP_DATA_DIR")) cfg.data_dir = env;
                psp::load_config_file(path, cfg);
                cfgs.push_back(cfg);
            }
            psp::compare_runs(cfgs, std::cout);
        }
    } catch (const psp::Error& e) {
        std::fprintf(stderr, "error category=%s message=\"%s\"\n", e.category().c_str(), e.what());
        return exit_code_for(e.category());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error category=other message=\"%s\"\n", e.what());
        return 1;
    }
    return 0;
}
