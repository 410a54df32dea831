#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace psp {

/// One experiment's full configuration. String fields keep the config-file
/// and command-line representations; parsing to typed values happens at the
/// start of a run.
struct TrainConfig {
    std::string model = "lenet5";        // "lenet5" or "mlp(784,300,100,10)"
    std::string dataset = "mnist";       // subdirectory of data_dir
    std::string data_dir = "data";
    std::string regularizer = "none";    // none | l2 | psp
    std::string normalization = "div255";  // div255 | meanstd (train-set statistics)
    double lambda = 0.0;
    double eta = 0.1;
    double momentum = 0.0;
    int batch_size = 100;
    int epochs = 20;
    std::uint64_t seed = 1;
    std::string precision = "f64";       // f32 | f64
    std::string schedule = "constant";   // constant | step-decay
    int warm_epochs = 150;
    std::string output_dir = ".";
    std::string run_name;                // csv/checkpoint basename; derived when empty
    int train_limit = 0;                 // > 0 trains on the first N samples only

    std::string effective_run_name() const;
    std::string csv_path() const;
    std::string checkpoint_path() const;
};

/// One CSV row. Written with full round-trip precision so a rerun of the
/// same seed reproduces the file byte for byte.
struct MetricsRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_penalty = 0.0;
    double test_error_pct = 0.0;
    double mean_z_sq = 0.0;
};

inline constexpr const char* kMetricsCsvHeader =
    "epoch,lr,train_loss,train_penalty,test_error_pct,mean_z_sq";

std::string format_metrics_row(const MetricsRecord& r);

/// Reads key=value lines ('#' comments, blank lines ignored) into config.
void load_config_file(const std::string& path, TrainConfig& config);
/// Applies one key=value pair; unknown key throws a config error.
void apply_config_kv(TrainConfig& config, const std::string& key, const std::string& value);

/// Runs the configured training loop: per epoch shuffles, steps, evaluates,
/// appends a MetricsRecord to the CSV, and finally writes a checkpoint.
/// Returns the last record.
MetricsRecord train(const TrainConfig& config);

/// Test error of a stored checkpoint over a dataset's test split.
double evaluate_checkpoint(const std::string& checkpoint_path, const std::string& dataset,
                           const std::string& data_dir);

/// Writes one weight-histogram CSV (101 bins) per parameterized layer.
/// Returns the created file paths.
std::vector<std::string> export_histograms(const std::string& checkpoint_path,
                                           const std::string& output_dir);

struct CompareRow {
    std::string name;
    double final_test_error_pct = 0.0;
};

/// Final test errors per configuration; loads each run's existing CSV when
/// present, trains otherwise. Writes a summary CSV next to the runs and an
/// aligned text table to the stream.
std::vector<CompareRow> compare_runs(const std::vector<TrainConfig>& configs, std::ostream& out);

}  // namespace psp
