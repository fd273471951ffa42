#pragma once

#include <string>
#include <vector>

#include "sspda/data.hpp"
#include "sspda/network.hpp"
#include "sspda/train.hpp"

namespace sspda {

enum class Method { kSourceOnly, kJigen, kSspda, kSspdaGamma, kSspdaPada };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

struct DatasetConfig {
    bool synthetic = true;
    SyntheticSpec spec;
    // directory mode
    std::string source_dir;
    std::string target_dir;
    std::vector<std::string> class_list;
};

struct ExperimentConfig {
    Method method = Method::kSspda;
    bool method_set = false;
    TrainConfig train;
    ModelConfig model;  // image_side / num_classes / num_permutations filled at load time
    DatasetConfig data;
    std::string output_dir = "out";
    int eval_crops = 1;
    int repetitions = 3;
    double val_fraction = 0.1;

    void finalize();  // applies method presets, syncs model config, validates
};

// "key = value" lines, '#' starts a comment, unknown keys are rejected.
// Errors name the offending key and line. The method key is mandatory.
ExperimentConfig parse_config(const std::string& path);

// Same parser over an in-memory string (used by tests).
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "<text>");

struct RunSummary {
    int run = 0;
    std::uint64_t seed = 0;
    int best_epoch = 0;
    double best_smoothed_val_acc = 0.0;
    double target_accuracy = 0.0;
};

struct ExperimentResult {
    std::vector<RunSummary> runs;
    double mean_target_acc = 0.0;
    double std_target_acc = 0.0;  // sample standard deviation
};

/// Runs `repetitions` training runs (seed, seed+1, ...), selects each run's
/// best epoch by smoothed source-validation accuracy, evaluates that
/// checkpoint on the target, and writes per-epoch metrics, per-run summary
/// and aggregate CSVs (plus gamma dumps and checkpoints) under output_dir.
ExperimentResult run_experiment(const ExperimentConfig& config);

// Stratified split of a labeled dataset: `fraction` of each class (at least
// one sample per represented class) goes to the second return, seeded.
std::pair<Dataset, Dataset> split_validation(const Dataset& source, double fraction,
                                             std::uint64_t seed);

// Loads or generates the configured datasets (source, target).
std::pair<Dataset, Dataset> load_datasets(const ExperimentConfig& config);

double sample_std(const std::vector<double>& values, double mean);

}  // namespace sspda
