#include "sspda/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "sspda/errors.hpp"
#include "sspda/eval.hpp"

namespace fs = std::filesystem;

namespace sspda {

std::string method_name(Method m) {
    switch (m) {
        case Method::kSourceOnly: return "source_only";
        case Method::kJigen: return "jigen";
        case Method::kSspda: return "sspda";
        case Method::kSspdaGamma: return "sspda_gamma";
        case Method::kSspdaPada: return "sspda_pada";
    }
    throw ParameterError("unknown method");
}

Method method_from_name(const std::string& name) {
    if (name == "source_only") return Method::kSourceOnly;
    if (name == "jigen") return Method::kJigen;
    if (name == "sspda") return Method::kSspda;
    if (name == "sspda_gamma") return Method::kSspdaGamma;
    if (name == "sspda_pada") return Method::kSspdaPada;
    throw ConfigError("unknown method '" + name + "'");
}

// --- config parsing -----------------------------------------------------------

namespace {

struct KeyValue {
    std::string key;
    std::string value;
    int line = 0;
};

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

[[noreturn]] void fail(const KeyValue& kv, const std::string& why) {
    throw ConfigError("line " + std::to_string(kv.line) + ": key '" + kv.key + "': " + why);
}

double parse_double(const KeyValue& kv) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(kv.value, &pos);
        if (pos != kv.value.size()) fail(kv, "trailing characters in number");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        fail(kv, "cannot parse '" + kv.value + "' as a number");
    }
}

long long parse_int(const KeyValue& kv) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(kv.value, &pos);
        if (pos != kv.value.size()) fail(kv, "trailing characters in integer");
        return v;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        fail(kv, "cannot parse '" + kv.value + "' as an integer");
    }
}

bool parse_bool(const KeyValue& kv) {
    if (kv.value == "true" || kv.value == "1") return true;
    if (kv.value == "false" || kv.value == "0") return false;
    fail(kv, "expected true/false");
}

double parse_range(const KeyValue& kv, double lo, double hi) {
    const double v = parse_double(kv);
    if (v < lo || v > hi) {
        fail(kv, "value " + kv.value + " outside [" + std::to_string(lo) + ", " +
                     std::to_string(hi) + "]");
    }
    return v;
}

long long parse_min(const KeyValue& kv, long long lo) {
    const long long v = parse_int(kv);
    if (v < lo) fail(kv, "value must be >= " + std::to_string(lo));
    return v;
}

}  // namespace

void ExperimentConfig::finalize() {
    if (!method_set) throw ConfigError("method missing (set 'method = ...' or pass --method)");

    // Preset values for everything the method determines and the file left unset
    // are already merged by the parser; here the combination is validated.
    const auto& t = train;
    auto require = [&](bool ok, const std::string& why) {
        if (!ok) throw ConfigError("method " + method_name(method) + ": " + why);
    };
    switch (method) {
        case Method::kSourceOnly:
            require(t.alpha_s == 0.0 && t.alpha_t == 0.0 && t.eta == 0.0 &&
                        t.lambda_max == 0.0 && !t.use_gamma,
                    "is plain source training (alpha_s = alpha_t = eta = lambda_max = 0, no gamma)");
            break;
        case Method::kJigen:
            require(t.alpha_s > 0.0 && t.alpha_t > 0.0 && t.lambda_max == 0.0 && !t.use_gamma,
                    "needs alpha_s > 0, alpha_t > 0, lambda_max = 0, no gamma");
            break;
        case Method::kSspda:
            require(t.alpha_s == 0.0 && t.lambda_max == 0.0 && !t.use_gamma,
                    "needs alpha_s = 0, lambda_max = 0, no gamma");
            break;
        case Method::kSspdaGamma:
            require(t.alpha_s == 0.0 && t.lambda_max == 0.0 && t.use_gamma,
                    "needs alpha_s = 0, lambda_max = 0, use_gamma");
            break;
        case Method::kSspdaPada:
            require(t.alpha_s == 0.0 && t.lambda_max > 0.0 && t.use_gamma,
                    "needs alpha_s = 0, lambda_max > 0, use_gamma");
            break;
    }

    if (data.synthetic) {
        model.image_side = data.spec.image_side;
        model.num_classes = data.spec.num_classes;
    } else {
        if (data.source_dir.empty() || data.target_dir.empty() || data.class_list.empty()) {
            throw ConfigError("directory dataset needs source_dir, target_dir and class_list");
        }
        model.num_classes = static_cast<int>(data.class_list.size());
    }
    model.num_permutations = train.perm_count;
    if (model.image_side % train.grid_side != 0) {
        throw ConfigError("image side " + std::to_string(model.image_side) +
                          " is not divisible by grid_side " + std::to_string(train.grid_side));
    }
    try {
        train.validate();
        model.validate();
    } catch (const ParameterError& e) {
        throw ConfigError(e.what());
    }
    if (eval_crops < 1) throw ConfigError("eval_crops must be >= 1");
    if (repetitions < 1) throw ConfigError("repetitions must be >= 1");
    if (val_fraction < 0.0 || val_fraction >= 1.0) {
        throw ConfigError("val_fraction must be in [0, 1)");
    }
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin) {
    ExperimentConfig cfg;
    std::map<std::string, bool> seen;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    std::vector<KeyValue> entries;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        const std::string line = trim(raw);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + " line " + std::to_string(line_no) +
                              ": expected 'key = value', got '" + line + "'");
        }
        KeyValue kv{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no};
        if (kv.key.empty()) {
            throw ConfigError(origin + " line " + std::to_string(line_no) + ": empty key");
        }
        if (seen.count(kv.key)) {
            throw ConfigError(origin + " line " + std::to_string(line_no) + ": duplicate key '" +
                              kv.key + "'");
        }
        seen[kv.key] = true;
        entries.push_back(std::move(kv));
    }

    auto& t = cfg.train;
    auto& m = cfg.model;
    auto& d = cfg.data;
    for (const auto& kv : entries) {
        const std::string& k = kv.key;
        if (k == "method") {
            cfg.method = method_from_name(kv.value);
            cfg.method_set = true;
        } else if (k == "seed") {
            t.seed = static_cast<std::uint64_t>(parse_min(kv, 0));
        } else if (k == "repetitions") {
            cfg.repetitions = static_cast<int>(parse_min(kv, 1));
        } else if (k == "epochs") {
            t.epochs = static_cast<int>(parse_min(kv, 1));
        } else if (k == "eval_crops") {
            cfg.eval_crops = static_cast<int>(parse_min(kv, 1));
        } else if (k == "output_dir") {
            cfg.output_dir = kv.value;
        } else if (k == "val_fraction") {
            cfg.val_fraction = parse_range(kv, 0.0, 0.5);
        } else if (k == "alpha_s") {
            t.alpha_s = parse_range(kv, 0.0, 100.0);
        } else if (k == "alpha_t") {
            t.alpha_t = parse_range(kv, 0.0, 100.0);
        } else if (k == "eta") {
            t.eta = parse_range(kv, 0.0, 1.0);
        } else if (k == "beta") {
            t.beta = parse_range(kv, 0.0, 1.0);
        } else if (k == "lambda_max") {
            t.lambda_max = parse_range(kv, 0.0, 10.0);
        } else if (k == "use_gamma") {
            t.use_gamma = parse_bool(kv);
        } else if (k == "gamma_warmup") {
            t.gamma_warmup_epochs = static_cast<int>(parse_min(kv, 0));
        } else if (k == "gamma_mode") {
            if (kv.value == "argmax") {
                t.gamma_target_mode = GammaTargetMode::kArgmax;
            } else if (kv.value == "elementwise") {
                t.gamma_target_mode = GammaTargetMode::kElementwise;
            } else {
                fail(kv, "expected argmax or elementwise");
            }
        } else if (k == "lambda_per_epoch") {
            t.lambda_per_epoch = parse_bool(kv);
        } else if (k == "perm_count") {
            t.perm_count = static_cast<int>(parse_min(kv, 1));
        } else if (k == "grid_side") {
            const long long v = parse_int(kv);
            if (v < 2 || v > 3) fail(kv, "grid_side must be 2 or 3");
            t.grid_side = static_cast<int>(v);
        } else if (k == "batch_source") {
            t.batch_source = static_cast<int>(parse_min(kv, 1));
        } else if (k == "batch_target") {
            t.batch_target = static_cast<int>(parse_min(kv, 1));
        } else if (k == "lr") {
            t.learning_rate = parse_range(kv, 0.0, 10.0);
        } else if (k == "momentum") {
            t.momentum = parse_range(kv, 0.0, 0.999);
        } else if (k == "weight_decay") {
            t.weight_decay = parse_range(kv, 0.0, 1.0);
        } else if (k == "selection_w") {
            t.selection_w = parse_range(kv, 0.0, 1.0);
        } else if (k == "conv1_channels") {
            m.conv1_channels = static_cast<int>(parse_min(kv, 1));
        } else if (k == "conv1_kernel") {
            m.conv1_kernel = static_cast<int>(parse_min(kv, 1));
        } else if (k == "conv1_stride") {
            m.conv1_stride = static_cast<int>(parse_min(kv, 1));
        } else if (k == "pool1") {
            m.pool1 = static_cast<int>(parse_min(kv, 1));
        } else if (k == "conv2_channels") {
            m.conv2_channels = static_cast<int>(parse_min(kv, 2));
        } else if (k == "conv2_kernel") {
            m.conv2_kernel = static_cast<int>(parse_min(kv, 1));
        } else if (k == "conv2_stride") {
            m.conv2_stride = static_cast<int>(parse_min(kv, 1));
        } else if (k == "pool2") {
            m.pool2 = static_cast<int>(parse_min(kv, 1));
        } else if (k == "data") {
            if (kv.value == "synthetic") {
                d.synthetic = true;
            } else if (kv.value == "directory") {
                d.synthetic = false;
            } else {
                fail(kv, "expected synthetic or directory");
            }
        } else if (k == "num_classes") {
            d.spec.num_classes = static_cast<int>(parse_min(kv, 1));
        } else if (k == "target_classes") {
            d.spec.target_classes = static_cast<int>(parse_min(kv, 1));
        } else if (k == "image_side") {
            d.spec.image_side = static_cast<int>(parse_min(kv, 6));
        } else if (k == "samples_per_class") {
            d.spec.samples_per_class = static_cast<int>(parse_min(kv, 1));
        } else if (k == "color_shift") {
            d.spec.color_shift = parse_range(kv, 0.0, 1.0);
        } else if (k == "texture_level") {
            d.spec.texture_level = parse_range(kv, 0.0, 1.0);
        } else if (k == "noise_level") {
            d.spec.noise_level = parse_range(kv, 0.0, 1.0);
        } else if (k == "data_seed") {
            d.spec.seed = static_cast<std::uint64_t>(parse_min(kv, 0));
        } else if (k == "source_dir") {
            d.source_dir = kv.value;
        } else if (k == "target_dir") {
            d.target_dir = kv.value;
        } else if (k == "class_list") {
            d.class_list.clear();
            std::istringstream cls(kv.value);
            std::string item;
            while (std::getline(cls, item, ',')) {
                const std::string name = trim(item);
                if (!name.empty()) d.class_list.push_back(name);
            }
            if (d.class_list.empty()) fail(kv, "empty class list");
        } else {
            throw ConfigError(origin + " line " + std::to_string(kv.line) + ": unknown key '" +
                              k + "'");
        }
    }

    // Method presets fill whatever the file did not set explicitly.
    if (cfg.method_set) {
        auto preset = [&](const char* key, double* slot, double value) {
            if (!seen.count(key)) *slot = value;
        };
        switch (cfg.method) {
            case Method::kSourceOnly:
                preset("alpha_s", &t.alpha_s, 0.0);
                preset("alpha_t", &t.alpha_t, 0.0);
                preset("eta", &t.eta, 0.0);
                preset("lambda_max", &t.lambda_max, 0.0);
                if (!seen.count("use_gamma")) t.use_gamma = false;
                break;
            case Method::kJigen:
                preset("alpha_s", &t.alpha_s, 0.7);
                preset("alpha_t", &t.alpha_t, 1.0);
                preset("eta", &t.eta, 0.2);
                preset("lambda_max", &t.lambda_max, 0.0);
                if (!seen.count("use_gamma")) t.use_gamma = false;
                break;
            case Method::kSspda:
                preset("alpha_s", &t.alpha_s, 0.0);
                preset("alpha_t", &t.alpha_t, 1.0);
                preset("eta", &t.eta, 0.2);
                preset("lambda_max", &t.lambda_max, 0.0);
                if (!seen.count("use_gamma")) t.use_gamma = false;
                break;
            case Method::kSspdaGamma:
                preset("alpha_s", &t.alpha_s, 0.0);
                preset("alpha_t", &t.alpha_t, 1.0);
                preset("eta", &t.eta, 0.2);
                preset("lambda_max", &t.lambda_max, 0.0);
                if (!seen.count("use_gamma")) t.use_gamma = true;
                break;
            case Method::kSspdaPada:
                preset("alpha_s", &t.alpha_s, 0.0);
                preset("alpha_t", &t.alpha_t, 1.0);
                preset("eta", &t.eta, 0.2);
                preset("lambda_max", &t.lambda_max, 0.1);
                if (!seen.count("use_gamma")) t.use_gamma = true;
                break;
        }
    }
    cfg.finalize();
    return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path);
}

// --- dataset assembly ----------------------------------------------------------

std::pair<Dataset, Dataset> load_datasets(const ExperimentConfig& config) {
    if (config.data.synthetic) {
        SyntheticData data = generate_synthetic(config.data.spec);
        return {std::move(data.source), std::move(data.target)};
    }
    std::vector<std::string> warnings;
    Dataset source = load_directory(config.data.source_dir, config.data.class_list,
                                    config.model.image_side, Domain::kSource, &warnings);
    Dataset target = load_directory(config.data.target_dir, config.data.class_list,
                                    config.model.image_side, Domain::kTarget, &warnings);
    for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    if (source.empty()) throw IoError("source dataset is empty: " + config.data.source_dir);
    if (target.empty()) throw IoError("target dataset is empty: " + config.data.target_dir);
    return {std::move(source), std::move(target)};
}

std::pair<Dataset, Dataset> split_validation(const Dataset& source, double fraction,
                                             std::uint64_t seed) {
    Dataset train_set, val_set;
    train_set.num_classes = val_set.num_classes = source.num_classes;
    if (fraction <= 0.0) {
        train_set.samples = source.samples;
        return {std::move(train_set), std::move(val_set)};
    }
    std::map<int, std::vector<int>> by_class;
    for (int i = 0; i < source.size(); ++i) {
        by_class[source.samples[static_cast<std::size_t>(i)].label].push_back(i);
    }
    Rng rng(derive_seed(seed, 0x5A11));
    std::vector<char> goes_to_val(source.samples.size(), 0);
    for (auto& [cls, idx] : by_class) {
        rng.shuffle(idx);
        const int n_val = std::max(1, static_cast<int>(std::lround(fraction * idx.size())));
        for (int i = 0; i < n_val && i < static_cast<int>(idx.size()); ++i) {
            goes_to_val[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = 1;
        }
    }
    for (int i = 0; i < source.size(); ++i) {
        const auto& s = source.samples[static_cast<std::size_t>(i)];
        (goes_to_val[static_cast<std::size_t>(i)] ? val_set : train_set).samples.push_back(s);
    }
    return {std::move(train_set), std::move(val_set)};
}

// --- CSV ------------------------------------------------------------------------

namespace {

// RFC-4180: CRLF line breaks, fixed column count, numeric fields need no quoting.
class CsvWriter {
public:
    explicit CsvWriter(const std::string& path) : out_(path, std::ios::binary), path_(path) {
        if (!out_) throw IoError("cannot open " + path + " for writing");
    }
    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ << ',';
            out_ << fields[i];
        }
        out_ << "\r\n";
        if (!out_) throw IoError("failed writing " + path_);
    }

private:
    std::ofstream out_;
    std::string path_;
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& history) {
    CsvWriter csv(path);
    csv.row({"epoch", "loss_total", "loss_cls", "loss_jigsaw_t", "loss_entropy", "loss_domain",
             "lambda", "val_acc", "smoothed_val_acc", "target_acc_oracle"});
    for (const auto& m : history) {
        csv.row({std::to_string(m.epoch), fmt(m.loss_total), fmt(m.loss_cls),
                 fmt(m.loss_jigsaw_t), fmt(m.loss_entropy), fmt(m.loss_domain), fmt(m.lambda),
                 fmt(m.val_acc), fmt(m.smoothed_val_acc), fmt(m.target_acc_oracle)});
    }
}

void write_gamma_csv(const std::string& path, const TrainResult& result, int classes) {
    CsvWriter csv(path);
    std::vector<std::string> header{"epoch"};
    for (int c = 0; c < classes; ++c) header.push_back("gamma_" + std::to_string(c));
    csv.row(header);
    for (std::size_t e = 0; e < result.gamma_history.size(); ++e) {
        std::vector<std::string> row{std::to_string(e + 1)};
        for (double v : result.gamma_history[e]) row.push_back(fmt(v));
        csv.row(row);
    }
    if (!result.gamma_final.empty()) {
        // Post-training estimate logged as one row past the last epoch.
        std::vector<std::string> row{std::to_string(result.gamma_history.size() + 1)};
        for (double v : result.gamma_final) row.push_back(fmt(v));
        csv.row(row);
    }
}

}  // namespace

double sample_std(const std::vector<double>& values, double mean) {
    if (values.size() < 2) return 0.0;
    double acc = 0.0;
    for (double v : values) acc += (v - mean) * (v - mean);
    return std::sqrt(acc / (static_cast<double>(values.size()) - 1.0));
}

ExperimentResult run_experiment(const ExperimentConfig& config_in) {
    ExperimentConfig config = config_in;
    config.finalize();

    // Fail on an unusable output directory before any training happens.
    fs::create_directories(config.output_dir);
    {
        const fs::path probe = fs::path(config.output_dir) / ".write_probe";
        std::ofstream p(probe);
        if (!p) throw IoError("output directory not writable: " + config.output_dir);
        p.close();
        fs::remove(probe);
    }

    auto [source_all, target] = load_datasets(config);
    // Split with the base seed so all repetitions (and methods sharing the
    // seed) train on the same source partition.
    auto [source_train, source_val] =
        split_validation(source_all, config.val_fraction, config.train.seed);

    ExperimentResult result;
    std::vector<double> accs;
    for (int rep = 0; rep < config.repetitions; ++rep) {
        TrainConfig tc = config.train;
        tc.seed = config.train.seed + static_cast<std::uint64_t>(rep);
        SspdaModel model = build_model(config.model, tc.seed);
        TrainResult trained = train(model, source_train, source_val, target, tc);

        const fs::path run_dir = fs::path(config.output_dir) / ("run" + std::to_string(rep));
        fs::create_directories(run_dir);
        write_metrics_csv((run_dir / "metrics.csv").string(), trained.history);
        if (!trained.gamma_history.empty()) {
            write_gamma_csv((run_dir / "gamma.csv").string(), trained,
                            config.model.num_classes);
        }
        save_checkpoint(trained.best_model, (run_dir / "model.ckpt").string());

        Rng eval_rng(derive_seed(tc.seed, 4));
        const double target_acc = evaluate(trained.best_model, target, config.eval_crops, eval_rng);

        RunSummary summary;
        summary.run = rep;
        summary.seed = tc.seed;
        summary.best_epoch = trained.best_epoch;
        summary.best_smoothed_val_acc = trained.best_smoothed_val;
        summary.target_accuracy = target_acc;
        result.runs.push_back(summary);
        accs.push_back(target_acc);
    }

    double mean = 0.0;
    for (double a : accs) mean += a;
    mean /= static_cast<double>(accs.size());
    result.mean_target_acc = mean;
    result.std_target_acc = sample_std(accs, mean);

    CsvWriter summary_csv((fs::path(config.output_dir) / "summary.csv").string());
    summary_csv.row({"run", "seed", "best_epoch", "best_smoothed_val_acc", "target_acc"});
    for (const auto& r : result.runs) {
        summary_csv.row({std::to_string(r.run), std::to_string(r.seed),
                         std::to_string(r.best_epoch), fmt(r.best_smoothed_val_acc),
                         fmt(r.target_accuracy)});
    }
    CsvWriter agg_csv((fs::path(config.output_dir) / "aggregate.csv").string());
    agg_csv.row({"method", "repetitions", "eval_crops", "mean_target_acc", "std_target_acc"});
    agg_csv.row({method_name(config.method), std::to_string(config.repetitions),
                 std::to_string(config.eval_crops), fmt(result.mean_target_acc),
                 fmt(result.std_target_acc)});
    return result;
}

}  // namespace sspda
