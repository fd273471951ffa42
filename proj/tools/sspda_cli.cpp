#include <cstdint>
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "sspda/data.hpp"
#include "sspda/errors.hpp"
#include "sspda/eval.hpp"
#include "sspda/experiment.hpp"
#include "sspda/jigsaw.hpp"
#include "sspda/network.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out;
    std::string method;
    std::int64_t seed = -1;
};

sspda::ExperimentConfig load_config(const CommonFlags& flags) {
    if (flags.config_path.empty()) throw sspda::ConfigError("--config is required");
    sspda::ExperimentConfig cfg = sspda::parse_config(flags.config_path);
    if (!flags.out.empty()) cfg.output_dir = flags.out;
    if (flags.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(flags.seed);
    if (!flags.method.empty()) {
        cfg.method = sspda::method_from_name(flags.method);
        cfg.method_set = true;
        // Re-derive the method-determined weights for the override.
        sspda::ExperimentConfig fresh =
            sspda::parse_config_text("method = " + flags.method, "<--method>");
        cfg.train.alpha_s = fresh.train.alpha_s;
        cfg.train.alpha_t = fresh.train.alpha_t;
        cfg.train.eta = fresh.train.eta;
        cfg.train.lambda_max = fresh.train.lambda_max;
        cfg.train.use_gamma = fresh.train.use_gamma;
        cfg.finalize();
    }
    return cfg;
}

int run_generate(const CommonFlags& flags) {
    sspda::ExperimentConfig cfg = load_config(flags);
    if (!cfg.data.synthetic) throw sspda::ConfigError("generate needs 'data = synthetic'");
    if (flags.seed >= 0) cfg.data.spec.seed = static_cast<std::uint64_t>(flags.seed);
    const std::string out = flags.out.empty() ? cfg.output_dir : flags.out;
    sspda::SyntheticData data = sspda::generate_synthetic(cfg.data.spec);
    sspda::write_dataset_tree(data, out);
    std::printf("wrote %d source and %d target images under %s\n", data.source.size(),
                data.target.size(), out.c_str());
    return 0;
}

int run_train(const CommonFlags& flags) {
    sspda::ExperimentConfig cfg = load_config(flags);
    std::printf("method=%s repetitions=%d epochs=%d out=%s\n",
                sspda::method_name(cfg.method).c_str(), cfg.repetitions, cfg.train.epochs,
                cfg.output_dir.c_str());
    sspda::ExperimentResult result = sspda::run_experiment(cfg);
    for (const auto& r : result.runs) {
        std::printf("run %d seed %llu: best epoch %d, target accuracy %.4f\n", r.run,
                    static_cast<unsigned long long>(r.seed), r.best_epoch, r.target_accuracy);
    }
    std::printf("target accuracy: %.4f +- %.4f over %zu runs\n", result.mean_target_acc,
                result.std_target_acc, result.runs.size());
    return 0;
}

int run_eval(const CommonFlags& flags, const std::string& checkpoint, int crops) {
    sspda::ExperimentConfig cfg = load_config(flags);
    sspda::SspdaModel model = sspda::load_checkpoint(checkpoint);
    auto [source, target] = sspda::load_datasets(cfg);
    (void)source;
    sspda::Rng rng(sspda::derive_seed(cfg.train.seed, 4));
    const int n_crops = crops > 0 ? crops : cfg.eval_crops;
    const double acc = sspda::evaluate(model, target, n_crops, rng);
    std::printf("target accuracy (%d crop%s): %.4f\n", n_crops, n_crops == 1 ? "" : "s", acc);
    return 0;
}

int run_perms(int grid, int count, const std::string& out, std::int64_t seed) {
    if (out.empty()) throw sspda::ConfigError("--out file is required");
    sspda::PermutationSet set = sspda::select_permutations(
        grid, count, seed >= 0 ? static_cast<std::uint64_t>(seed) : 0);
    sspda::save_permutation_set(set, out);
    std::printf("wrote %d permutations of a %dx%d grid to %s\n", set.count(), grid, grid,
                out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Self-supervised partial domain adaptation trainer"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string checkpoint;
    int crops = 0;
    int grid = 3;
    int count = 30;

    auto add_common = [&](CLI::App* sub, bool with_method) {
        sub->add_option("--config", flags.config_path, "experiment config file");
        sub->add_option("--out", flags.out, "output directory (overrides config)");
        sub->add_option("--seed", flags.seed, "seed override");
        if (with_method) sub->add_option("--method", flags.method, "method override");
    };

    CLI::App* generate = app.add_subcommand("generate", "write a synthetic dataset to disk");
    add_common(generate, false);
    CLI::App* train = app.add_subcommand("train", "run an experiment from a config file");
    add_common(train, true);
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the target data");
    add_common(eval, false);
    eval->add_option("--checkpoint", checkpoint, "model checkpoint path")->required();
    eval->add_option("--crops", crops, "random crops per image (default from config)");
    CLI::App* perms = app.add_subcommand("perms", "emit a permutation set file");
    perms->add_option("--grid", grid, "tiles per side (2 or 3)");
    perms->add_option("--count", count, "number of permutations");
    perms->add_option("--out", flags.out, "output file");
    perms->add_option("--seed", flags.seed, "seed (reserved)");

    try {
        app.parse(argc, argv);
        if (generate->parsed()) return run_generate(flags);
        if (train->parsed()) return run_train(flags);
        if (eval->parsed()) return run_eval(flags, checkpoint, crops);
        if (perms->parsed()) return run_perms(grid, count, flags.out, flags.seed);
        return 1;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const sspda::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
