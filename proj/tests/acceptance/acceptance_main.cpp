// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. The heavy directional benchmark runs last.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sspda/data.hpp"
#include "sspda/errors.hpp"
#include "sspda/eval.hpp"
#include "sspda/experiment.hpp"
#include "sspda/graph.hpp"
#include "sspda/jigsaw.hpp"
#include "sspda/network.hpp"
#include "sspda/train.hpp"
#include "../test_util.hpp"

using namespace sspda;
using namespace sspda_test;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Check {
    bool ok = true;
    std::string detail;

    void require(bool cond, const std::string& what) {
        if (!cond && ok) {
            ok = false;
            detail = what;
        }
    }
    void note(const std::string& text) {
        if (detail.empty()) detail = text;
    }
};

ModelConfig toy_model(int classes, int perms) {
    ModelConfig c;
    c.image_side = 12;
    c.conv1_channels = 4;
    c.conv1_kernel = 3;
    c.conv1_stride = 1;
    c.pool1 = 2;
    c.conv2_channels = 8;
    c.conv2_kernel = 2;
    c.conv2_stride = 1;
    c.pool2 = 2;
    c.num_classes = classes;
    c.num_permutations = perms;
    return c;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness: per-op finite differences at 1e-4 over 20 random
//    instances each, end-to-end objectives at 1e-3 on a 4-sample batch,
//    all inside 60 s.
// ---------------------------------------------------------------------------
void check_gradients(Check& c) {
    const auto t0 = Clock::now();
    double worst_op = 0.0;

    struct OpCase {
        const char* name;
        std::function<double(std::uint64_t)> run;  // returns max rel error
    };
    std::vector<OpCase> cases;

    cases.push_back({"dense", [](std::uint64_t seed) {
                         Rng rng(seed);
                         std::vector<Tensor> p{random_tensor({3, 4}, rng),
                                               random_tensor({4, 3}, rng),
                                               random_tensor({3}, rng)};
                         const auto labels = random_labels(3, 3, rng);
                         return finite_difference_check(
                                    p,
                                    [&](Graph& g, std::vector<Tensor>& q) {
                                        return g.softmax_cross_entropy(
                                            g.dense(g.param(q[0]), g.param(q[1]), g.param(q[2])),
                                            labels);
                                    })
                             .max_rel;
                     }});
    cases.push_back({"conv2d", [](std::uint64_t seed) {
                         Rng rng(seed);
                         const int stride = 1 + rng.below(2);
                         std::vector<Tensor> p{random_tensor({2, 2, 6, 6}, rng),
                                               random_tensor({3, 2, 3, 3}, rng)};
                         const auto labels = random_labels(2, 3, rng);
                         return finite_difference_check(
                                    p,
                                    [&](Graph& g, std::vector<Tensor>& q) {
                                        auto y = g.conv2d(g.param(q[0]), g.param(q[1]), stride);
                                        return g.softmax_cross_entropy(g.global_avg_pool(y),
                                                                       labels);
                                    })
                             .max_rel;
                     }});
    cases.push_back({"relu", [](std::uint64_t seed) {
                         Rng rng(seed);
                         std::vector<Tensor> p{random_tensor_nonzero({3, 5}, rng)};
                         const auto labels = random_labels(3, 5, rng);
                         return finite_difference_check(
                                    p,
                                    [&](Graph& g, std::vector<Tensor>& q) {
                                        return g.softmax_cross_entropy(g.relu(g.param(q[0])),
                                                                       labels);
                                    })
                             .max_rel;
                     }});
    cases.push_back({"max_pool2d", [](std::uint64_t seed) {
                         Rng rng(seed);
                         std::vector<Tensor> p{random_tensor({2, 2, 4, 4}, rng)};
                         const auto labels = random_labels(2, 2, rng);
                         return finite_difference_check(
                                    p,
                                    [&](Graph& g, std::vector<Tensor>& q) {
                                        auto y = g.max_pool2d(g.param(q[0]), 2);
                                        return g.softmax_cross_entropy(g.global_avg_pool(y),
                                                                       labels);
                                    })
                             .max_rel;
                     }});
    cases.push_back({"global_avg_pool", [](std::uint64_t seed) {
                         Rng rng(seed);
                         std::vector<Tensor> p{random_tensor({2, 3, 4, 4}, rng)};
                         const auto labels = random_labels(2, 3, rng);
                         return finite_difference_check(
                                    p,
                                    [&](Graph& g, std::vector<Tensor>& q) {
                                        return g.softmax_cross_entropy(
                                            g.global_avg_pool(g.param(q[0])), labels);
                                    })
                             .max_rel;
                     }});
    cases.push_back({"softmax+entropy", [](std::uint64_t seed) {
                         Rng rng(seed);
                         std::vector<Tensor> p{random_tensor({4, 5}, rng, -2.0, 2.0)};
                         return finite_difference_check(
                                    p,
                                    [&](Graph& g, std::vector<Tensor>& q) {
                                        return g.entropy_loss(g.softmax(g.param(q[0])));
                                    })
                             .max_rel;
                     }});
    cases.push_back({"softmax_cross_entropy", [](std::uint64_t seed) {
                         Rng rng(seed);
                         std::vector<Tensor> p{random_tensor({4, 6}, rng, -3.0, 3.0)};
                         const auto labels = random_labels(4, 6, rng);
                         std::vector<double> w;
                         for (int i = 0; i < 4; ++i) w.push_back(rng.uniform(0.1, 1.0));
                         return finite_difference_check(
                                    p,
                                    [&](Graph& g, std::vector<Tensor>& q) {
                                        return g.softmax_cross_entropy(g.param(q[0]), labels, w);
                                    })
                             .max_rel;
                     }});
    cases.push_back({"binary_cross_entropy+sigmoid", [](std::uint64_t seed) {
                         Rng rng(seed);
                         std::vector<Tensor> p{random_tensor({5, 3}, rng),
                                               random_tensor({3, 1}, rng)};
                         const auto labels = random_labels(5, 2, rng);
                         std::vector<double> w;
                         for (int i = 0; i < 5; ++i) w.push_back(rng.uniform(0.1, 1.0));
                         return finite_difference_check(
                                    p,
                                    [&](Graph& g, std::vector<Tensor>& q) {
                                        auto z = g.dense(g.param(q[0]), g.param(q[1]),
                                                         g.input(Tensor({1})));
                                        return g.binary_cross_entropy(g.sigmoid(z, 1e-7), labels,
                                                                      w);
                                    })
                             .max_rel;
                     }});
    cases.push_back({"add+scale", [](std::uint64_t seed) {
                         Rng rng(seed);
                         std::vector<Tensor> p{random_tensor({3, 4}, rng),
                                               random_tensor({3, 4}, rng)};
                         const auto labels = random_labels(3, 4, rng);
                         return finite_difference_check(
                                    p,
                                    [&](Graph& g, std::vector<Tensor>& q) {
                                        auto s = g.add(g.scale(g.param(q[0]), 0.7),
                                                       g.scale(g.param(q[1]), -1.3));
                                        return g.softmax_cross_entropy(s, labels);
                                    })
                             .max_rel;
                     }});

    for (const auto& op : cases) {
        for (int trial = 0; trial < 20; ++trial) {
            const double rel = op.run(derive_seed(5000, static_cast<std::uint64_t>(trial)));
            worst_op = std::max(worst_op, rel);
            if (rel >= 1e-4) {
                c.require(false, std::string(op.name) + " trial " + std::to_string(trial) +
                                     " rel " + std::to_string(rel));
                return;
            }
        }
    }

    // end-to-end objectives on a 4-sample batch
    double worst_e2e = 0.0;
    {
        SspdaModel model = build_model(toy_model(3, 4), 321);
        Rng rng(322);
        const Tensor src = random_tensor({4, 3, 12, 12}, rng, 0.0, 1.0);
        const Tensor tgt = random_tensor({4, 3, 12, 12}, rng, 0.0, 1.0);
        const Tensor shuf = random_tensor({4, 3, 12, 12}, rng, 0.0, 1.0);
        const std::vector<int> labels{0, 1, 2, 0};
        const std::vector<int> perms{1, 0, 3, 2};
        GammaWeights gamma;
        gamma.values = {1.0, 0.7, 0.4};
        const double lambda = 0.05;

        for (int which = 0; which < 2; ++which) {
            TrainConfig cfg;
            cfg.alpha_s = 0.0;
            cfg.alpha_t = 1.0;
            cfg.eta = 0.2;
            cfg.lambda_max = which == 0 ? 0.0 : 0.1;
            auto value = [&](SspdaModel& m) {
                Graph g;
                if (which == 0) {
                    return g.value(loss_eq1(g, m, src, labels, tgt, {}, {}, shuf, perms, cfg))
                        .item();
                }
                return g.value(loss_eq2(g, m, src, labels, tgt, shuf, perms, gamma, lambda, cfg))
                    .item();
            };
            model.zero_grads();
            {
                Graph g;
                if (which == 0) {
                    g.backward(loss_eq1(g, model, src, labels, tgt, {}, {}, shuf, perms, cfg));
                } else {
                    g.backward(
                        loss_eq2(g, model, src, labels, tgt, shuf, perms, gamma, lambda, cfg));
                }
            }
            for (auto& [name, p] : model.named_parameters()) {
                const bool domain_param = name.rfind("domain", 0) == 0;
                if (which == 0 && domain_param) continue;  // no domain term in objective 1
                const std::vector<double> analytic =
                    p->has_grad() ? p->grad()
                                  : std::vector<double>(static_cast<std::size_t>(p->numel()), 0.0);
                for (int i = 0; i < p->numel(); ++i) {
                    const double orig = p->data()[i];
                    const double h = 1e-5;
                    p->data()[i] = orig + h;
                    const double fp = value(model);
                    p->data()[i] = orig - h;
                    const double fm = value(model);
                    p->data()[i] = orig;
                    const double fd = (fp - fm) / (2.0 * h);
                    // the discriminator's stored direction is -(1/lambda) times
                    // the derivative of the reported objective value
                    const double want = domain_param ? -fd / lambda : fd;
                    const double a = analytic[static_cast<std::size_t>(i)];
                    const double rel =
                        std::abs(a - want) / std::max({std::abs(a), std::abs(want), 1e-6});
                    worst_e2e = std::max(worst_e2e, rel);
                }
            }
        }
        c.require(worst_e2e < 1e-3, "end-to-end rel " + std::to_string(worst_e2e));
    }

    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    c.require(secs < 60.0, "gradient suite took " + std::to_string(secs) + " s");
    std::ostringstream os;
    os << "max per-op rel " << worst_op << ", end-to-end rel " << worst_e2e << ", " << secs
       << " s";
    c.note(os.str());
}

// ---------------------------------------------------------------------------
// 2. Permutation oracle.
// ---------------------------------------------------------------------------
std::vector<std::vector<int>> exhaustive_lex_greedy(int tiles, int count) {
    std::vector<std::vector<int>> all;
    std::vector<int> cur(static_cast<std::size_t>(tiles));
    std::iota(cur.begin(), cur.end(), 0);
    do {
        all.push_back(cur);
    } while (std::next_permutation(cur.begin(), cur.end()));
    std::vector<std::vector<int>> sel{all.front()};
    while (static_cast<int>(sel.size()) < count) {
        int best = -1;
        std::size_t best_i = 0;
        for (std::size_t i = 0; i < all.size(); ++i) {
            int mind = tiles + 1;
            for (const auto& s : sel) {
                int d = 0;
                for (int j = 0; j < tiles; ++j) {
                    if (all[i][static_cast<std::size_t>(j)] != s[static_cast<std::size_t>(j)]) {
                        ++d;
                    }
                }
                mind = std::min(mind, d);
            }
            if (mind > best) {
                best = mind;
                best_i = i;
            }
        }
        sel.push_back(all[best_i]);
    }
    return sel;
}

void check_permutations(Check& c) {
    for (int count = 1; count <= 24; ++count) {
        const PermutationSet set = select_permutations(2, count);
        const auto oracle = exhaustive_lex_greedy(4, count);
        for (int i = 0; i < count; ++i) {
            c.require(set.perms[static_cast<std::size_t>(i)] ==
                          oracle[static_cast<std::size_t>(i)],
                      "2x2 mismatch at P=" + std::to_string(count) + " index " +
                          std::to_string(i));
        }
        if (!c.ok) return;
    }
    const PermutationSet set = select_permutations(3, 30);
    int mind = 10;
    for (int i = 0; i < set.count(); ++i) {
        for (int j = i + 1; j < set.count(); ++j) {
            mind = std::min(mind, hamming(set.perms[static_cast<std::size_t>(i)],
                                          set.perms[static_cast<std::size_t>(j)]));
        }
    }
    c.require(mind >= 8, "3x3 P=30 min distance " + std::to_string(mind));
    c.note("2x2 matches the exhaustive greedy for every P; 3x3 P=30 min distance " +
           std::to_string(mind));
}

// ---------------------------------------------------------------------------
// 3. Fallback identity over 100 random instances.
// ---------------------------------------------------------------------------
void check_fallback(Check& c) {
    int done = 0;
    for (int trial = 0; trial < 100; ++trial) {
        Rng rng(derive_seed(7000, static_cast<std::uint64_t>(trial)));
        const int classes = 2 + rng.below(3);
        const int perms = 2 + rng.below(4);
        const int n = 2 + rng.below(4);
        SspdaModel model = build_model(toy_model(classes, perms),
                                       derive_seed(7100, static_cast<std::uint64_t>(trial)));
        const Tensor src = random_tensor({n, 3, 12, 12}, rng, 0.0, 1.0);
        const Tensor tgt = random_tensor({n, 3, 12, 12}, rng, 0.0, 1.0);
        const Tensor shuf = random_tensor({n, 3, 12, 12}, rng, 0.0, 1.0);
        const auto labels = random_labels(n, classes, rng);
        const auto perm_labels = random_labels(n, perms, rng);
        GammaWeights ones;
        ones.values.assign(static_cast<std::size_t>(classes), 1.0);
        TrainConfig cfg;
        cfg.alpha_t = 1.0;
        cfg.eta = 0.2;
        cfg.lambda_max = trial % 2 == 0 ? 0.0 : 0.1;

        Graph g1;
        const double v1 =
            g1.value(loss_eq1(g1, model, src, labels, tgt, {}, {}, shuf, perm_labels, cfg))
                .item();
        Graph g2;
        const double v2 =
            g2.value(loss_eq2(g2, model, src, labels, tgt, shuf, perm_labels, ones, 0.0, cfg))
                .item();
        c.require(v1 == v2, "trial " + std::to_string(trial) + ": " + std::to_string(v1) +
                                " != " + std::to_string(v2));
        if (!c.ok) return;
        ++done;
    }
    c.note(std::to_string(done) + " instances bit-identical");
}

// ---------------------------------------------------------------------------
// 4. Gamma contract.
// ---------------------------------------------------------------------------
void check_gamma(Check& c) {
    // exact normalization and order invariance
    {
        SyntheticSpec spec;
        spec.num_classes = 4;
        spec.target_classes = 2;
        spec.image_side = 12;
        spec.samples_per_class = 12;
        spec.seed = 8;
        const SyntheticData data = generate_synthetic(spec);
        SspdaModel model = build_model(toy_model(4, 4), 9);
        const GammaWeights g1 = estimate_gamma(model, data.target);
        c.require(*std::max_element(g1.values.begin(), g1.values.end()) == 1.0,
                  "max(gamma) != 1 exactly");
        Dataset shuffled = data.target;
        Rng rng(10);
        rng.shuffle(shuffled.samples);
        const GammaWeights g2 = estimate_gamma(model, shuffled);
        c.require(g1.values == g2.values, "gamma depends on target ordering");
        if (!c.ok) return;
    }

    // directional mass on the absent classes over a 30-epoch weighted run
    SyntheticSpec spec;  // defaults: C=6, k=3, 200 per class per domain
    const SyntheticData data = generate_synthetic(spec);
    auto [train_set, val_set] = split_validation(data.source, 0.1, 1);
    TrainConfig cfg = parse_config_text("method = sspda_gamma\n").train;
    cfg.epochs = 30;
    cfg.learning_rate = 0.01;
    cfg.seed = 1;
    ModelConfig mc;
    mc.num_classes = spec.num_classes;
    mc.num_permutations = cfg.perm_count;
    SspdaModel model = build_model(mc, cfg.seed);
    const TrainResult r = train(model, train_set, val_set, data.target, cfg);

    auto absent_mass = [&](const std::vector<double>& gamma) {
        double m = 0.0;
        for (int cidx = spec.target_classes; cidx < spec.num_classes; ++cidx) {
            m += gamma[static_cast<std::size_t>(cidx)];
        }
        return m / (spec.num_classes - spec.target_classes);
    };
    // gamma_history[e] is the estimate computed after e epochs of training
    const double after_one = absent_mass(r.gamma_history.at(1));
    const double after_all = absent_mass(r.gamma_final);
    c.require(after_all < after_one, "absent-class mass " + std::to_string(after_one) + " -> " +
                                         std::to_string(after_all));
    std::ostringstream os;
    os << "absent-class gamma mass " << after_one << " after epoch 1 -> " << after_all
       << " after epoch 30";
    c.note(os.str());
}

// ---------------------------------------------------------------------------
// 5. Directional benchmark: three methods, three seeds, quality ordering and
//    the wall-clock budget.
// ---------------------------------------------------------------------------
void check_benchmark(Check& c, const fs::path& workdir) {
    const auto t0 = Clock::now();
    auto run_method = [&](const std::string& method) {
        const std::string config_text =
            "method = " + method +
            "\n"
            "data = synthetic\n"  // default task: C=6, k=3, 48px, 200 per class per domain
            "lr = 0.01\n"
            "epochs = 30\n"
            "repetitions = 3\n"
            "seed = 1\n"
            "output_dir = " +
            (workdir / method).string() + "\n";
        const ExperimentConfig cfg = parse_config_text(config_text);
        return run_experiment(cfg);
    };
    const ExperimentResult source_only = run_method("source_only");
    const ExperimentResult sspda = run_method("sspda");
    const ExperimentResult sspda_pada = run_method("sspda_pada");
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();

    std::ostringstream os;
    os << "target acc: source_only " << source_only.mean_target_acc << "+-"
       << source_only.std_target_acc << ", sspda " << sspda.mean_target_acc << "+-"
       << sspda.std_target_acc << ", sspda_pada " << sspda_pada.mean_target_acc << "+-"
       << sspda_pada.std_target_acc << " (" << static_cast<int>(secs) << " s)";
    c.note(os.str());
    c.require(sspda.mean_target_acc >= source_only.mean_target_acc,
              "sspda " + std::to_string(sspda.mean_target_acc) + " < source_only " +
                  std::to_string(source_only.mean_target_acc));
    c.require(sspda_pada.mean_target_acc >= sspda.mean_target_acc - 0.02,
              "sspda_pada " + std::to_string(sspda_pada.mean_target_acc) + " < sspda - 0.02");
    c.require(secs <= 1200.0, "benchmark took " + std::to_string(secs) + " s (> 20 min)");
}

// ---------------------------------------------------------------------------
// 6. Selection rule against hand-computed sequences.
// ---------------------------------------------------------------------------
void check_selection(Check& c) {
    SelectionState s;
    s = update_selection(s, 0.5, 0.6);
    c.require(s.smoothed == 0.5, "seed value");
    s = update_selection(s, 1.0, 0.6);
    c.require(std::abs(s.smoothed - 0.7) < 1e-15, "0.6*0.5 + 0.4*1.0");

    // longer hand-unrolled sequence
    SelectionState t;
    const double seq[4] = {0.2, 0.4, 0.8, 0.1};
    const double want[4] = {0.2, 0.6 * 0.2 + 0.4 * 0.4, 0.6 * 0.28 + 0.4 * 0.8,
                            0.6 * 0.488 + 0.4 * 0.1};
    for (int e = 0; e < 4; ++e) {
        t = update_selection(t, seq[e], 0.6);
        c.require(std::abs(t.smoothed - want[e]) < 1e-12,
                  "epoch " + std::to_string(e + 1) + " smoothed " + std::to_string(t.smoothed));
    }
    c.require(t.best_epoch == 3, "best epoch should be 3, got " + std::to_string(t.best_epoch));

    SelectionState u;
    for (int e = 0; e < 5; ++e) {
        u = update_selection(u, 0.33, 0.6);
        c.require(std::abs(u.smoothed - 0.33) < 1e-12, "constant sequence fixed point");
    }
    c.note("hand-computed sequences reproduced exactly");
}

// ---------------------------------------------------------------------------
// 7. Determinism through the CLI: identical config + seed, byte-identical CSVs.
// ---------------------------------------------------------------------------
std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void check_determinism(Check& c, const fs::path& workdir) {
    const fs::path cfg_path = workdir / "determinism.cfg";
    {
        std::ofstream cfg(cfg_path);
        cfg << "method = sspda_gamma\n"
               "data = synthetic\n"
               "num_classes = 3\n"
               "target_classes = 2\n"
               "image_side = 12\n"
               "samples_per_class = 12\n"
               "grid_side = 2\n"
               "perm_count = 4\n"
               "batch_source = 8\n"
               "batch_target = 8\n"
               "conv1_channels = 4\n"
               "conv1_kernel = 3\n"
               "conv1_stride = 1\n"
               "pool1 = 2\n"
               "conv2_channels = 8\n"
               "conv2_kernel = 2\n"
               "conv2_stride = 1\n"
               "pool2 = 2\n"
               "gamma_warmup = 1\n"
               "epochs = 3\n"
               "repetitions = 1\n"
               "seed = 5\n";
    }
    for (const char* sub : {"da", "db"}) {
        const std::string cmd = std::string(SSPDA_CLI_PATH) + " train --config " +
                                cfg_path.string() + " --out " + (workdir / sub).string() +
                                " > /dev/null";
        const int rc = std::system(cmd.c_str());
        c.require(rc == 0, std::string("CLI train exited with ") + std::to_string(rc));
        if (!c.ok) return;
    }
    const std::string ma = slurp(workdir / "da" / "run0" / "metrics.csv");
    const std::string mb = slurp(workdir / "db" / "run0" / "metrics.csv");
    c.require(!ma.empty() && ma == mb, "metrics.csv differs between identical runs");
    const std::string ga = slurp(workdir / "da" / "run0" / "gamma.csv");
    const std::string gb = slurp(workdir / "db" / "run0" / "gamma.csv");
    c.require(!ga.empty() && ga == gb, "gamma.csv differs between identical runs");
    c.note("two CLI train runs produced byte-identical metrics and gamma CSVs");
}

}  // namespace

int main() {
    const fs::path workdir = fs::temp_directory_path() / "sspda_acceptance";
    fs::remove_all(workdir);
    fs::create_directories(workdir);

    struct Criterion {
        const char* name;
        std::function<void(Check&)> run;
    };
    const std::vector<Criterion> criteria{
        {"gradient-correctness", check_gradients},
        {"permutation-oracle", check_permutations},
        {"fallback-identity", check_fallback},
        {"gamma-contract", check_gamma},
        {"selection-rule", check_selection},
        {"determinism", [&](Check& c) { check_determinism(c, workdir); }},
        {"directional-benchmark", [&](Check& c) { check_benchmark(c, workdir); }},
    };

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Check check;
        const auto t0 = Clock::now();
        try {
            criteria[i].run(check);
        } catch (const std::exception& e) {
            check.ok = false;
            check.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
        std::printf("[%zu/%zu] %-22s %s (%.1f s)%s%s\n", i + 1, criteria.size(),
                    criteria[i].name, check.ok ? "PASS" : "FAIL", secs,
                    check.detail.empty() ? "" : " -- ", check.detail.c_str());
        std::fflush(stdout);
        if (!check.ok) ++failures;
    }
    if (failures == 0) fs::remove_all(workdir);
    return failures == 0 ? 0 : 1;
}
