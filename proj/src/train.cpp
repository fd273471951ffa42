#include "sspda/train.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sspda/errors.hpp"
#include "sspda/eval.hpp"
#include "sspda/jigsaw.hpp"
#include "sspda/sgd.hpp"

namespace sspda {

void TrainConfig::validate() const {
    if (alpha_s < 0.0 || alpha_t < 0.0) throw ParameterError("config: jigsaw weights negative");
    if (eta < 0.0 || eta > 1.0) throw ParameterError("config: eta must be in [0, 1]");
    if (beta < 0.0 || beta > 1.0) throw ParameterError("config: beta must be in [0, 1]");
    if (lambda_max < 0.0) throw ParameterError("config: lambda_max negative");
    if (perm_count < 1) throw ParameterError("config: perm_count must be >= 1");
    if (grid_side < 2 || grid_side > 3) throw ParameterError("config: grid_side must be 2 or 3");
    if (batch_source < 1 || batch_target < 1) throw ParameterError("config: batch sizes < 1");
    if (learning_rate < 0.0) throw ParameterError("config: learning rate negative");
    if (momentum < 0.0 || momentum >= 1.0) throw ParameterError("config: momentum not in [0, 1)");
    if (weight_decay < 0.0) throw ParameterError("config: weight decay negative");
    if (epochs < 1) throw ParameterError("config: epochs must be >= 1");
    if (gamma_warmup_epochs < 0) throw ParameterError("config: gamma warmup must be >= 0");
    if (selection_w < 0.0 || selection_w > 1.0) {
        throw ParameterError("config: selection_w must be in [0, 1]");
    }
}

GammaWeights normalize_gamma(const Tensor& posteriors) {
    if (posteriors.rank() != 2) throw DimensionError("normalize_gamma: expected [n x C]");
    const int n = posteriors.dim(0), classes = posteriors.dim(1);
    GammaWeights gamma;
    gamma.values.assign(static_cast<std::size_t>(classes), 0.0);
    // Summing each class column in sorted order makes the estimate exactly
    // independent of the row ordering.
    std::vector<double> column(static_cast<std::size_t>(n));
    for (int c = 0; c < classes; ++c) {
        for (int i = 0; i < n; ++i) {
            column[static_cast<std::size_t>(i)] =
                posteriors.data()[static_cast<std::size_t>(i) * classes + c];
        }
        std::sort(column.begin(), column.end());
        double acc = 0.0;
        for (double v : column) acc += v;
        gamma.values[static_cast<std::size_t>(c)] = acc / n;
    }
    const double top = *std::max_element(gamma.values.begin(), gamma.values.end());
    for (double& v : gamma.values) v /= top;
    return gamma;
}

GammaWeights estimate_gamma(SspdaModel& model, const Dataset& target) {
    if (target.empty()) throw ParameterError("estimate_gamma: empty target set");
    std::vector<int> all(static_cast<std::size_t>(target.size()));
    for (int i = 0; i < target.size(); ++i) all[static_cast<std::size_t>(i)] = i;
    return normalize_gamma(predict_posteriors(model, target, all));
}

namespace {

void check_term(double value, const char* term) {
    if (!std::isfinite(value)) {
        throw DivergenceError(std::string("non-finite loss in term '") + term + "'");
    }
}

std::vector<double> source_gamma_weights(const GammaWeights& gamma,
                                         const std::vector<int>& labels) {
    std::vector<double> w;
    w.reserve(labels.size());
    for (int y : labels) {
        if (y < 0 || y >= static_cast<int>(gamma.values.size())) {
            throw IndexError("gamma weighting: label out of range");
        }
        w.push_back(gamma.values[static_cast<std::size_t>(y)]);
    }
    return w;
}

std::vector<double> target_gamma_weights(const GammaWeights& gamma, const Tensor& posteriors) {
    const int n = posteriors.dim(0), classes = posteriors.dim(1);
    std::vector<double> w(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double* row = posteriors.data() + static_cast<std::size_t>(i) * classes;
        int best = 0;
        for (int c = 1; c < classes; ++c) {
            if (row[c] > row[best]) best = c;
        }
        w[static_cast<std::size_t>(i)] = gamma.values[static_cast<std::size_t>(best)];
    }
    return w;
}

}  // namespace

Graph::NodeId loss_eq1(Graph& g, SspdaModel& model, const Tensor& source_images,
                       const std::vector<int>& source_labels, const Tensor& target_images,
                       const Tensor& shuffled_source_images,
                       const std::vector<int>& source_perm_labels,
                       const Tensor& shuffled_target_images,
                       const std::vector<int>& target_perm_labels, const TrainConfig& config,
                       LossTerms* terms) {
    if (source_images.numel() == 0) throw ParameterError("loss_eq1: empty source batch");

    auto f_src = forward_features(g, model, g.input(source_images));
    auto cls = g.softmax_cross_entropy(forward_class(g, model, f_src), source_labels);
    auto root = cls;

    LossTerms t;
    t.classification = g.value(cls).item();

    if (config.alpha_s != 0.0) {
        auto f_ss = forward_features(g, model, g.input(shuffled_source_images));
        auto jig_s = g.softmax_cross_entropy(forward_puzzle(g, model, f_ss), source_perm_labels);
        t.jigsaw_source = g.value(jig_s).item();
        root = g.add(root, g.scale(jig_s, config.alpha_s));
    }
    if (config.eta != 0.0) {
        if (target_images.numel() == 0) throw ParameterError("loss_eq1: empty target batch");
        auto f_tgt = forward_features(g, model, g.input(target_images));
        auto probs = g.softmax(forward_class(g, model, f_tgt));
        auto ent = g.entropy_loss(probs);
        t.entropy = g.value(ent).item();
        root = g.add(root, g.scale(ent, config.eta));
    }
    if (config.alpha_t != 0.0) {
        auto f_st = forward_features(g, model, g.input(shuffled_target_images));
        auto jig_t = g.softmax_cross_entropy(forward_puzzle(g, model, f_st), target_perm_labels);
        t.jigsaw_target = g.value(jig_t).item();
        root = g.add(root, g.scale(jig_t, config.alpha_t));
    }
    t.total = g.value(root).item();
    if (terms) *terms = t;
    return root;
}

Graph::NodeId loss_eq2(Graph& g, SspdaModel& model, const Tensor& source_images,
                       const std::vector<int>& source_labels, const Tensor& target_images,
                       const Tensor& shuffled_target_images,
                       const std::vector<int>& target_perm_labels, const GammaWeights& gamma,
                       double lambda, const TrainConfig& config, LossTerms* terms) {
    if (source_images.numel() == 0) throw ParameterError("loss_eq2: empty source batch");
    if (target_images.numel() == 0) throw ParameterError("loss_eq2: empty target batch");
    if (gamma.values.size() != static_cast<std::size_t>(model.config.num_classes)) {
        throw DimensionError("loss_eq2: gamma size does not match class count");
    }
    if (lambda < 0.0) throw ParameterError("loss_eq2: lambda must be nonnegative");

    const std::vector<double> w_src = source_gamma_weights(gamma, source_labels);

    auto f_src = forward_features(g, model, g.input(source_images));
    auto cls = g.softmax_cross_entropy(forward_class(g, model, f_src), source_labels, w_src);
    auto root = cls;

    LossTerms t;
    t.classification = g.value(cls).item();

    auto f_tgt = forward_features(g, model, g.input(target_images));
    auto probs = g.softmax(forward_class(g, model, f_tgt));
    const std::vector<double> w_tgt = target_gamma_weights(gamma, g.value(probs));

    if (config.eta != 0.0) {
        auto ent = config.gamma_target_mode == GammaTargetMode::kArgmax
                       ? g.entropy_loss(probs, w_tgt)
                       : g.entropy_loss(probs, {}, gamma.values);
        t.entropy = g.value(ent).item();
        root = g.add(root, g.scale(ent, config.eta));
    }
    if (config.alpha_t != 0.0) {
        auto f_st = forward_features(g, model, g.input(shuffled_target_images));
        auto jig_t = g.softmax_cross_entropy(forward_puzzle(g, model, f_st), target_perm_labels);
        t.jigsaw_target = g.value(jig_t).item();
        root = g.add(root, g.scale(jig_t, config.alpha_t));
    }

    if (config.lambda_max > 0.0) {
        // Discriminator sees source as 1, target as 0. The branch value is
        // lambda * mean(w ln D) + lambda * mean(w ln(1-D)); its backward routes
        // the plain weighted-BCE descent direction into the discriminator while
        // the reversal layer inside forward_domain handles the feature side.
        auto p_src = forward_domain(g, model, f_src, lambda);
        auto p_tgt = forward_domain(g, model, f_tgt, lambda);
        std::vector<int> src_dom(static_cast<std::size_t>(source_images.dim(0)), 1);
        std::vector<int> tgt_dom(static_cast<std::size_t>(target_images.dim(0)), 0);
        auto bce_src = g.binary_cross_entropy(p_src, std::move(src_dom), w_src);
        auto bce_tgt = g.binary_cross_entropy(p_tgt, std::move(tgt_dom), w_tgt);
        auto dom_src = g.adversarial_scale(g.scale(bce_src, -1.0), lambda);
        auto dom_tgt = g.adversarial_scale(g.scale(bce_tgt, -1.0), lambda);
        auto dom = g.add(dom_src, dom_tgt);
        t.domain = g.value(dom).item();
        root = g.add(root, dom);
    }

    t.total = g.value(root).item();
    if (terms) *terms = t;
    return root;
}

SelectionState update_selection(SelectionState state, double epoch_val_accuracy, double w) {
    if (epoch_val_accuracy < 0.0 || epoch_val_accuracy > 1.0) {
        throw ParameterError("update_selection: accuracy must be in [0, 1]");
    }
    if (w < 0.0 || w > 1.0) throw ParameterError("update_selection: w must be in [0, 1]");
    if (state.epochs_seen == 0) {
        state.smoothed = epoch_val_accuracy;
    } else {
        state.smoothed = w * state.smoothed + (1.0 - w) * epoch_val_accuracy;
    }
    ++state.epochs_seen;
    if (state.smoothed > state.best_smoothed) {
        state.best_smoothed = state.smoothed;
        state.best_epoch = state.epochs_seen;
    }
    return state;
}

TrainResult train(SspdaModel& model, const Dataset& source_train, const Dataset& source_val,
                  const Dataset& target, const TrainConfig& config,
                  const TrainCallbacks& callbacks) {
    config.validate();
    if (source_train.empty()) throw ParameterError("train: empty source training set");
    if (target.empty()) throw ParameterError("train: empty target set");
    for (const auto& s : source_train.samples) {
        if (s.label < 0 || s.label >= model.config.num_classes) {
            throw IndexError("train: source label outside the class set");
        }
    }

    const bool needs_target = config.eta != 0.0 || config.alpha_t != 0.0 ||
                              config.lambda_max > 0.0 || config.use_gamma;
    const bool target_labeled =
        std::all_of(target.samples.begin(), target.samples.end(),
                    [](const Sample& s) { return s.label >= 0; });
    const bool use_eq2 = config.use_gamma || config.lambda_max > 0.0;
    if (use_eq2 && config.alpha_s != 0.0) {
        throw ParameterError("train: the class-weighted objective has no source jigsaw term");
    }

    const PermutationSet perms = select_permutations(config.grid_side, config.perm_count);
    if (model.config.num_permutations != perms.count()) {
        throw ParameterError("train: model puzzle head width != permutation count");
    }

    Rng batch_rng(derive_seed(config.seed, 1));
    Rng shuffle_rng(derive_seed(config.seed, 2));
    Rng eval_rng(derive_seed(config.seed, 3));

    // One probe plan to size the schedule; per-epoch plans are drawn in order.
    const int steps_per_epoch = [&] {
        Rng probe(0);
        return make_batches(source_train.size(), target.size(), config.batch_source,
                            config.batch_target, probe)
            .steps();
    }();
    const LambdaSchedule schedule{config.lambda_max,
                                  config.lambda_per_epoch ? config.epochs
                                                          : config.epochs * steps_per_epoch};

    SgdState sgd({config.learning_rate, config.momentum, config.weight_decay},
                 model.parameters());
    const std::vector<Tensor*> params = model.parameters();

    GammaWeights ones;
    ones.values.assign(static_cast<std::size_t>(model.config.num_classes), 1.0);

    TrainResult result;
    SelectionState selection;
    int global_step = 0;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        GammaWeights gamma = ones;
        if (config.use_gamma) {
            const GammaWeights estimate = estimate_gamma(model, target);
            result.gamma_history.push_back(estimate.values);
            if (epoch > config.gamma_warmup_epochs) gamma = estimate;
        }

        BatchPlan plan = make_batches(source_train.size(), target.size(), config.batch_source,
                                      config.batch_target, batch_rng);
        LossTerms epoch_mean;
        double lambda = 0.0;

        for (int step = 0; step < plan.steps(); ++step) {
            lambda = config.lambda_per_epoch ? lambda_at(schedule, epoch - 1)
                                             : lambda_at(schedule, global_step);

            const auto& src_idx = plan.source_indices[static_cast<std::size_t>(step)];
            const auto& tgt_idx = plan.target_indices[static_cast<std::size_t>(step)];
            const Tensor src_images = pack_images(source_train, src_idx);
            const std::vector<int> src_labels = gather_labels(source_train, src_idx);

            Tensor tgt_images;
            if (needs_target) tgt_images = pack_images(target, tgt_idx);

            Tensor shuf_src_images;
            std::vector<int> shuf_src_perms;
            if (config.alpha_s != 0.0) {
                std::vector<Tensor> shuffled;
                for (int idx : src_idx) {
                    auto [img, p] = maybe_shuffle(
                        source_train.samples[static_cast<std::size_t>(idx)].image, perms,
                        config.beta, shuffle_rng);
                    shuffled.push_back(std::move(img));
                    shuf_src_perms.push_back(p);
                }
                shuf_src_images = Tensor({static_cast<int>(shuffled.size()), shuffled[0].dim(0),
                                          shuffled[0].dim(1), shuffled[0].dim(2)});
                for (std::size_t i = 0; i < shuffled.size(); ++i) {
                    std::copy(shuffled[i].data(), shuffled[i].data() + shuffled[i].numel(),
                              shuf_src_images.data() +
                                  i * static_cast<std::size_t>(shuffled[i].numel()));
                }
            }

            Tensor shuf_tgt_images;
            std::vector<int> shuf_tgt_perms;
            if (config.alpha_t != 0.0) {
                std::vector<Tensor> shuffled;
                for (int idx : tgt_idx) {
                    auto [img, p] =
                        maybe_shuffle(target.samples[static_cast<std::size_t>(idx)].image, perms,
                                      config.beta, shuffle_rng);
                    shuffled.push_back(std::move(img));
                    shuf_tgt_perms.push_back(p);
                }
                shuf_tgt_images = Tensor({static_cast<int>(shuffled.size()), shuffled[0].dim(0),
                                          shuffled[0].dim(1), shuffled[0].dim(2)});
                for (std::size_t i = 0; i < shuffled.size(); ++i) {
                    std::copy(shuffled[i].data(), shuffled[i].data() + shuffled[i].numel(),
                              shuf_tgt_images.data() +
                                  i * static_cast<std::size_t>(shuffled[i].numel()));
                }
            }

            model.zero_grads();
            Graph g;
            LossTerms t;
            Graph::NodeId root;
            if (use_eq2) {
                root = loss_eq2(g, model, src_images, src_labels, tgt_images, shuf_tgt_images,
                                shuf_tgt_perms, gamma, lambda, config, &t);
            } else {
                root = loss_eq1(g, model, src_images, src_labels, tgt_images, shuf_src_images,
                                shuf_src_perms, shuf_tgt_images, shuf_tgt_perms, config, &t);
            }
            check_term(t.classification, "classification");
            check_term(t.jigsaw_source, "jigsaw_source");
            check_term(t.jigsaw_target, "jigsaw_target");
            check_term(t.entropy, "entropy");
            check_term(t.domain, "domain");
            check_term(t.total, "total");

            g.backward(root);
            sgd.step(params);
            ++global_step;

            epoch_mean.total += t.total;
            epoch_mean.classification += t.classification;
            epoch_mean.jigsaw_target += t.jigsaw_target;
            epoch_mean.entropy += t.entropy;
            epoch_mean.domain += t.domain;
        }

        const double inv_steps = 1.0 / plan.steps();
        EpochMetrics m;
        m.epoch = epoch;
        m.loss_total = epoch_mean.total * inv_steps;
        m.loss_cls = epoch_mean.classification * inv_steps;
        m.loss_jigsaw_t = epoch_mean.jigsaw_target * inv_steps;
        m.loss_entropy = epoch_mean.entropy * inv_steps;
        m.loss_domain = epoch_mean.domain * inv_steps;
        m.lambda = lambda;
        m.val_acc = source_val.empty() ? 0.0 : evaluate(model, source_val, 1, eval_rng);
        selection = update_selection(selection, m.val_acc, config.selection_w);
        m.smoothed_val_acc = selection.smoothed;
        if (selection.best_epoch == epoch) {
            result.best_model = model;  // snapshot
        }
        m.target_acc_oracle = target_labeled ? evaluate(model, target, 1, eval_rng) : 0.0;
        result.history.push_back(m);
        if (callbacks.on_epoch) callbacks.on_epoch(m);
    }

    if (config.use_gamma) result.gamma_final = estimate_gamma(model, target).values;
    result.best_epoch = selection.best_epoch;
    result.best_smoothed_val = selection.best_smoothed;
    return result;
}

}  // namespace sspda
