#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "sspda/data.hpp"
#include "sspda/graph.hpp"
#include "sspda/network.hpp"
#include "sspda/tensor.hpp"

namespace sspda {

// How the per-class weights enter the target-side objective: scale each
// sample's entropy by the weight of its predicted class (argmax), or weight
// the entropy sum per class inside each row.
enum class GammaTargetMode { kArgmax, kElementwise };

struct TrainConfig {
    double alpha_s = 0.0;   // source jigsaw weight
    double alpha_t = 1.0;   // target jigsaw weight
    double eta = 0.2;       // target entropy weight
    double beta = 0.7;      // probability of leaving an image unshuffled
    double lambda_max = 0.0;  // adversarial weight ceiling; 0 disables the domain head
    bool use_gamma = false;
    // Epochs that train with unit class weights before the gamma estimate is
    // applied. A cold-started classifier produces noisy posteriors, and
    // feeding those straight back as loss weights can starve classes; the
    // estimate itself is still computed (and logged) from epoch one.
    int gamma_warmup_epochs = 5;
    GammaTargetMode gamma_target_mode = GammaTargetMode::kArgmax;
    bool lambda_per_epoch = false;  // default: advance the schedule every step
    int perm_count = 30;
    int grid_side = 3;
    int batch_source = 32;
    int batch_target = 32;
    double learning_rate = 0.0005;
    double momentum = 0.9;
    double weight_decay = 0.0005;
    int epochs = 30;
    double selection_w = 0.6;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Normalized class-importance weights; max entry is exactly 1.
struct GammaWeights {
    std::vector<double> values;
};

// Column means of a [n x C] posterior matrix divided by the largest mean.
// Columns are summed in sorted order, so the result is exactly independent
// of row ordering.
GammaWeights normalize_gamma(const Tensor& posteriors);

// Mean softmax posterior of the object head over all target images, divided
// by its maximum entry. Order of the target set does not affect the result.
GammaWeights estimate_gamma(SspdaModel& model, const Dataset& target);

struct LossTerms {
    double total = 0.0;
    double classification = 0.0;
    double jigsaw_source = 0.0;
    double jigsaw_target = 0.0;
    double entropy = 0.0;
    double domain = 0.0;  // lambda-scaled adversarial term as it enters the total
};

// Multi-task objective: source cross-entropy + alpha_s * source jigsaw +
// eta * target entropy + alpha_t * target jigsaw. Terms with a zero
// coefficient are skipped entirely (their batch tensors may be empty).
Graph::NodeId loss_eq1(Graph& g, SspdaModel& model, const Tensor& source_images,
                       const std::vector<int>& source_labels, const Tensor& target_images,
                       const Tensor& shuffled_source_images,
                       const std::vector<int>& source_perm_labels,
                       const Tensor& shuffled_target_images,
                       const std::vector<int>& target_perm_labels, const TrainConfig& config,
                       LossTerms* terms = nullptr);

// Class-weighted objective with an adversarial domain discriminator:
//   mean_src gamma_y * (CE + lambda ln D(f))
// + mean_tgt gamma_yhat * (eta H + lambda ln(1 - D(f)))
// + alpha_t * target jigsaw.
// The returned scalar is that value; one backward pass descends the
// feature/classifier parameters on it while the discriminator parameters
// receive their own (unscaled, unreversed) descent direction.
// With lambda = 0 and gamma all ones this equals loss_eq1 with alpha_s = 0
// bit for bit.
Graph::NodeId loss_eq2(Graph& g, SspdaModel& model, const Tensor& source_images,
                       const std::vector<int>& source_labels, const Tensor& target_images,
                       const Tensor& shuffled_target_images,
                       const std::vector<int>& target_perm_labels, const GammaWeights& gamma,
                       double lambda, const TrainConfig& config, LossTerms* terms = nullptr);

/// Smoothed validation-accuracy tracker used for checkpoint selection:
/// smoothed <- w * previous + (1 - w) * current, seeded with the first value.
struct SelectionState {
    int epochs_seen = 0;
    double smoothed = 0.0;
    double best_smoothed = -1.0;
    int best_epoch = 0;  // 1-based
};

SelectionState update_selection(SelectionState state, double epoch_val_accuracy, double w);

struct EpochMetrics {
    int epoch = 0;
    double loss_total = 0.0;
    double loss_cls = 0.0;
    double loss_jigsaw_t = 0.0;
    double loss_entropy = 0.0;
    double loss_domain = 0.0;
    double lambda = 0.0;  // value used at the last step of the epoch
    double val_acc = 0.0;
    double smoothed_val_acc = 0.0;
    double target_acc_oracle = 0.0;  // diagnostics only, never drives selection
};

struct TrainCallbacks {
    std::function<void(const EpochMetrics&)> on_epoch;
};

struct TrainResult {
    std::vector<EpochMetrics> history;
    std::vector<std::vector<double>> gamma_history;  // weights used in each epoch
    std::vector<double> gamma_final;                 // re-estimated after training
    SspdaModel best_model;
    int best_epoch = 0;
    double best_smoothed_val = 0.0;
};

// Full training loop. The target dataset is treated as unlabeled except for
// the per-epoch oracle accuracy column.
TrainResult train(SspdaModel& model, const Dataset& source_train, const Dataset& source_val,
                  const Dataset& target, const TrainConfig& config,
                  const TrainCallbacks& callbacks = {});

}  // namespace sspda
