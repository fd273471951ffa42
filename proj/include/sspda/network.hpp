#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sspda/graph.hpp"
#include "sspda/tensor.hpp"

namespace sspda {

/// Desk-scale backbone layout: two conv blocks (conv -> relu -> max_pool),
/// then global average pooling down to feature_dim (= conv2_channels).
/// Heads: object classifier, puzzle classifier, and a three-layer domain
/// discriminator with relu hiddens of width feature_dim/2 and a sigmoid out.
struct ModelConfig {
    int image_side = 48;
    int in_channels = 3;
    int conv1_channels = 8;
    int conv1_kernel = 5;
    int conv1_stride = 2;
    int pool1 = 2;
    int conv2_channels = 64;
    int conv2_kernel = 3;
    int conv2_stride = 1;
    int pool2 = 3;
    int num_classes = 6;
    int num_permutations = 30;

    int feature_dim() const { return conv2_channels; }
    int domain_hidden() const { return conv2_channels / 2; }

    void validate() const;

    // Spatial sides after each stage; throws if pooling windows do not divide.
    std::vector<int> stage_sides() const;
};

struct SspdaModel {
    ModelConfig config;

    Tensor conv1;  // [c1, cin, k1, k1]
    Tensor conv2;  // [c2, c1, k2, k2]
    Tensor object_w, object_b;
    Tensor puzzle_w, puzzle_b;
    Tensor domain_w1, domain_b1, domain_w2, domain_b2, domain_w3, domain_b3;

    std::vector<Tensor*> parameters();
    std::vector<std::pair<std::string, Tensor*>> named_parameters();
    void zero_grads();
    long long parameter_count() const;
};

// Deterministic init: weights uniform in +-1/sqrt(fan_in), all biases zero.
SspdaModel build_model(const ModelConfig& config, std::uint64_t seed);

// Backbone over a [batch x c x h x w] input node; returns [batch x F].
Graph::NodeId forward_features(Graph& g, SspdaModel& model, Graph::NodeId images);
Graph::NodeId forward_class(Graph& g, SspdaModel& model, Graph::NodeId features);
Graph::NodeId forward_puzzle(Graph& g, SspdaModel& model, Graph::NodeId features);

// Applies gradient_reversal(features, lambda), then the discriminator.
// Output in (0, 1), shape [batch x 1].
Graph::NodeId forward_domain(Graph& g, SspdaModel& model, Graph::NodeId features, double lambda);

/// Warm-up schedule for the adversarial weight: 0 at step 0, saturating at
/// lambda_max. lambda(step) = lambda_max * (2 / (1 + exp(-10 q)) - 1) with
/// q = step / total_steps.
struct LambdaSchedule {
    double lambda_max = 0.0;
    int total_steps = 1;
};

double lambda_at(const LambdaSchedule& schedule, int step);

// Checkpoint: text header (config + parameter names/shapes), then raw
// little-endian 64-bit floats in header order. Round-trips bit-exactly.
void save_checkpoint(const SspdaModel& model, const std::string& path);
SspdaModel load_checkpoint(const std::string& path);

}  // namespace sspda
