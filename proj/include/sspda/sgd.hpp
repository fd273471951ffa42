#pragma once

#include <vector>

#include "sspda/tensor.hpp"

namespace sspda {

/// SGD with classical momentum and decoupled-from-nothing weight decay:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - learning_rate * v
struct SgdConfig {
    double learning_rate = 0.0005;
    double momentum = 0.9;
    double weight_decay = 0.0005;
};

class SgdState {
public:
    SgdState(SgdConfig config, const std::vector<Tensor*>& params);

    // One update over all parameters; reads each param's grad buffer.
    void step(const std::vector<Tensor*>& params);

    const SgdConfig& config() const { return config_; }
    const std::vector<std::vector<double>>& velocity() const { return velocity_; }

private:
    SgdConfig config_;
    std::vector<std::vector<double>> velocity_;  // one buffer per parameter, same shape
};

// Single-tensor update, the primitive SgdState::step is built from.
void sgd_step(Tensor& param, const std::vector<double>& grad, std::vector<double>& velocity,
              const SgdConfig& config);

}  // namespace sspda
