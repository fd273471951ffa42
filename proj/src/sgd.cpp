#include "sspda/sgd.hpp"

#include "sspda/errors.hpp"

namespace sspda {

SgdState::SgdState(SgdConfig config, const std::vector<Tensor*>& params) : config_(config) {
    if (config_.learning_rate < 0.0) throw ParameterError("sgd: learning rate must be nonnegative");
    if (config_.momentum < 0.0 || config_.momentum >= 1.0) {
        throw ParameterError("sgd: momentum must be in [0, 1)");
    }
    if (config_.weight_decay < 0.0) throw ParameterError("sgd: weight decay must be nonnegative");
    velocity_.reserve(params.size());
    for (const Tensor* p : params) {
        velocity_.emplace_back(static_cast<std::size_t>(p->numel()), 0.0);
    }
}

void sgd_step(Tensor& param, const std::vector<double>& grad, std::vector<double>& velocity,
              const SgdConfig& config) {
    const auto n = static_cast<std::size_t>(param.numel());
    if (grad.size() != n || velocity.size() != n) {
        throw DimensionError("sgd_step: gradient/velocity size does not match parameter " +
                             param.shape_str());
    }
    double* pd = param.data();
    for (std::size_t i = 0; i < n; ++i) {
        velocity[i] = config.momentum * velocity[i] + grad[i] + config.weight_decay * pd[i];
        pd[i] -= config.learning_rate * velocity[i];
    }
}

void SgdState::step(const std::vector<Tensor*>& params) {
    if (params.size() != velocity_.size()) {
        throw DimensionError("sgd: parameter list changed size since construction");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        sgd_step(*params[i], params[i]->grad(), velocity_[i], config_);
    }
}

}  // namespace sspda
