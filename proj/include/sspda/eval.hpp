#pragma once

#include <vector>

#include "sspda/data.hpp"
#include "sspda/network.hpp"
#include "sspda/rng.hpp"
#include "sspda/tensor.hpp"

namespace sspda {

// Object-head softmax posteriors for the given rows, [n x num_classes].
// Forward only; the model is not modified.
Tensor predict_posteriors(SspdaModel& model, const Dataset& data,
                          const std::vector<int>& indices);

// Classification accuracy on a labeled dataset (the oracle path for target
// data). crops == 1 uses one full-image forward; crops > 1 averages the
// softmax over that many random crops of 90% side length, each resized back
// to the input size.
double evaluate(SspdaModel& model, const Dataset& data, int crops, Rng& rng);

}  // namespace sspda
