#include "sspda/eval.hpp"

#include <algorithm>
#include <cmath>

#include "sspda/errors.hpp"
#include "sspda/graph.hpp"

namespace sspda {

namespace {

constexpr int kChunk = 64;

int argmax_row(const double* row, int width) {
    int best = 0;
    for (int c = 1; c < width; ++c) {
        if (row[c] > row[best]) best = c;
    }
    return best;
}

Tensor crop_and_resize(const Tensor& image, int crop_side, int top, int left) {
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    Tensor crop({c, crop_side, crop_side});
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < crop_side; ++y) {
            for (int x = 0; x < crop_side; ++x) {
                crop.at(ch, y, x) = image.at(ch, top + y, left + x);
            }
        }
    }
    (void)h;
    (void)w;
    return resize_nearest(crop, image.dim(1), image.dim(2));
}

Tensor posteriors_for_batch(SspdaModel& model, const Tensor& images) {
    Graph g;
    auto feats = forward_features(g, model, g.input(images));
    auto probs = g.softmax(forward_class(g, model, feats));
    return g.value(probs);
}

}  // namespace

Tensor predict_posteriors(SspdaModel& model, const Dataset& data,
                          const std::vector<int>& indices) {
    if (indices.empty()) throw ParameterError("predict_posteriors: empty index list");
    const int classes = model.config.num_classes;
    Tensor out({static_cast<int>(indices.size()), classes});
    for (std::size_t start = 0; start < indices.size(); start += kChunk) {
        const std::size_t end = std::min(indices.size(), start + kChunk);
        std::vector<int> chunk(indices.begin() + static_cast<long>(start),
                               indices.begin() + static_cast<long>(end));
        const Tensor probs = posteriors_for_batch(model, pack_images(data, chunk));
        std::copy(probs.data(), probs.data() + probs.numel(),
                  out.data() + static_cast<std::size_t>(start) * classes);
    }
    return out;
}

double evaluate(SspdaModel& model, const Dataset& data, int crops, Rng& rng) {
    if (crops < 1) throw ParameterError("evaluate: crops must be >= 1");
    if (data.empty()) throw ParameterError("evaluate: empty dataset");
    for (const auto& s : data.samples) {
        if (s.label < 0) throw ContractError("evaluate: dataset has unlabeled samples");
    }
    const int classes = model.config.num_classes;
    int correct = 0;

    if (crops == 1) {
        std::vector<int> all(data.samples.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
        const Tensor probs = predict_posteriors(model, data, all);
        for (std::size_t i = 0; i < all.size(); ++i) {
            const int pred = argmax_row(probs.data() + i * static_cast<std::size_t>(classes),
                                        classes);
            if (pred == data.samples[i].label) ++correct;
        }
        return static_cast<double>(correct) / data.size();
    }

    for (const auto& sample : data.samples) {
        const int side_h = sample.image.dim(1), side_w = sample.image.dim(2);
        const int crop_h = std::max(1, static_cast<int>(std::lround(0.9 * side_h)));
        const int crop_w = std::max(1, static_cast<int>(std::lround(0.9 * side_w)));
        const int crop_side = std::min(crop_h, crop_w);
        Tensor batch({crops, sample.image.dim(0), side_h, side_w});
        const int plane = sample.image.numel();
        for (int k = 0; k < crops; ++k) {
            const int top = rng.below(side_h - crop_side + 1);
            const int left = rng.below(side_w - crop_side + 1);
            const Tensor view = crop_and_resize(sample.image, crop_side, top, left);
            std::copy(view.data(), view.data() + plane,
                      batch.data() + static_cast<std::size_t>(k) * plane);
        }
        const Tensor probs = posteriors_for_batch(model, batch);
        std::vector<double> mean(static_cast<std::size_t>(classes), 0.0);
        for (int k = 0; k < crops; ++k) {
            for (int c = 0; c < classes; ++c) {
                mean[static_cast<std::size_t>(c)] +=
                    probs.data()[static_cast<std::size_t>(k) * classes + c];
            }
        }
        if (argmax_row(mean.data(), classes) == sample.label) ++correct;
    }
    return static_cast<double>(correct) / data.size();
}

}  // namespace sspda
