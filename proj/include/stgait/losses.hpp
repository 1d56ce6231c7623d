#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "stgait/ops.hpp"

namespace stgait {

/// Per-class weights w_c (empty means all ones). Reduction is the mean over
/// the minibatch: loss = -(1/N) sum_n w_{y_n} log softmax(x_n)[y_n].
struct CrossEntropyConfig {
    std::vector<double> class_weights;

    void validate(Index num_classes) const {
        if (class_weights.empty()) return;
        if (static_cast<Index>(class_weights.size()) != num_classes) {
            throw ValidationError("class weight count " + std::to_string(class_weights.size()) +
                                  " does not match " + std::to_string(num_classes) + " classes");
        }
        bool any = false;
        for (double w : class_weights) {
            if (!std::isfinite(w) || w < 0) throw ValidationError("class weights must be finite and non-negative");
            any = any || w > 0;
        }
        if (!any) throw ValidationError("class weights are all zero");
    }

    double weight(Index c) const { return class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(c)]; }
};

/// w_c = N / (C * n_c); classes absent from `labels` get weight 0.
std::vector<double> inverse_frequency_weights(std::span<const int> labels, int num_classes);

/// Weighted cross-entropy of logits[N, C] against class indices,
/// stabilized with log-sum-exp.
template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, std::span<const int> targets,
                             const CrossEntropyConfig& cfg = {}) {
    if (logits.ndim() != 2) throw DimensionError("cross_entropy: logits must be [N, C], got " + to_string(logits.shape()));
    const Index n = logits.dim(0), c = logits.dim(1);
    if (static_cast<Index>(targets.size()) != n) {
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) +
                             " rows");
    }
    cfg.validate(c);
    for (int t : targets) {
        if (t < 0 || t >= c) throw ValidationError("cross_entropy: target " + std::to_string(t) + " out of range");
    }
    Vec<Scalar> probs(n * c);
    Scalar total = 0;
    for (Index i = 0; i < n; ++i) {
        auto row = logits.data().segment(i * c, c);
        const Scalar mx = row.maxCoeff();
        const Scalar z = (row.array() - mx).exp().sum();
        const Scalar lse = mx + std::log(z);
        probs.segment(i * c, c) = (row.array() - lse).exp();
        total += static_cast<Scalar>(cfg.weight(targets[i])) * (lse - row[targets[i]]);
    }
    std::vector<int> tgt(targets.begin(), targets.end());
    std::vector<Scalar> w(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) w[i] = static_cast<Scalar>(cfg.weight(tgt[i]));
    return detail::make_result<Scalar>(
        {1}, Vec<Scalar>::Constant(1, total / Scalar(n)), {logits},
        [n, c, probs = std::move(probs), tgt = std::move(tgt), w = std::move(w)](TensorNode<Scalar>& self) {
            auto& g = self.inputs[0]->grad_buffer();
            const Scalar upstream = self.grad[0] / Scalar(n);
            for (Index i = 0; i < n; ++i) {
                for (Index k = 0; k < c; ++k) {
                    const Scalar onehot = k == tgt[i] ? Scalar(1) : Scalar(0);
                    g[i * c + k] += upstream * w[i] * (probs[i * c + k] - onehot);
                }
            }
        });
}

}  // namespace stgait
