#pragma once

// SGD with momentum, RMSProp with momentum, and Adam. Weight decay is
// classical L2: lambda * theta is added to the gradient before the update.
//
//   SGD:     v <- mu v + g';                            theta <- theta - lr v
//   RMSProp: s <- a s + (1-a) g'^2;  b <- mu b + g'/sqrt(s + eps);  theta <- theta - lr b
//   Adam:    m <- b1 m + (1-b1) g';  v <- b2 v + (1-b2) g'^2
//            theta <- theta - lr mhat / (sqrt(vhat) + eps)
// with g' = g + lambda theta.

#include <cmath>
#include <string>
#include <vector>

#include "stgait/model.hpp"

namespace stgait {

enum class OptimizerKind { SGD, Adam, RMSProp };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::RMSProp;
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 3e-4;
    double rms_alpha = 0.99;
    double eps = 1e-8;
    double beta1 = 0.9;
    double beta2 = 0.999;

    void validate() const {
        if (!(lr > 0) || momentum < 0 || momentum >= 1 || weight_decay < 0 || !(eps > 0) || rms_alpha <= 0 ||
            rms_alpha >= 1 || beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
            throw ValidationError("optimizer hyperparameters out of range");
        }
    }
};

/// Step decay: lr is multiplied by `factor` at each milestone epoch.
struct StepDecay {
    std::vector<int> milestones;
    double factor = 0.1;

    double lr_at(double base_lr, int epoch) const {
        double lr = base_lr;
        for (int m : milestones) lr *= epoch >= m ? factor : 1.0;
        return lr;
    }
};

template <typename Scalar>
class Optimizer {
public:
    Optimizer(const OptimizerConfig& cfg, std::vector<std::pair<std::string, Tensor<Scalar>>> params)
        : cfg_(cfg), params_(std::move(params)) {
        cfg_.validate();
        for (const auto& [name, t] : params_) {
            first_.push_back(Vec<Scalar>::Zero(t.size()));
            second_.push_back(Vec<Scalar>::Zero(t.size()));
        }
    }

    const OptimizerConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }
    long steps() const { return steps_; }

    void zero_grad() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

    /// One update of every trainable parameter with a populated gradient.
    /// Throws NumericError, leaving all parameters untouched, when any
    /// gradient is non-finite.
    void step() {
        for (const auto& [name, t] : params_) {
            if (t.requires_grad() && t.has_grad() && !t.grad().allFinite()) {
                throw NumericError("non-finite gradient in parameter '" + name + "'");
            }
        }
        ++steps_;
        const Scalar lr = static_cast<Scalar>(cfg_.lr), mu = static_cast<Scalar>(cfg_.momentum);
        const Scalar wd = static_cast<Scalar>(cfg_.weight_decay), eps = static_cast<Scalar>(cfg_.eps);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor<Scalar>& p = params_[i].second;
            if (!p.requires_grad() || !p.has_grad()) continue;
            Vec<Scalar> g = p.grad() + wd * p.data();
            Vec<Scalar>& theta = p.mutable_data();
            switch (cfg_.kind) {
                case OptimizerKind::SGD:
                    first_[i] = mu * first_[i] + g;
                    theta -= lr * first_[i];
                    break;
                case OptimizerKind::RMSProp: {
                    const Scalar a = static_cast<Scalar>(cfg_.rms_alpha);
                    second_[i] = a * second_[i] + (Scalar(1) - a) * g.cwiseAbs2();
                    Vec<Scalar> scaled = g.array() / (second_[i].array() + eps).sqrt();
                    first_[i] = mu > 0 ? Vec<Scalar>(mu * first_[i] + scaled) : scaled;
                    theta -= lr * first_[i];
                    break;
                }
                case OptimizerKind::Adam: {
                    const Scalar b1 = static_cast<Scalar>(cfg_.beta1), b2 = static_cast<Scalar>(cfg_.beta2);
                    first_[i] = b1 * first_[i] + (Scalar(1) - b1) * g;
                    second_[i] = b2 * second_[i] + (Scalar(1) - b2) * g.cwiseAbs2();
                    const Scalar c1 = Scalar(1) - static_cast<Scalar>(std::pow(cfg_.beta1, steps_));
                    const Scalar c2 = Scalar(1) - static_cast<Scalar>(std::pow(cfg_.beta2, steps_));
                    theta.array() -= lr * (first_[i].array() / c1) / ((second_[i].array() / c2).sqrt() + eps);
                    break;
                }
            }
        }
    }

private:
    OptimizerConfig cfg_;
    std::vector<std::pair<std::string, Tensor<Scalar>>> params_;
    std::vector<Vec<Scalar>> first_;   // velocity / momentum buffer / first moment
    std::vector<Vec<Scalar>> second_;  // squared-gradient average / second moment
    long steps_ = 0;
};

}  // namespace stgait
