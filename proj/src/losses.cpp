#include "stgait/losses.hpp"

#include "stgait/optim.hpp"

namespace stgait {

std::vector<double> inverse_frequency_weights(std::span<const int> labels, int num_classes) {
    std::vector<double> counts(static_cast<std::size_t>(num_classes), 0.0);
    for (int l : labels) {
        if (l < 0 || l >= num_classes) throw ValidationError("label out of range");
        counts[l] += 1.0;
    }
    std::vector<double> w(counts.size(), 0.0);
    for (std::size_t c = 0; c < counts.size(); ++c) {
        if (counts[c] > 0) w[c] = static_cast<double>(labels.size()) / (num_classes * counts[c]);
    }
    return w;
}

std::string to_string(OptimizerKind k) {
    switch (k) {
        case OptimizerKind::SGD: return "sgd";
        case OptimizerKind::Adam: return "adam";
        case OptimizerKind::RMSProp: return "rmsprop";
    }
    return "rmsprop";
}

OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "sgd" || s == "SGD") return OptimizerKind::SGD;
    if (s == "adam" || s == "Adam") return OptimizerKind::Adam;
    if (s == "rmsprop" || s == "RMSProp") return OptimizerKind::RMSProp;
    throw ValidationError("unknown optimizer '" + s + "'");
}

}  // namespace stgait
