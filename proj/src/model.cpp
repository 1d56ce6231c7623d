#include "stgait/model.hpp"

#include <sstream>

namespace stgait {

std::string to_string(TopologyMode m) { return m == TopologyMode::Offset ? "offset" : "importance"; }

std::string to_string(FusionPoint f) {
    switch (f) {
        case FusionPoint::None: return "none";
        case FusionPoint::Pooled: return "pooled";
        case FusionPoint::Input: return "input";
    }
    return "none";
}

TopologyMode parse_topology_mode(const std::string& s) {
    if (s == "offset" || s == "Offset") return TopologyMode::Offset;
    if (s == "importance" || s == "Importance") return TopologyMode::Importance;
    throw ValidationError("unknown gcn initializer '" + s + "'");
}

FusionPoint parse_fusion_point(const std::string& s) {
    if (s == "none") return FusionPoint::None;
    if (s == "pooled") return FusionPoint::Pooled;
    if (s == "input") return FusionPoint::Input;
    throw ValidationError("unknown fusion point '" + s + "'");
}

std::vector<TemporalBranch> default_temporal_branches() {
    return {{BranchKind::DilatedConv, 3, 1},
            {BranchKind::DilatedConv, 3, 2},
            {BranchKind::MaxPool, 3, 1},
            {BranchKind::PointWise, 1, 1}};
}

std::vector<TemporalBranch> parse_branches(const std::string& s) {
    std::vector<TemporalBranch> out;
    std::istringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        if (tok.empty()) continue;
        TemporalBranch b;
        if (tok == "pw") {
            b = {BranchKind::PointWise, 1, 1};
        } else if (tok.rfind("max", 0) == 0) {
            b = {BranchKind::MaxPool, std::stol(tok.substr(3)), 1};
        } else if (tok.rfind("conv", 0) == 0 && tok.find('d') != std::string::npos) {
            const auto d = tok.find('d');
            b = {BranchKind::DilatedConv, std::stol(tok.substr(4, d - 4)), std::stol(tok.substr(d + 1))};
        } else {
            throw ValidationError("unknown temporal branch '" + tok + "'");
        }
        out.push_back(b);
    }
    if (out.empty()) throw ValidationError("empty temporal branch list");
    return out;
}

std::string format_branches(const std::vector<TemporalBranch>& branches) {
    std::string s;
    for (const auto& b : branches) {
        if (!s.empty()) s += ',';
        switch (b.kind) {
            case BranchKind::PointWise: s += "pw"; break;
            case BranchKind::MaxPool: s += "max" + std::to_string(b.kernel_t); break;
            case BranchKind::DilatedConv:
                s += "conv" + std::to_string(b.kernel_t) + "d" + std::to_string(b.dilation);
                break;
        }
    }
    return s;
}

void ModelConfig::validate() const {
    if (in_channels <= 0 || num_classes <= 1) throw ValidationError("model needs input channels and >= 2 classes");
    if (block_channels.empty()) throw ValidationError("model needs at least one block");
    if (branches.empty()) throw ValidationError("model needs at least one temporal branch");
    for (Index c : block_channels) {
        if (c <= 0 || c % static_cast<Index>(branches.size()) != 0) {
            throw ValidationError("block width " + std::to_string(c) + " not divisible by " +
                                  std::to_string(branches.size()) + " temporal branches");
        }
    }
    if (affective_width < 0) throw ValidationError("negative affective width");
}

Index parameter_count(const ModelConfig& cfg, Index num_joints, Index num_subsets) {
    const Index bn = cfg.batch_norm ? 2 : 0;
    const Index k = num_subsets, v = num_joints;
    Index total = 0;
    Index in = cfg.input_width();
    for (Index out : cfg.block_channels) {
        total += k * out * in + k * v * v + out + bn * out;
        const Index b = out / static_cast<Index>(cfg.branches.size());
        for (const auto& br : cfg.branches) {
            total += out * b;
            if (br.kind != BranchKind::PointWise) total += bn * b;
            if (br.kind == BranchKind::DilatedConv) total += b * b * br.kernel_t;
        }
        total += bn * out;
        if (in != out) total += in * out + bn * out;
        in = out;
    }
    total += cfg.feature_width() * cfg.num_classes + cfg.num_classes;
    return total;
}

}  // namespace stgait
