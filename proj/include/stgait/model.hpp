#pragma once

// Spatio-temporal graph convolution blocks and the gait emotion classifier.
//
// Activations are B x C x T x V. A block is
//   spatial gcn (1x1 conv -> graph mix over K subsets -> +bias -> BN -> ReLU)
//   -> multi-branch temporal unit (branches concatenated -> BN)
//   -> + residual (identity, or 1x1 conv + BN when widths differ) -> ReLU.
// The network stacks three blocks (32, 64, 64 channels), averages over
// T x V, optionally appends affective features, and projects with a 1x1
// convolution to 4 class logits.

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "stgait/ops.hpp"
#include "stgait/skeleton_graph.hpp"

namespace stgait {

enum class TopologyMode { Offset, Importance };
enum class BranchKind { DilatedConv, MaxPool, PointWise };
enum class FusionPoint { None, Pooled, Input };

std::string to_string(TopologyMode m);
std::string to_string(FusionPoint f);
TopologyMode parse_topology_mode(const std::string& s);
FusionPoint parse_fusion_point(const std::string& s);

struct TemporalBranch {
    BranchKind kind = BranchKind::DilatedConv;
    Index kernel_t = 3;
    Index dilation = 1;

    friend bool operator==(const TemporalBranch&, const TemporalBranch&) = default;
};

/// {conv kt=3 d=1, conv kt=3 d=2, max-pool kt=3, pointwise}
std::vector<TemporalBranch> default_temporal_branches();

/// Parses "conv3d1,conv3d2,max3,pw" style branch lists.
std::vector<TemporalBranch> parse_branches(const std::string& s);
std::string format_branches(const std::vector<TemporalBranch>& b);

struct ModelConfig {
    Index in_channels = 3;
    std::vector<Index> block_channels{32, 64, 64};
    Index num_classes = 4;
    TopologyMode topology = TopologyMode::Offset;
    bool learn_topology = true;
    std::vector<TemporalBranch> branches = default_temporal_branches();
    bool batch_norm = true;
    double bn_momentum = 0.9;
    double bn_eps = 1e-5;
    Index affective_width = 0;  // 0 disables fusion
    FusionPoint fusion = FusionPoint::Pooled;

    Index fused_width() const { return fusion == FusionPoint::None ? 0 : affective_width; }
    /// Channels entering the first block.
    Index input_width() const { return in_channels + (fusion == FusionPoint::Input ? affective_width : 0); }
    /// Width of the pooled feature vector fed to the classifier.
    Index feature_width() const {
        return block_channels.back() + (fusion == FusionPoint::Pooled ? affective_width : 0);
    }
    void validate() const;
};

/// Closed-form learnable parameter count for `cfg` on a graph with
/// `num_joints` joints and `num_subsets` partition subsets:
///   gcn(i,o)   = K*o*i + K*V*V + o + 2o[bn]
///   branch(C)  = conv: C*b + 2b[bn] + b*b*kt;  max: C*b + 2b[bn];  pw: C*b   (b = C/#branches)
///   tcn(C)     = sum of branches + 2C[bn]
///   res(i,o)   = 0 if i == o else i*o + 2o[bn]
///   head       = F*classes + classes        (F = feature_width)
Index parameter_count(const ModelConfig& cfg, Index num_joints, Index num_subsets);

template <typename Scalar>
struct ParameterSet {
    std::vector<std::pair<std::string, Tensor<Scalar>>> params;
    std::vector<std::pair<std::string, RunningStats<Scalar>*>> stats;

    Index count() const {
        Index n = 0;
        for (const auto& [name, t] : params) n += t.size();
        return n;
    }
    void zero_grad() {
        for (auto& [name, t] : params) t.zero_grad();
    }
};

namespace detail {

template <typename Scalar>
Tensor<Scalar> fan_in_uniform(Shape shape, Index fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Vec<Scalar> v(numel(shape));
    for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(u(rng));
    return Tensor<Scalar>(std::move(shape), std::move(v), true);
}

}  // namespace detail

template <typename Scalar>
struct BatchNorm {
    Tensor<Scalar> gamma, beta;
    RunningStats<Scalar> stats;

    BatchNorm() = default;
    BatchNorm(Index channels, double momentum, double eps)
        : gamma(Tensor<Scalar>::full({channels}, Scalar(1), true)),
          beta(Tensor<Scalar>::zeros({channels}, true)),
          stats(channels) {
        stats.momentum = static_cast<Scalar>(momentum);
        stats.eps = static_cast<Scalar>(eps);
    }

    Tensor<Scalar> operator()(const Tensor<Scalar>& x, bool training) {
        return batch_norm2d(x, gamma, beta, stats, training);
    }

    void collect(const std::string& prefix, ParameterSet<Scalar>& out) {
        out.params.emplace_back(prefix + ".gamma", gamma);
        out.params.emplace_back(prefix + ".beta", beta);
        out.stats.emplace_back(prefix + ".stats", &stats);
    }
};

/// Graph convolution over K partition subsets with a learnable refinement
/// of the adjacency (added in Offset mode, multiplied in Importance mode).
template <typename Scalar>
class SpatialGcn {
public:
    SpatialGcn() = default;

    SpatialGcn(Index in_channels, Index out_channels, const AdjacencyStack& adjacency, const ModelConfig& cfg,
               std::mt19937_64& rng)
        : in_(in_channels), out_(out_channels), mode_(cfg.topology), use_bn_(cfg.batch_norm) {
        const Index k = adjacency.size(), v = adjacency.num_joints();
        weight = detail::fan_in_uniform<Scalar>({k * out_channels, in_channels, 1, 1}, in_channels, rng);
        base = adjacency.to_tensor<Scalar>();
        topology = mode_ == TopologyMode::Offset ? Tensor<Scalar>::zeros({k, v, v}, cfg.learn_topology)
                                                 : Tensor<Scalar>::full({k, v, v}, Scalar(1), cfg.learn_topology);
        bias = Tensor<Scalar>::zeros({out_channels}, true);
        if (use_bn_) bn = BatchNorm<Scalar>(out_channels, cfg.bn_momentum, cfg.bn_eps);
    }

    Index in_channels() const { return in_; }
    Index out_channels() const { return out_; }
    Index num_joints() const { return base.dim(1); }
    Index num_subsets() const { return base.dim(0); }
    TopologyMode mode() const { return mode_; }

    Tensor<Scalar> effective_adjacency() const {
        return mode_ == TopologyMode::Offset ? add(base, topology) : mul(base, topology);
    }

    /// relu(BN(sum_k A_k X W_k + bias)) for x[B, C_in, T, V].
    Tensor<Scalar> forward(const Tensor<Scalar>& x, bool training) {
        if (x.ndim() != 4 || x.dim(3) != num_joints()) {
            throw DimensionError("spatial gcn: expected " + std::to_string(num_joints()) + " joints, got input " +
                                 to_string(x.shape()));
        }
        if (x.dim(1) != in_) {
            throw DimensionError("spatial gcn: expected " + std::to_string(in_) + " channels, got input " +
                                 to_string(x.shape()));
        }
        Tensor<Scalar> y = add_channel_bias(graph_mix(conv2d(x, weight), effective_adjacency()), bias);
        if (use_bn_) y = bn(y, training);
        return relu(y);
    }

    void collect(const std::string& prefix, ParameterSet<Scalar>& out) {
        out.params.emplace_back(prefix + ".weight", weight);
        out.params.emplace_back(prefix + ".topology", topology);
        out.params.emplace_back(prefix + ".bias", bias);
        if (use_bn_) bn.collect(prefix + ".bn", out);
    }

    Tensor<Scalar> weight;    // [K*C_out, C_in, 1, 1]; slice k is rows k*C_out..
    Tensor<Scalar> base;      // fixed normalized adjacency [K, V, V]
    Tensor<Scalar> topology;  // learnable refinement [K, V, V]
    Tensor<Scalar> bias;      // [C_out]
    BatchNorm<Scalar> bn;

private:
    Index in_ = 0, out_ = 0;
    TopologyMode mode_ = TopologyMode::Offset;
    bool use_bn_ = true;
};

/// Parallel temporal branches at C/#branches channels each, concatenated.
template <typename Scalar>
class TemporalMultiBranch {
public:
    struct Branch {
        TemporalBranch spec;
        Tensor<Scalar> reduce;    // 1x1 conv C -> b
        BatchNorm<Scalar> bn;     // after reduce (conv / max branches)
        Tensor<Scalar> temporal;  // [b, b, kt, 1] (conv branch)
    };

    TemporalMultiBranch() = default;

    TemporalMultiBranch(Index channels, const ModelConfig& cfg, std::mt19937_64& rng)
        : channels_(channels), use_bn_(cfg.batch_norm) {
        const Index nb = static_cast<Index>(cfg.branches.size());
        if (nb == 0 || channels % nb != 0) {
            throw ValidationError("temporal unit: " + std::to_string(channels) + " channels not divisible by " +
                                  std::to_string(nb) + " branches");
        }
        const Index b = channels / nb;
        for (const auto& spec : cfg.branches) {
            if (spec.kernel_t < 1 || spec.kernel_t % 2 == 0 || spec.dilation < 1) {
                throw ValidationError("temporal branch needs an odd kernel and positive dilation");
            }
            Branch br;
            br.spec = spec;
            br.reduce = detail::fan_in_uniform<Scalar>({b, channels, 1, 1}, channels, rng);
            if (spec.kind != BranchKind::PointWise && use_bn_) br.bn = BatchNorm<Scalar>(b, cfg.bn_momentum, cfg.bn_eps);
            if (spec.kind == BranchKind::DilatedConv) {
                br.temporal = detail::fan_in_uniform<Scalar>({b, b, spec.kernel_t, 1}, b * spec.kernel_t, rng);
            }
            branches.push_back(std::move(br));
        }
        if (use_bn_) bn = BatchNorm<Scalar>(channels, cfg.bn_momentum, cfg.bn_eps);
    }

    Index channels() const { return channels_; }

    /// Largest temporal kernel over the branches.
    Index max_kernel_t() const {
        Index r = 1;
        for (const auto& br : branches) r = std::max(r, br.spec.kernel_t);
        return r;
    }

    Tensor<Scalar> branch_forward(std::size_t i, const Tensor<Scalar>& x, bool training) {
        Branch& br = branches.at(i);
        Tensor<Scalar> y = conv2d(x, br.reduce);
        if (br.spec.kind == BranchKind::PointWise) return y;
        if (use_bn_) y = br.bn(y, training);
        y = relu(y);
        const Index half = (br.spec.kernel_t - 1) / 2;
        if (br.spec.kind == BranchKind::MaxPool) {
            return max_pool2d(y, {br.spec.kernel_t, 1}, {1, 1}, {half, 0});
        }
        Conv2dOptions opt;
        opt.padding = {half * br.spec.dilation, 0};
        opt.dilation = {br.spec.dilation, 1};
        return conv2d(y, br.temporal, opt);
    }

    Tensor<Scalar> forward(const Tensor<Scalar>& x, bool training) {
        if (x.ndim() != 4 || x.dim(1) != channels_) {
            throw DimensionError("temporal unit: expected " + std::to_string(channels_) + " channels, got input " +
                                 to_string(x.shape()));
        }
        std::vector<Tensor<Scalar>> outs;
        outs.reserve(branches.size());
        for (std::size_t i = 0; i < branches.size(); ++i) outs.push_back(branch_forward(i, x, training));
        Tensor<Scalar> y = concat(outs, 1);
        return use_bn_ ? bn(y, training) : y;
    }

    void collect(const std::string& prefix, ParameterSet<Scalar>& out) {
        for (std::size_t i = 0; i < branches.size(); ++i) {
            const std::string p = prefix + ".branch" + std::to_string(i);
            auto& br = branches[i];
            out.params.emplace_back(p + ".reduce", br.reduce);
            if (br.spec.kind != BranchKind::PointWise && use_bn_) br.bn.collect(p + ".bn", out);
            if (br.spec.kind == BranchKind::DilatedConv) out.params.emplace_back(p + ".temporal", br.temporal);
        }
        if (use_bn_) bn.collect(prefix + ".bn", out);
    }

    std::vector<Branch> branches;
    BatchNorm<Scalar> bn;

private:
    Index channels_ = 0;
    bool use_bn_ = true;
};

template <typename Scalar>
class StGcnBlock {
public:
    StGcnBlock() = default;

    StGcnBlock(Index in_channels, Index out_channels, const AdjacencyStack& adjacency, const ModelConfig& cfg,
               std::mt19937_64& rng)
        : gcn(in_channels, out_channels, adjacency, cfg, rng), tcn(out_channels, cfg, rng), use_bn_(cfg.batch_norm) {
        if (in_channels != out_channels) {
            residual = detail::fan_in_uniform<Scalar>({out_channels, in_channels, 1, 1}, in_channels, rng);
            if (use_bn_) residual_bn = BatchNorm<Scalar>(out_channels, cfg.bn_momentum, cfg.bn_eps);
        }
    }

    Tensor<Scalar> forward(const Tensor<Scalar>& x, bool training) {
        Tensor<Scalar> res = x;
        if (residual.defined()) {
            res = conv2d(x, residual);
            if (use_bn_) res = residual_bn(res, training);
        }
        return relu(add(tcn.forward(gcn.forward(x, training), training), res));
    }

    void collect(const std::string& prefix, ParameterSet<Scalar>& out) {
        gcn.collect(prefix + ".gcn", out);
        tcn.collect(prefix + ".tcn", out);
        if (residual.defined()) {
            out.params.emplace_back(prefix + ".residual", residual);
            if (use_bn_) residual_bn.collect(prefix + ".residual_bn", out);
        }
    }

    SpatialGcn<Scalar> gcn;
    TemporalMultiBranch<Scalar> tcn;
    Tensor<Scalar> residual;  // undefined for identity shortcuts
    BatchNorm<Scalar> residual_bn;

private:
    bool use_bn_ = true;
};

/// Three spatio-temporal blocks, global average pooling, optional affective
/// fusion, 1x1 convolution to class logits.
template <typename Scalar>
class StGaitNet {
public:
    StGaitNet(const ModelConfig& cfg, const SkeletonGraph& graph, std::uint64_t seed)
        : cfg_(cfg), graph_(graph), adjacency_(normalized_adjacency(graph)) {
        cfg_.validate();
        std::mt19937_64 rng(seed);
        Index in = cfg_.input_width();
        for (Index out : cfg_.block_channels) {
            blocks.emplace_back(in, out, adjacency_, cfg_, rng);
            in = out;
        }
        const Index f = cfg_.feature_width();
        head_weight = detail::fan_in_uniform<Scalar>({cfg_.num_classes, f, 1, 1}, f, rng);
        head_bias = Tensor<Scalar>::zeros({cfg_.num_classes}, true);
    }

    StGaitNet(const StGaitNet&) = delete;
    StGaitNet& operator=(const StGaitNet&) = delete;
    StGaitNet(StGaitNet&&) = default;
    StGaitNet& operator=(StGaitNet&&) = default;

    const ModelConfig& config() const { return cfg_; }
    const SkeletonGraph& graph() const { return graph_; }
    const AdjacencyStack& adjacency() const { return adjacency_; }

    /// Minimum number of frames accepted by forward(): one temporal kernel
    /// per block (9 for the default three blocks).
    Index min_frames() const {
        Index r = 0;
        for (const auto& b : blocks) r += b.tcn.max_kernel_t();
        return r;
    }

    /// Pooled penultimate features [B, feature_width].
    Tensor<Scalar> features(const Tensor<Scalar>& batch, const Tensor<Scalar>& affective, bool training) {
        check_input(batch, affective);
        const Index b = batch.dim(0);
        Tensor<Scalar> x = batch;
        if (cfg_.fusion == FusionPoint::Input && cfg_.affective_width > 0) x = concat<Scalar>({x, broadcast_affective(affective, batch)}, 1);
        for (auto& block : blocks) x = block.forward(x, training);
        Tensor<Scalar> pooled = reshape(avg_pool2d(x, {x.dim(2), x.dim(3)}), {b, x.dim(1)});
        if (cfg_.fusion == FusionPoint::Pooled && cfg_.affective_width > 0) pooled = concat<Scalar>({pooled, affective}, 1);
        return pooled;
    }

    /// Class logits [B, classes]. Softmax is applied by the loss or by predict().
    Tensor<Scalar> logits(const Tensor<Scalar>& batch, const Tensor<Scalar>& affective, bool training) {
        return classify(features(batch, affective, training));
    }

    Tensor<Scalar> classify(const Tensor<Scalar>& features) {
        const Index b = features.dim(0), f = features.dim(1);
        Tensor<Scalar> y = conv2d(reshape(features, {b, f, 1, 1}), head_weight);
        return add_bias(reshape(y, {b, cfg_.num_classes}), head_bias);
    }

    /// Class probabilities [B, classes] in eval mode.
    Tensor<Scalar> predict(const Tensor<Scalar>& batch, const Tensor<Scalar>& affective = {}) {
        return softmax(logits(batch, affective, false), 1);
    }

    ParameterSet<Scalar> parameters() {
        ParameterSet<Scalar> out;
        for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect("block" + std::to_string(i), out);
        out.params.emplace_back("head.weight", head_weight);
        out.params.emplace_back("head.bias", head_bias);
        return out;
    }

    /// Learnable entries, excluding a frozen topology.
    Index trainable_count() {
        Index n = 0;
        for (auto& [name, t] : parameters().params) n += t.requires_grad() ? t.size() : 0;
        return n;
    }

    std::vector<StGcnBlock<Scalar>> blocks;
    Tensor<Scalar> head_weight;  // [classes, F, 1, 1]
    Tensor<Scalar> head_bias;    // [classes]

private:
    void check_input(const Tensor<Scalar>& batch, const Tensor<Scalar>& affective) const {
        if (batch.ndim() != 4 || batch.dim(1) != cfg_.in_channels || batch.dim(3) != graph_.num_joints) {
            throw DimensionError("network input must be [B, " + std::to_string(cfg_.in_channels) + ", T, " +
                                 std::to_string(graph_.num_joints) + "], got " + to_string(batch.shape()));
        }
        if (batch.dim(2) < min_frames()) {
            throw DimensionError("network input needs at least " + std::to_string(min_frames()) + " frames, got " +
                                 to_string(batch.shape()));
        }
        if (cfg_.fused_width() > 0) {
            if (!affective.defined() || affective.ndim() != 2 || affective.dim(0) != batch.dim(0) ||
                affective.dim(1) != cfg_.affective_width) {
                throw DimensionError("affective features must be [B, " + std::to_string(cfg_.affective_width) + "]");
            }
        }
    }

    static Tensor<Scalar> broadcast_affective(const Tensor<Scalar>& affective, const Tensor<Scalar>& batch) {
        const Index b = batch.dim(0), f = affective.dim(1), plane = batch.dim(2) * batch.dim(3);
        Vec<Scalar> v(b * f * plane);
        for (Index i = 0; i < b; ++i)
            for (Index c = 0; c < f; ++c) v.segment((i * f + c) * plane, plane).setConstant(affective.data()[i * f + c]);
        return Tensor<Scalar>({b, f, batch.dim(2), batch.dim(3)}, std::move(v));
    }

    ModelConfig cfg_;
    SkeletonGraph graph_;
    AdjacencyStack adjacency_;
};

}  // namespace stgait
