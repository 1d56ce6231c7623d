#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <numeric>
#include <random>

#include "gradcheck.hpp"
#include "stgait/losses.hpp"
#include "stgait/model.hpp"

using namespace stgait;
using stgait::testing::check_gradient;
using stgait::testing::random_tensor;
using stgait::testing::T64;

namespace {

SkeletonGraph unilabel_skeleton() {
    auto g = build_default_skeleton();
    g.partition = PartitionStrategy::UniLabel;
    return g;
}

ModelConfig no_bn_config() {
    ModelConfig cfg;
    cfg.batch_norm = false;
    return cfg;
}

// Plain ST-GCN spatial layer written out with loops:
//   out[n,c,t,w] = relu(sum_k sum_v A_k[w,v] sum_i W[k*C+c, i] x[n,i,t,v] + b[c])
T64 plain_spatial_layer(const T64& x, const AdjacencyStack& a, const T64& w, const T64& b) {
    const Index n = x.dim(0), cin = x.dim(1), t = x.dim(2), v = x.dim(3), cout = b.dim(0), k = a.size();
    T64 out = T64::zeros({n, cout, t, v});
    for (Index s = 0; s < n; ++s)
        for (Index c = 0; c < cout; ++c)
            for (Index f = 0; f < t; ++f)
                for (Index j = 0; j < v; ++j) {
                    double acc = b[c];
                    for (Index p = 0; p < k; ++p)
                        for (Index u = 0; u < v; ++u) {
                            if (a.subsets[p](j, u) == 0.0) continue;
                            double z = 0;
                            for (Index i = 0; i < cin; ++i) z += w.at({p * cout + c, i, 0, 0}) * x.at({s, i, f, u});
                            acc += a.subsets[p](j, u) * z;
                        }
                    out.mutable_data()[out.offset({s, c, f, j})] = std::max(acc, 0.0);
                }
    return out;
}

std::vector<Index> random_perm(Index n, std::mt19937_64& rng) {
    std::vector<Index> p(static_cast<std::size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    return p;
}

// x'[..., perm[v]] = x[..., v] on the last axis
T64 permute_joints(const T64& x, const std::vector<Index>& perm) {
    const Index v = x.shape().back(), rows = x.size() / v;
    Vec<double> out(x.size());
    for (Index r = 0; r < rows; ++r)
        for (Index j = 0; j < v; ++j) out[r * v + perm[j]] = x.data()[r * v + j];
    return T64(x.shape(), out);
}

T64 permute_square(const T64& m, const std::vector<Index>& perm) {
    const Index k = m.dim(0), v = m.dim(1);
    Vec<double> out(m.size());
    for (Index p = 0; p < k; ++p)
        for (Index i = 0; i < v; ++i)
            for (Index j = 0; j < v; ++j) out[(p * v + perm[i]) * v + perm[j]] = m.data()[(p * v + i) * v + j];
    return T64(m.shape(), out, m.requires_grad());
}

}  // namespace

TEST_CASE("spatial gcn: identity weights on one frame collapse to relu(A X)") {
    std::mt19937_64 rng(31);
    const auto g = unilabel_skeleton();
    const auto adj = normalized_adjacency(g);
    auto cfg = no_bn_config();
    SpatialGcn<double> layer(3, 3, adj, cfg, rng);
    layer.weight = T64::zeros({3, 3, 1, 1}, true);
    for (Index c = 0; c < 3; ++c) layer.weight.mutable_data()[c * 3 + c] = 1.0;
    T64 x = random_tensor({1, 3, 1, 16}, rng, -1, 1);
    T64 y = layer.forward(x, false);
    // relu(A X) with X as V x C
    Eigen::MatrixXd xm(16, 3);
    for (Index v = 0; v < 16; ++v)
        for (Index c = 0; c < 3; ++c) xm(v, c) = x.at({0, c, 0, v});
    const Eigen::MatrixXd expected = (adj.subsets[0] * xm).cwiseMax(0.0);
    for (Index v = 0; v < 16; ++v)
        for (Index c = 0; c < 3; ++c) CHECK(std::abs(y.at({0, c, 0, v}) - expected(v, c)) < 1e-12);
}

TEST_CASE("spatial gcn: zero input yields relu(bias)") {
    std::mt19937_64 rng(32);
    auto cfg = no_bn_config();
    SpatialGcn<double> layer(3, 4, normalized_adjacency(build_default_skeleton()), cfg, rng);
    layer.bias = T64::from({4}, {0.5, -0.2, 0.0, 1.5}, true);
    T64 y = layer.forward(T64::zeros({2, 3, 5, 16}), false);
    for (Index n = 0; n < 2; ++n)
        for (Index c = 0; c < 4; ++c)
            for (Index t = 0; t < 5; ++t)
                for (Index v = 0; v < 16; ++v) CHECK(y.at({n, c, t, v}) == std::max(layer.bias[c], 0.0));
}

TEST_CASE("spatial gcn: dimension errors") {
    std::mt19937_64 rng(33);
    ModelConfig cfg;
    SpatialGcn<double> layer(3, 8, normalized_adjacency(build_default_skeleton()), cfg, rng);
    CHECK_THROWS_AS(layer.forward(T64::zeros({1, 3, 4, 15}), true), DimensionError);
    CHECK_THROWS_AS(layer.forward(T64::zeros({1, 2, 4, 16}), true), DimensionError);
}

TEST_CASE("spatial gcn: topology initialization is neutral in both modes") {
    std::mt19937_64 rng(34);
    const auto adj = normalized_adjacency(build_default_skeleton());
    ModelConfig off, imp;
    imp.topology = TopologyMode::Importance;
    SpatialGcn<double> a(3, 8, adj, off, rng), b(3, 8, adj, imp, rng);
    const T64 ea = a.effective_adjacency(), eb = b.effective_adjacency();
    CHECK(ea.data() == eb.data());
    CHECK(ea.data() == a.base.data());
    CHECK(a.topology.data().cwiseAbs().maxCoeff() == 0.0);
    CHECK(b.topology.data().minCoeff() == 1.0);
}

TEST_CASE("spatial gcn: frozen topology equals a hand-coded plain ST-GCN layer") {
    std::mt19937_64 rng(35);
    for (auto mode : {TopologyMode::Offset, TopologyMode::Importance}) {
        auto cfg = no_bn_config();
        cfg.topology = mode;
        cfg.learn_topology = false;
        const auto adj = normalized_adjacency(build_default_skeleton());
        SpatialGcn<double> layer(4, 6, adj, cfg, rng);
        layer.bias = random_tensor({6}, rng, -0.3, 0.3, true);
        CHECK_FALSE(layer.topology.requires_grad());
        T64 x = random_tensor({2, 4, 3, 16}, rng);
        T64 got = layer.forward(x, true);
        T64 expected = plain_spatial_layer(x, adj, layer.weight, layer.bias);
        CHECK((got.data() - expected.data()).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("spatial gcn: permutation equivariance") {
    std::mt19937_64 rng(36);
    const auto g = build_default_skeleton();
    ModelConfig cfg;
    SpatialGcn<double> layer(3, 8, normalized_adjacency(g), cfg, rng);
    layer.topology = random_tensor(layer.topology.shape(), rng, -0.2, 0.2, true);
    layer.bias = random_tensor({8}, rng, -0.3, 0.3, true);
    T64 x = random_tensor({2, 3, 4, 16}, rng);
    const T64 y = layer.forward(x, true);
    for (int trial = 0; trial < 20; ++trial) {
        const auto perm = random_perm(16, rng);
        SpatialGcn<double> moved(3, 8, normalized_adjacency(permute(g, perm)), cfg, rng);
        moved.weight = layer.weight;
        moved.bias = layer.bias;
        moved.topology = permute_square(layer.topology, perm);
        const T64 ym = moved.forward(permute_joints(x, perm), true);
        CHECK((ym.data() - permute_joints(y, perm).data()).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("spatial gcn: gradient reaches the topology parameter") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        std::mt19937_64 rng(seed);
        for (auto mode : {TopologyMode::Offset, TopologyMode::Importance}) {
            ModelConfig cfg;
            cfg.topology = mode;
            SpatialGcn<double> layer(3, 8, normalized_adjacency(build_default_skeleton()), cfg, rng);
            T64 x = random_tensor({2, 3, 5, 16}, rng);
            backward(stgait::testing::weighted_sum(layer.forward(x, true), seed));
            REQUIRE(layer.topology.has_grad());
            CHECK(layer.topology.grad().cwiseAbs().maxCoeff() > 0.0);
        }
    }
}

TEST_CASE("temporal unit: shapes and max-pool branch") {
    std::mt19937_64 rng(37);
    ModelConfig cfg;
    TemporalMultiBranch<double> tcn(64, cfg, rng);
    CHECK(tcn.branches.size() == 4);
    T64 x = random_tensor({2, 64, 48, 16}, rng);
    CHECK(tcn.forward(x, true).shape() == Shape{2, 64, 48, 16});

    // temporally constant input: conv branches keep the extent, max branch is constant in the interior
    Vec<double> c(2 * 64 * 10 * 16);
    for (Index n = 0; n < 2; ++n)
        for (Index ch = 0; ch < 64; ++ch)
            for (Index t = 0; t < 10; ++t)
                for (Index v = 0; v < 16; ++v) c[((n * 64 + ch) * 10 + t) * 16 + v] = std::sin(double(ch + 3 * v));
    T64 constant({2, 64, 10, 16}, c);
    for (std::size_t b = 0; b < 4; ++b) CHECK(tcn.branch_forward(b, constant, false).shape() == Shape{2, 16, 10, 16});
    const T64 pooled = tcn.branch_forward(2, constant, false);
    for (Index ch = 0; ch < 16; ++ch)
        for (Index t = 1; t < 9; ++t)
            for (Index v = 0; v < 16; ++v) CHECK(pooled.at({0, ch, t, v}) == pooled.at({0, ch, 0, v}));
}

TEST_CASE("temporal unit: width must divide by branch count") {
    std::mt19937_64 rng(38);
    ModelConfig cfg;
    CHECK_THROWS_AS(TemporalMultiBranch<double>(30, cfg, rng), ValidationError);
    cfg.branches = parse_branches("conv3d1,conv5d2,max3");
    CHECK_NOTHROW(TemporalMultiBranch<double>(30, cfg, rng));
    CHECK(format_branches(cfg.branches) == "conv3d1,conv5d2,max3");
}

TEST_CASE("network: probabilities, determinism, shape contract") {
    ModelConfig cfg;
    StGaitNet<double> net(cfg, build_default_skeleton(), 7);
    std::mt19937_64 rng(39);
    T64 x = random_tensor({3, 3, 12, 16}, rng);
    T64 p = net.predict(x);
    REQUIRE(p.shape() == Shape{3, 4});
    for (Index r = 0; r < 3; ++r) CHECK(std::abs(p.data().segment(r * 4, 4).sum() - 1.0) < 1e-6);

    Vec<double> twin(2 * 3 * 12 * 16);
    twin << x.data().head(576), x.data().head(576);
    T64 pt = net.predict(T64({2, 3, 12, 16}, twin));
    CHECK((pt.data().head(4) - pt.data().tail(4)).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(net.predict(x).data() == p.data());

    CHECK_THROWS_AS(net.predict(T64::zeros({1, 3, 12, 15})), DimensionError);
    CHECK_THROWS_AS(net.predict(T64::zeros({1, 2, 12, 16})), DimensionError);
    CHECK_THROWS_AS(net.predict(T64::zeros({1, 3, 8, 16})), DimensionError);
    CHECK(net.min_frames() == 9);
}

TEST_CASE("network: parameter count matches closed form") {
    for (bool bn : {true, false}) {
        for (Index fa : {Index{0}, Index{8}}) {
            for (auto fusion : {FusionPoint::Pooled, FusionPoint::Input}) {
                ModelConfig cfg;
                cfg.batch_norm = bn;
                cfg.affective_width = fa;
                cfg.fusion = fusion;
                StGaitNet<float> net(cfg, build_default_skeleton(), 1);
                CHECK(net.parameters().count() == parameter_count(cfg, 16, 3));
            }
        }
    }
    // blocks 2832 + 15136 + 19104, head 64*4 + 4
    CHECK(parameter_count(ModelConfig{}, 16, 3) == 37332);
}

TEST_CASE("network: affective fusion widths") {
    std::mt19937_64 rng(40);
    ModelConfig cfg;
    cfg.affective_width = 8;
    StGaitNet<double> fused(cfg, build_default_skeleton(), 3);
    T64 x = random_tensor({2, 3, 12, 16}, rng), aff = random_tensor({2, 8}, rng);
    CHECK(fused.features(x, aff, false).shape() == Shape{2, 72});
    CHECK(fused.head_weight.shape() == Shape{4, 72, 1, 1});
    CHECK_THROWS_AS(fused.features(x, T64{}, false), DimensionError);

    cfg.fusion = FusionPoint::None;
    StGaitNet<double> plain(cfg, build_default_skeleton(), 3);
    CHECK(plain.features(x, T64{}, false).shape() == Shape{2, 64});

    cfg.fusion = FusionPoint::Input;
    StGaitNet<double> early(cfg, build_default_skeleton(), 3);
    CHECK(early.features(x, aff, false).shape() == Shape{2, 64});
    CHECK(early.blocks[0].gcn.in_channels() == 11);
}

TEST_CASE("network: end-to-end cross-entropy gradient matches finite differences") {
    ModelConfig cfg;
    StGaitNet<double> net(cfg, build_default_skeleton(), 11);
    std::mt19937_64 rng(41);
    T64 x = random_tensor({2, 3, 12, 16}, rng);
    const std::vector<int> y{1, 3};
    auto loss = [&] { return cross_entropy(net.logits(x, T64{}, true), y); };
    std::uniform_int_distribution<Index> pick(0, net.blocks[0].gcn.weight.size() - 1);
    std::vector<Index> probe;
    for (int i = 0; i < 25; ++i) probe.push_back(pick(rng));
    const auto r = check_gradient(net.blocks[0].gcn.weight, loss, 1e-6, probe, 1e-5);
    CHECK(r.max_rel_err < 1e-4);
}
