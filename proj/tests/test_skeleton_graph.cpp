#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <numeric>
#include <random>

#include "stgait/errors.hpp"
#include "stgait/skeleton_graph.hpp"

using namespace stgait;

namespace {

std::vector<Index> random_perm(Index n, std::mt19937_64& rng) {
    std::vector<Index> p(static_cast<std::size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    return p;
}

Eigen::MatrixXd perm_matrix(const std::vector<Index>& perm) {
    const Index n = static_cast<Index>(perm.size());
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
    for (Index i = 0; i < n; ++i) p(perm[i], i) = 1.0;
    return p;
}

}  // namespace

TEST_CASE("default skeleton is a connected 16-joint tree") {
    const auto g = build_default_skeleton();
    CHECK(g.num_joints == 16);
    CHECK(g.edges.size() == 15);
    CHECK(g.connected());
    CHECK(g.center_joint == 0);
    const auto deg = g.degrees();
    CHECK(std::all_of(deg.begin(), deg.end(), [](Index d) { return d >= 1; }));
    CHECK_NOTHROW(g.validate());
}

TEST_CASE("validation rejects broken graphs") {
    auto g = build_default_skeleton();
    g.edges.pop_back();
    CHECK_THROWS_AS(g.validate(), ValidationError);
    CHECK_THROWS_AS(normalized_adjacency(g), ValidationError);

    auto loop = build_default_skeleton();
    loop.edges.push_back({3, 3});
    CHECK_THROWS_AS(loop.validate(), ValidationError);

    auto range = build_default_skeleton();
    range.edges.push_back({0, 16});
    CHECK_THROWS_AS(range.validate(), ValidationError);
}

TEST_CASE("two-node path, UniLabel") {
    SkeletonGraph g;
    g.num_joints = 2;
    g.edges = {{0, 1}};
    g.partition = PartitionStrategy::UniLabel;
    const auto a = normalized_adjacency(g);
    REQUIRE(a.size() == 1);
    CHECK((a.subsets[0] - Eigen::MatrixXd::Constant(2, 2, 0.5)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("UniLabel rows sum to one and Spatial subsets sum to UniLabel") {
    auto uni = build_default_skeleton();
    uni.partition = PartitionStrategy::UniLabel;
    auto spatial = build_default_skeleton();
    const auto u = normalized_adjacency(uni);
    const auto s = normalized_adjacency(spatial);
    REQUIRE(u.size() == 1);
    REQUIRE(s.size() == 3);
    CHECK((u.subsets[0].rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
    CHECK((s.total() - u.subsets[0]).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((s.total().rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
    for (const auto& m : s.subsets) CHECK(m.minCoeff() >= 0.0);
}

TEST_CASE("spatial partition: each directed neighbour pair in exactly one subset") {
    const auto g = build_default_skeleton();
    const auto s = normalized_adjacency(g);
    const auto hops = g.hops_from_center();
    const Eigen::MatrixXd a_hat = g.adjacency() + Eigen::MatrixXd::Identity(16, 16);
    for (Index i = 0; i < 16; ++i)
        for (Index j = 0; j < 16; ++j) {
            int owners = 0;
            for (const auto& m : s.subsets) owners += m(i, j) > 0.0;
            CHECK(owners == (a_hat(i, j) > 0 ? 1 : 0));
            if (a_hat(i, j) > 0) {
                const Index expected = hops[j] == hops[i] ? 0 : (hops[j] < hops[i] ? 1 : 2);
                CHECK(s.subsets[expected](i, j) > 0.0);
            }
        }
    // self connections live in the first subset
    for (Index i = 0; i < 16; ++i) CHECK(s.subsets[0](i, i) > 0.0);
}

TEST_CASE("symmetric normalization is symmetric") {
    auto g = build_default_skeleton();
    g.norm = AdjacencyNorm::Symmetric;
    g.partition = PartitionStrategy::UniLabel;
    const auto a = normalized_adjacency(g).subsets[0];
    CHECK((a - a.transpose()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("permute: identity, inverse, degree multiset, errors") {
    const auto g = build_default_skeleton();
    std::vector<Index> id(16);
    std::iota(id.begin(), id.end(), 0);
    CHECK(permute(g, id) == g);

    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const auto p = random_perm(16, rng);
        std::vector<Index> inv(16);
        for (Index i = 0; i < 16; ++i) inv[p[i]] = i;
        const auto pg = permute(g, p);
        CHECK(permute(pg, inv) == g);
        auto d0 = g.degrees(), d1 = pg.degrees();
        std::sort(d0.begin(), d0.end());
        std::sort(d1.begin(), d1.end());
        CHECK(d0 == d1);
    }
    std::vector<Index> bad(16, 0);
    CHECK_THROWS_AS(permute(g, bad), ValidationError);
    CHECK_THROWS_AS(permute(g, std::vector<Index>{0, 1}), ValidationError);
}

TEST_CASE("property: normalization commutes with relabeling") {
    std::mt19937_64 rng(12);
    for (auto part : {PartitionStrategy::UniLabel, PartitionStrategy::Spatial}) {
        for (auto norm : {AdjacencyNorm::RandomWalk, AdjacencyNorm::Symmetric}) {
            auto g = build_default_skeleton();
            g.partition = part;
            g.norm = norm;
            const auto base = normalized_adjacency(g);
            for (int trial = 0; trial < 20; ++trial) {
                const auto p = random_perm(16, rng);
                const auto pm = perm_matrix(p);
                const auto permuted = normalized_adjacency(permute(g, p));
                for (Index k = 0; k < base.size(); ++k) {
                    CHECK((permuted.subsets[k] - pm * base.subsets[k] * pm.transpose()).cwiseAbs().maxCoeff() < 1e-12);
                }
            }
        }
    }
}

TEST_CASE("skeleton file round trip and parse errors") {
    auto g = build_default_skeleton();
    g.partition = PartitionStrategy::UniLabel;
    const auto back = parse_skeleton(format_skeleton(g));
    CHECK(back == g);
    CHECK(back.joint_names == g.joint_names);

    CHECK_THROWS_AS(parse_skeleton("joints 2\nedge 0\n"), ParseError);
    CHECK_THROWS_AS(parse_skeleton("joints 3\nedge 0 1\n"), ValidationError);
    CHECK_THROWS_AS(parse_skeleton("bogus 1\n"), ParseError);
    const auto tiny = parse_skeleton("# tiny\njoints 3\nedge 0 1\nedge 1 2 # chain\ncenter 1\n");
    CHECK(tiny.center_joint == 1);
    CHECK(tiny.hops_from_center() == std::vector<Index>{1, 0, 1});
}

TEST_CASE("adjacency tensor layout") {
    const auto s = normalized_adjacency(build_default_skeleton());
    const auto t = s.to_tensor<double>();
    CHECK(t.shape() == Shape{3, 16, 16});
    CHECK(t.at({2, 0, 10}) == s.subsets[2](0, 10));
}
