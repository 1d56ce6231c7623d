#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stgait/tensor.hpp"

namespace stgait {

enum class PartitionStrategy { UniLabel, Spatial };
enum class AdjacencyNorm { RandomWalk, Symmetric };

std::string to_string(PartitionStrategy p);
std::string to_string(AdjacencyNorm n);
PartitionStrategy parse_partition(const std::string& s);
AdjacencyNorm parse_adjacency_norm(const std::string& s);

/// Joint indices of the canonical 16-joint gait skeleton.
namespace joint {
inline constexpr Index kRoot = 0;
inline constexpr Index kSpine = 1;
inline constexpr Index kNeck = 2;
inline constexpr Index kHead = 3;
inline constexpr Index kLeftShoulder = 4;
inline constexpr Index kLeftElbow = 5;
inline constexpr Index kLeftHand = 6;
inline constexpr Index kRightShoulder = 7;
inline constexpr Index kRightElbow = 8;
inline constexpr Index kRightHand = 9;
inline constexpr Index kLeftHip = 10;
inline constexpr Index kLeftKnee = 11;
inline constexpr Index kLeftFoot = 12;
inline constexpr Index kRightHip = 13;
inline constexpr Index kRightKnee = 14;
inline constexpr Index kRightFoot = 15;
inline constexpr Index kCount = 16;
}  // namespace joint

using Edge = std::pair<Index, Index>;

/// Undirected joint graph. Edges carry no self-loops; those are added
/// during normalization.
struct SkeletonGraph {
    Index num_joints = joint::kCount;
    std::vector<Edge> edges;
    Index center_joint = joint::kRoot;
    std::vector<std::string> joint_names;
    PartitionStrategy partition = PartitionStrategy::Spatial;
    AdjacencyNorm norm = AdjacencyNorm::RandomWalk;

    /// Throws ValidationError on out-of-range indices, self-loops,
    /// duplicate edges, or a disconnected graph.
    void validate() const;

    bool connected() const;

    /// Binary symmetric adjacency without self-loops.
    Eigen::MatrixXd adjacency() const;

    /// Hop distance of every joint from the center joint.
    std::vector<Index> hops_from_center() const;

    std::vector<Index> degrees() const;

    /// Number of partition subsets (1 for UniLabel, 3 for Spatial).
    Index num_subsets() const { return partition == PartitionStrategy::UniLabel ? 1 : 3; }

    friend bool operator==(const SkeletonGraph& a, const SkeletonGraph& b);
};

/// K normalized N x N matrices, one per partition subset.
struct AdjacencyStack {
    std::vector<Eigen::MatrixXd> subsets;

    Index size() const { return static_cast<Index>(subsets.size()); }
    Index num_joints() const { return subsets.empty() ? 0 : subsets.front().rows(); }

    /// Entrywise sum over subsets.
    Eigen::MatrixXd total() const;

    /// K x N x N tensor copy.
    template <typename Scalar>
    Tensor<Scalar> to_tensor() const {
        const Index k = size(), n = num_joints();
        Vec<Scalar> v(k * n * n);
        for (Index p = 0; p < k; ++p)
            for (Index i = 0; i < n; ++i)
                for (Index j = 0; j < n; ++j) v[(p * n + i) * n + j] = static_cast<Scalar>(subsets[p](i, j));
        return Tensor<Scalar>({k, n, n}, std::move(v));
    }
};

/// Canonical 16-joint tree (15 edges), rooted at the pelvis (joint 0):
/// root-spine-neck-head, neck to each shoulder-elbow-hand chain and
/// root to each hip-knee-foot chain.
SkeletonGraph build_default_skeleton();

/// (A + I) normalized (random-walk or symmetric) and split by partition.
/// Spatial subsets are {same hop distance incl. self, closer to center,
/// farther from center}; their entrywise sum is the unpartitioned matrix.
AdjacencyStack normalized_adjacency(const SkeletonGraph& graph);

/// Relabels joint i as perm[i]. Throws ValidationError unless perm is a
/// bijection on [0, N).
SkeletonGraph permute(const SkeletonGraph& graph, std::span<const Index> perm);

/// Reads the plain-text skeleton definition:
///   joints <N>
///   joint <index> <name>     (optional, one per joint)
///   edge <a> <b>
///   center <index>
///   partition spatial|unilabel
///   normalization random_walk|symmetric
/// Blank lines and '#' comments are ignored.
SkeletonGraph parse_skeleton(const std::string& text);
SkeletonGraph load_skeleton_file(const std::filesystem::path& path);
std::string format_skeleton(const SkeletonGraph& graph);

}  // namespace stgait
