#pragma once

// Hand-crafted gait descriptors. Conventions: y is vertical; the walking
// direction in frame t is up x (right shoulder - left shoulder), projected
// onto the ground plane. Angles are in radians within [0, pi]; lengths are
// in the sequence's coordinate units.

#include <Eigen/Core>

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "stgait/data.hpp"

namespace stgait {

inline constexpr Index kAffectiveWidth = 8;

enum class AffectiveFeature {
    Speed,           // mean root displacement per frame, times the frame rate
    Stride,          // peak-to-peak fore-aft separation of the two feet
    ArmSwing,        // half peak-to-peak fore-aft hand travel relative to the shoulder, L/R mean
    ElbowAngle,      // mean interior shoulder-elbow-hand angle, L/R
    KneeAngle,       // mean interior hip-knee-foot angle, L/R
    HeadPitch,       // mean angle between neck->head and forward; pi/2 is upright
    TorsoLean,       // mean angle between root->neck and vertical
    NormalizedStride // stride / mean shoulder width
};

const std::array<std::string, kAffectiveWidth>& affective_feature_names();

struct AffectiveVector {
    Eigen::Matrix<double, kAffectiveWidth, 1> values = Eigen::Matrix<double, kAffectiveWidth, 1>::Zero();
    /// Set when a zero-length bone or direction forced a feature to 0.
    bool degenerate = false;
    std::vector<std::string> warnings;

    double operator[](AffectiveFeature f) const { return values[static_cast<Index>(f)]; }
};

/// Descriptor of one sequence. The frame rate is the sequence's own when
/// present, else `default_frame_rate`. Requires a 16-joint graph and T >= 2.
AffectiveVector extract(const SkeletonSequence& seq, const SkeletonGraph& graph, double default_frame_rate = 1.0);

std::vector<AffectiveVector> extract_all(const Dataset& data, const SkeletonGraph& graph,
                                         double default_frame_rate = 1.0);

/// Per-feature mean and standard deviation for z-scoring; zero deviations
/// are replaced by 1.
struct FeatureScaler {
    Eigen::VectorXd mean, stddev;

    static FeatureScaler fit(const std::vector<AffectiveVector>& feats);
    Eigen::VectorXd apply(const AffectiveVector& f) const;
};

/// Row-major [N, 8] tensor of z-scored features.
template <typename Scalar>
Tensor<Scalar> feature_tensor(const std::vector<AffectiveVector>& feats, const FeatureScaler& scaler) {
    const Index n = static_cast<Index>(feats.size());
    Vec<Scalar> data(n * kAffectiveWidth);
    for (Index i = 0; i < n; ++i) data.segment(i * kAffectiveWidth, kAffectiveWidth) = scaler.apply(feats[i]).cast<Scalar>();
    return Tensor<Scalar>({n, kAffectiveWidth}, std::move(data));
}

/// CSV with header "id,<feature names>", one row per sample.
void write_features_csv(std::ostream& out, const Dataset& data, const std::vector<AffectiveVector>& feats);

}  // namespace stgait
