#include "stgait/affective.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <set>

namespace stgait {

namespace {

using V3 = Eigen::Vector3d;
using joint::kHead, joint::kLeftElbow, joint::kLeftFoot, joint::kLeftHand, joint::kLeftHip, joint::kLeftKnee,
    joint::kLeftShoulder, joint::kNeck, joint::kRightElbow, joint::kRightFoot, joint::kRightHand, joint::kRightHip,
    joint::kRightKnee, joint::kRightShoulder, joint::kRoot;

constexpr double kTiny = 1e-12;
const V3 kUp(0, 1, 0);

// Angle between two vectors in [0, pi]; atan2 form stays accurate near 0 and pi.
double angle_between(const V3& a, const V3& b) { return std::atan2(a.cross(b).norm(), a.dot(b)); }

struct Accumulator {
    std::set<std::string> bad;

    // Interior angle at b of the chain a-b-c.
    double joint_angle(const V3& a, const V3& b, const V3& c, const char* feature) {
        const V3 u = a - b, w = c - b;
        if (u.norm() < kTiny || w.norm() < kTiny) {
            bad.insert(feature);
            return 0;
        }
        return angle_between(u, w);
    }
};

}  // namespace

const std::array<std::string, kAffectiveWidth>& affective_feature_names() {
    static const std::array<std::string, kAffectiveWidth> names{
        "speed", "stride", "arm_swing", "elbow_angle", "knee_angle", "head_pitch", "torso_lean", "normalized_stride"};
    return names;
}

AffectiveVector extract(const SkeletonSequence& seq, const SkeletonGraph& graph, double default_frame_rate) {
    seq.validate();
    if (graph.num_joints != joint::kCount) {
        throw ValidationError("affective features need the 16-joint skeleton, graph has " +
                              std::to_string(graph.num_joints) + " joints");
    }
    const Index T = seq.num_frames();
    const double fps = seq.frame_rate.value_or(default_frame_rate);
    Accumulator acc;
    AffectiveVector out;

    for (const auto& [a, b] : graph.edges) {
        for (Index t = 0; t < T; ++t) {
            if ((seq.joint(t, a) - seq.joint(t, b)).norm() < kTiny) {
                out.degenerate = true;
                out.warnings.push_back("zero-length bone " + std::to_string(a) + "-" + std::to_string(b) + " in frame " +
                                       std::to_string(t));
                break;
            }
        }
    }

    double speed = 0;
    for (Index t = 0; t + 1 < T; ++t) speed += (seq.joint(t + 1, kRoot) - seq.joint(t, kRoot)).norm();
    out.values[0] = speed / static_cast<double>(T - 1) * fps;

    constexpr double inf = std::numeric_limits<double>::infinity();
    double sep_lo = inf, sep_hi = -inf;
    std::array<double, 2> arm_lo{inf, inf}, arm_hi{-inf, -inf};
    double elbow = 0, knee = 0, head = 0, torso = 0, width = 0;
    bool forward_ok = true;
    for (Index t = 0; t < T; ++t) {
        const V3 across = seq.joint(t, kRightShoulder) - seq.joint(t, kLeftShoulder);
        width += across.norm();
        V3 fwd = kUp.cross(across);
        if (fwd.norm() < kTiny) {
            forward_ok = false;
        } else {
            fwd.normalize();
            const double sep = (seq.joint(t, kLeftFoot) - seq.joint(t, kRightFoot)).dot(fwd);
            sep_lo = std::min(sep_lo, sep);
            sep_hi = std::max(sep_hi, sep);
            const std::array<std::pair<Index, Index>, 2> arms{{{kLeftShoulder, kLeftHand}, {kRightShoulder, kRightHand}}};
            for (std::size_t s = 0; s < 2; ++s) {
                const double x = (seq.joint(t, arms[s].second) - seq.joint(t, arms[s].first)).dot(fwd);
                arm_lo[s] = std::min(arm_lo[s], x);
                arm_hi[s] = std::max(arm_hi[s], x);
            }
            const V3 up_head = seq.joint(t, kHead) - seq.joint(t, kNeck);
            if (up_head.norm() < kTiny) acc.bad.insert("head_pitch");
            else head += angle_between(up_head, fwd);
        }
        elbow += 0.5 * (acc.joint_angle(seq.joint(t, kLeftShoulder), seq.joint(t, kLeftElbow), seq.joint(t, kLeftHand),
                                        "elbow_angle") +
                        acc.joint_angle(seq.joint(t, kRightShoulder), seq.joint(t, kRightElbow),
                                        seq.joint(t, kRightHand), "elbow_angle"));
        knee += 0.5 * (acc.joint_angle(seq.joint(t, kLeftHip), seq.joint(t, kLeftKnee), seq.joint(t, kLeftFoot),
                                       "knee_angle") +
                       acc.joint_angle(seq.joint(t, kRightHip), seq.joint(t, kRightKnee), seq.joint(t, kRightFoot),
                                       "knee_angle"));
        const V3 trunk = seq.joint(t, kNeck) - seq.joint(t, kRoot);
        if (trunk.norm() < kTiny) acc.bad.insert("torso_lean");
        else torso += angle_between(trunk, kUp);
    }
    const double n = static_cast<double>(T);
    if (forward_ok) {
        out.values[1] = sep_hi - sep_lo;
        out.values[2] = 0.25 * ((arm_hi[0] - arm_lo[0]) + (arm_hi[1] - arm_lo[1]));
        out.values[5] = head / n;
    } else {
        for (const char* f : {"stride", "arm_swing", "head_pitch", "normalized_stride"}) acc.bad.insert(f);
    }
    out.values[3] = elbow / n;
    out.values[4] = knee / n;
    out.values[6] = torso / n;
    width /= n;
    if (width < kTiny) acc.bad.insert("normalized_stride");
    else out.values[7] = out.values[1] / width;

    const auto& names = affective_feature_names();
    for (Index i = 0; i < kAffectiveWidth; ++i) {
        if (acc.bad.count(names[static_cast<std::size_t>(i)])) {
            out.values[i] = 0;
            out.degenerate = true;
            out.warnings.push_back(names[static_cast<std::size_t>(i)] + " undefined (zero-length direction), set to 0");
        }
    }
    return out;
}

std::vector<AffectiveVector> extract_all(const Dataset& data, const SkeletonGraph& graph, double default_frame_rate) {
    std::vector<AffectiveVector> out;
    out.reserve(data.size());
    for (const auto& s : data) out.push_back(extract(s, graph, default_frame_rate));
    return out;
}

FeatureScaler FeatureScaler::fit(const std::vector<AffectiveVector>& feats) {
    FeatureScaler s;
    s.mean = Eigen::VectorXd::Zero(kAffectiveWidth);
    s.stddev = Eigen::VectorXd::Ones(kAffectiveWidth);
    if (feats.empty()) return s;
    for (const auto& f : feats) s.mean += f.values;
    s.mean /= static_cast<double>(feats.size());
    Eigen::VectorXd var = Eigen::VectorXd::Zero(kAffectiveWidth);
    for (const auto& f : feats) var += (f.values - s.mean).cwiseAbs2();
    var /= static_cast<double>(feats.size());
    for (Index i = 0; i < kAffectiveWidth; ++i) s.stddev[i] = var[i] > 0 ? std::sqrt(var[i]) : 1.0;
    return s;
}

Eigen::VectorXd FeatureScaler::apply(const AffectiveVector& f) const {
    if (mean.size() != kAffectiveWidth || stddev.size() != kAffectiveWidth) {
        throw DimensionError("feature scaler is not fitted");
    }
    return (f.values - mean).cwiseQuotient(stddev);
}

void write_features_csv(std::ostream& out, const Dataset& data, const std::vector<AffectiveVector>& feats) {
    if (data.size() != feats.size()) throw DimensionError("feature rows do not match samples");
    out << "id";
    for (const auto& name : affective_feature_names()) out << ',' << name;
    out << '\n' << std::setprecision(17);
    for (std::size_t i = 0; i < data.size(); ++i) {
        out << data[i].sample_id;
        for (Index k = 0; k < kAffectiveWidth; ++k) out << ',' << feats[i].values[k];
        out << '\n';
    }
}

}  // namespace stgait
