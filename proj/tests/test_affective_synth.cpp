#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Geometry>

#include <cmath>
#include <numbers>
#include <sstream>

#include "stgait/affective.hpp"
#include "stgait/synthetic.hpp"

using namespace stgait;

namespace {

const SkeletonGraph kGraph = build_default_skeleton();

GaitParams clean(EmotionLabel l) {
    GaitParams p = emotion_profile(l);
    p.noise_std = 0;
    return p;
}

SkeletonSequence rotate_about_vertical(const SkeletonSequence& s, double angle) {
    const Eigen::Matrix3d r = Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitY()).toRotationMatrix();
    SkeletonSequence out = s;
    for (Index t = 0; t < s.num_frames(); ++t)
        for (Index j = 0; j < 16; ++j) out.set_joint(t, j, r * s.joint(t, j) + Eigen::Vector3d(1.5, 0, -2));
    return out;
}

// Leave-one-out 1-nearest-neighbour accuracy on z-scored descriptors.
double one_nn_loo(const Dataset& d) {
    const auto feats = extract_all(d, kGraph);
    const auto scaler = FeatureScaler::fit(feats);
    std::vector<Eigen::VectorXd> z;
    for (const auto& f : feats) z.push_back(scaler.apply(f));
    int hits = 0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        double best = INFINITY;
        std::size_t arg = i;
        for (std::size_t j = 0; j < z.size(); ++j) {
            if (j == i) continue;
            const double dist = (z[i] - z[j]).squaredNorm();
            if (dist < best) best = dist, arg = j;
        }
        hits += d[arg].label == d[i].label;
    }
    return double(hits) / double(z.size());
}

// Threshold rules on the generating parameters.
EmotionLabel classify_params(const GaitParams& p) {
    if (p.head_pitch < -0.1) return EmotionLabel::Sad;
    if (p.head_pitch > 0.15) return EmotionLabel::Happy;
    return p.speed > 0.055 ? EmotionLabel::Angry : EmotionLabel::Neutral;
}

}  // namespace

TEST_CASE("profiles: documented orderings") {
    const auto a = emotion_profile(EmotionLabel::Angry), n = emotion_profile(EmotionLabel::Neutral),
               h = emotion_profile(EmotionLabel::Happy), s = emotion_profile(EmotionLabel::Sad);
    CHECK(s.speed < n.speed);
    CHECK(n.speed < a.speed);
    CHECK(s.head_pitch < 0);
    CHECK(0 < h.head_pitch);
    CHECK(h.cadence > a.cadence);
    CHECK(a.stride_amp > n.stride_amp);
}

TEST_CASE("profiles: pairwise separated in at least two parameters") {
    for (int i = 0; i < 4; ++i) {
        for (int j = i + 1; j < 4; ++j) {
            const auto p = emotion_profile(static_cast<EmotionLabel>(i)), q = emotion_profile(static_cast<EmotionLabel>(j));
            const double gap = 2 * kDefaultNoiseStd;
            const int separated = (std::abs(p.speed - q.speed) >= gap) + (std::abs(p.stride_amp - q.stride_amp) >= gap) +
                                  (std::abs(p.arm_swing_amp - q.arm_swing_amp) >= gap) +
                                  (std::abs(p.head_pitch - q.head_pitch) >= gap) +
                                  (std::abs(p.torso_sway_amp - q.torso_sway_amp) >= gap) +
                                  (std::abs(p.cadence - q.cadence) >= gap);
            CAPTURE(i);
            CAPTURE(j);
            CHECK(separated >= 2);
        }
    }
    for (int c = 0; c < 4; ++c) CHECK(classify_params(emotion_profile(static_cast<EmotionLabel>(c))) == static_cast<EmotionLabel>(c));
}

TEST_CASE("generate: determinism, validity, rigid bones") {
    GaitParams p = emotion_profile(EmotionLabel::Happy);
    p.noise_std = 0.02;
    const auto a = generate(p, 48, 9), b = generate(p, 48, 9), c = generate(p, 48, 10);
    CHECK(a.frames == b.frames);
    CHECK(a.frames != c.frames);
    CHECK_NOTHROW(a.validate());

    const auto r = generate(clean(EmotionLabel::Angry), 60, 3);
    for (const auto& [u, v] : kGraph.edges) {
        const double len0 = (r.joint(0, u) - r.joint(0, v)).norm();
        for (Index t = 1; t < 60; ++t) CHECK(std::abs((r.joint(t, u) - r.joint(t, v)).norm() - len0) < 1e-9);
    }
    CHECK_THROWS_AS(generate(p, 1, 0), ValidationError);
    p.cadence = 4.0;
    CHECK_THROWS_AS(generate(p, 10, 0), ValidationError);
}

TEST_CASE("generate: hands mirror-symmetric without arm swing") {
    GaitParams p = clean(EmotionLabel::Neutral);
    p.arm_swing_amp = 0;
    const auto s = generate(p, 40, 4);
    for (Index t = 0; t < 40; ++t) {
        const Eigen::Vector3d l = s.joint(t, joint::kLeftHand), r = s.joint(t, joint::kRightHand);
        CHECK(std::abs(l.x() - r.x()) < 1e-9);
        CHECK(std::abs(l.y() - r.y()) < 1e-9);
        CHECK(std::abs(l.z() + r.z()) < 1e-9);
    }
}

TEST_CASE("affective: generator ground truth") {
    for (int c = 0; c < 4; ++c) {
        const auto p = clean(static_cast<EmotionLabel>(c));
        const auto f = extract(generate(p, 96, 7 + c), kGraph);
        CAPTURE(c);
        CHECK(std::abs(f[AffectiveFeature::Speed] - p.speed) <= 0.05 * p.speed);
        CHECK(std::abs(f[AffectiveFeature::Stride] - p.stride_amp) <= 0.05 * p.stride_amp);
        CHECK_FALSE(f.degenerate);
        // upright torso with the head pitched by head_pitch: pi/2 + head_pitch on average
        CHECK(std::abs(f[AffectiveFeature::HeadPitch] - (std::numbers::pi / 2 + p.head_pitch)) < 0.01);
        CHECK(f[AffectiveFeature::NormalizedStride] == doctest::Approx(f[AffectiveFeature::Stride] / 0.4));
    }
}

TEST_CASE("affective: stationary sequence") {
    auto s = generate(clean(EmotionLabel::Neutral), 2, 1);
    s.frames.row(1) = s.frames.row(0);
    const auto f = extract(s, kGraph);
    CHECK(f[AffectiveFeature::Speed] == 0.0);
    CHECK(f[AffectiveFeature::Stride] == 0.0);
}

TEST_CASE("affective: similarity and rotation invariance") {
    GaitParams p = emotion_profile(EmotionLabel::Angry);
    const auto s = generate(p, 48, 12);
    const auto f = extract(s, kGraph);

    SkeletonSequence big = s;
    big.frames *= 2;
    const auto g = extract(big, kGraph);
    for (auto k : {AffectiveFeature::Speed, AffectiveFeature::Stride, AffectiveFeature::ArmSwing})
        CHECK(g[k] == doctest::Approx(2 * f[k]).epsilon(1e-12));
    for (auto k : {AffectiveFeature::ElbowAngle, AffectiveFeature::KneeAngle, AffectiveFeature::HeadPitch,
                   AffectiveFeature::TorsoLean, AffectiveFeature::NormalizedStride})
        CHECK(std::abs(g[k] - f[k]) < 1e-12);

    for (double angle : {0.3, 1.9, -2.7}) {
        const auto r = extract(rotate_about_vertical(s, angle), kGraph);
        CHECK((r.values - f.values).cwiseAbs().maxCoeff() < 1e-9);
    }
    CHECK(extract(s, kGraph).values == f.values);
    for (Index i = 0; i < kAffectiveWidth; ++i) CHECK(std::isfinite(f.values[i]));
    for (auto k : {AffectiveFeature::ElbowAngle, AffectiveFeature::KneeAngle, AffectiveFeature::HeadPitch,
                   AffectiveFeature::TorsoLean}) {
        CHECK(f[k] >= 0);
        CHECK(f[k] <= std::numbers::pi);
    }
}

TEST_CASE("affective: degenerate bone zeroes the feature and warns") {
    auto s = generate(clean(EmotionLabel::Sad), 10, 2);
    for (Index t = 0; t < 10; ++t) s.set_joint(t, joint::kLeftElbow, s.joint(t, joint::kLeftShoulder));
    const auto f = extract(s, kGraph);
    CHECK(f.degenerate);
    CHECK(f[AffectiveFeature::ElbowAngle] == 0.0);
    CHECK_FALSE(f.warnings.empty());
    CHECK(f[AffectiveFeature::KneeAngle] > 0.0);
}

TEST_CASE("affective: CSV export") {
    const auto d = make_dataset(1, 20, 3);
    std::ostringstream out;
    write_features_csv(out, d, extract_all(d, kGraph));
    std::istringstream in(out.str());
    std::string line;
    int rows = 0;
    std::getline(in, line);
    CHECK(line == "id,speed,stride,arm_swing,elbow_angle,knee_angle,head_pitch,torso_lean,normalized_stride");
    while (std::getline(in, line)) {
        ++rows;
        CHECK(std::count(line.begin(), line.end(), ',') == 8);
    }
    CHECK(rows == 4);
}

TEST_CASE("make_dataset: balance, labels, disjoint seeds") {
    const auto d = make_dataset(16, 48, 1);
    CHECK(d.size() == 64);
    CHECK(class_counts(d) == std::array<Index, 4>{16, 16, 16, 16});
    for (const auto& s : d) CHECK_NOTHROW(s.validate());
    const auto e = make_dataset(16, 48, 2);
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(d[i].frames(0, 1) != e[i].frames(0, 1));
    CHECK(make_dataset(2, 48, 1)[0].frames == make_dataset(2, 48, 1)[0].frames);
}

TEST_CASE("make_dataset: 1-NN leave-one-out separability at default noise") {
    double total = 0;
    for (std::uint64_t seed : {1, 2, 3}) {
        const double acc = one_nn_loo(make_dataset(50, 48, seed));
        MESSAGE("1-NN LOO accuracy, seed " << seed << ": " << acc);
        CHECK(acc >= 0.90);
        total += acc;
    }
    CHECK(total / 3 <= 0.98);
}
