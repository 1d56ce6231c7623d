#include "stgait/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace stgait {

namespace {

using V3 = Eigen::Vector3d;

// Trunk direction pitched forward by a.
V3 up_dir(double a) { return {std::sin(a), std::cos(a), 0}; }
// Limb direction: straight down, swung forward by a.
V3 down_dir(double a) { return {std::sin(a), -std::cos(a), 0}; }

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace

void GaitParams::validate() const {
    if (speed < 0 || stride_amp < 0 || arm_swing_amp < 0 || torso_sway_amp < 0 || noise_std < 0) {
        throw ValidationError("gait amplitudes must be non-negative");
    }
    if (!(cadence > 0 && cadence < std::numbers::pi)) throw ValidationError("cadence must lie in (0, pi)");
}

GaitParams emotion_profile(EmotionLabel label) {
    GaitParams p;
    switch (label) {
        case EmotionLabel::Angry:
            p.speed = 0.065, p.stride_amp = 0.80, p.arm_swing_amp = 0.55, p.head_pitch = 0.05;
            p.torso_sway_amp = 0.06, p.cadence = 0.24;
            break;
        case EmotionLabel::Neutral:
            p.speed = 0.045, p.stride_amp = 0.60, p.arm_swing_amp = 0.35, p.head_pitch = 0.0;
            p.torso_sway_amp = 0.03, p.cadence = 0.20;
            break;
        case EmotionLabel::Happy:
            p.speed = 0.055, p.stride_amp = 0.65, p.arm_swing_amp = 0.55, p.head_pitch = 0.25;
            p.torso_sway_amp = 0.04, p.cadence = 0.28;
            break;
        case EmotionLabel::Sad:
            p.speed = 0.025, p.stride_amp = 0.40, p.arm_swing_amp = 0.12, p.head_pitch = -0.35;
            p.torso_sway_amp = 0.02, p.cadence = 0.15;
            break;
    }
    return p;
}

SkeletonSequence generate(const GaitParams& params, Index T, std::uint64_t seed, const BodyDimensions& body) {
    params.validate();
    if (T < 2) throw ValidationError("generate needs T >= 2");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> phase0(0.0, 2 * std::numbers::pi);
    const double start_phase = phase0(rng);

    const double leg = body.thigh + body.shin;
    const double hip_amp = std::asin(std::min(params.stride_amp / (4 * leg), 1.0));
    const double knee_amp = 0.15 + 0.8 * hip_amp;
    const double elbow_flex = 0.35 + 0.6 * params.arm_swing_amp;

    SkeletonSequence seq;
    seq.frames.resize(T, 3 * joint::kCount);
    for (Index t = 0; t < T; ++t) {
        const double phi = params.cadence * static_cast<double>(t) + start_phase;
        const double s = std::sin(phi), c = std::cos(phi);
        const double pitch = params.torso_sway_amp * std::sin(2 * phi);

        const V3 root(params.speed * static_cast<double>(t), leg, 0);
        const V3 spine = root + body.spine * up_dir(pitch);
        const V3 neck = spine + body.spine * up_dir(pitch);
        const V3 head = neck + body.head * up_dir(pitch - params.head_pitch);
        seq.set_joint(t, joint::kRoot, root);
        seq.set_joint(t, joint::kSpine, spine);
        seq.set_joint(t, joint::kNeck, neck);
        seq.set_joint(t, joint::kHead, head);

        // arms swing opposite to the same-side leg
        const double arm[2] = {-params.arm_swing_amp * s, params.arm_swing_amp * s};
        const Index shoulder_j[2] = {joint::kLeftShoulder, joint::kRightShoulder};
        for (int side = 0; side < 2; ++side) {
            const double lateral = side == 0 ? -body.shoulder_half_width : body.shoulder_half_width;
            const V3 shoulder = neck + V3(0, 0, lateral);
            const V3 elbow = shoulder + body.upper_arm * down_dir(arm[side]);
            const V3 hand = elbow + body.forearm * down_dir(arm[side] + elbow_flex);
            seq.set_joint(t, shoulder_j[side], shoulder);
            seq.set_joint(t, shoulder_j[side] + 1, elbow);
            seq.set_joint(t, shoulder_j[side] + 2, hand);
        }

        // knees straighten at the extremes of the stride, flex at mid-swing
        const double hip[2] = {hip_amp * s, -hip_amp * s};
        const double knee_flex = knee_amp * c * c;
        const Index hip_j[2] = {joint::kLeftHip, joint::kRightHip};
        for (int side = 0; side < 2; ++side) {
            const double lateral = side == 0 ? -body.hip_half_width : body.hip_half_width;
            const V3 h = root + V3(0, 0, lateral);
            const V3 knee = h + body.thigh * down_dir(hip[side]);
            const V3 foot = knee + body.shin * down_dir(hip[side] - knee_flex);
            seq.set_joint(t, hip_j[side], h);
            seq.set_joint(t, hip_j[side] + 1, knee);
            seq.set_joint(t, hip_j[side] + 2, foot);
        }
    }
    if (params.noise_std > 0) {
        std::normal_distribution<double> noise(0.0, params.noise_std);
        for (Index i = 0; i < seq.frames.size(); ++i) seq.frames.data()[i] += noise(rng);
    }
    return seq;
}

Dataset make_dataset(Index n_per_class, Index T, std::uint64_t seed, const SynthOptions& opts) {
    if (n_per_class < 1) throw ValidationError("make_dataset needs n_per_class >= 1");
    Dataset out;
    out.reserve(static_cast<std::size_t>(4 * n_per_class));
    for (int c = 0; c < kNumEmotions; ++c) {
        const auto label = static_cast<EmotionLabel>(c);
        for (Index i = 0; i < n_per_class; ++i) {
            const std::uint64_t sample_seed = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(c * n_per_class + i)));
            std::mt19937_64 rng(splitmix64(sample_seed));
            std::normal_distribution<double> z(0.0, 1.0);
            GaitParams p = emotion_profile(label);
            const double j = opts.param_jitter;
            auto rel = [&](double v) { return std::max(v * (1 + j * z(rng)), 0.0); };
            p.speed = rel(p.speed);
            p.stride_amp = rel(p.stride_amp);
            p.arm_swing_amp = rel(p.arm_swing_amp);
            p.torso_sway_amp = rel(p.torso_sway_amp);
            p.cadence = std::clamp(rel(p.cadence), 0.05, 3.0);
            p.head_pitch += 0.5 * j * z(rng);
            p.noise_std = opts.noise_std;
            SkeletonSequence seq = generate(p, T, sample_seed);
            seq.label = label;
            seq.sample_id = "synth-" + std::to_string(seed) + "-" + std::to_string(c * n_per_class + i);
            out.push_back(std::move(seq));
        }
    }
    return out;
}

}  // namespace stgait
