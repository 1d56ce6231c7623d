#pragma once

// Sinusoidal kinematic walker on the canonical 16-joint skeleton.
// Axes: x forward (walking direction), y up, z to the walker's right.
// All bones are rigid; the root moves at constant speed along +x.

#include <cstdint>

#include "stgait/data.hpp"

namespace stgait {

struct GaitParams {
    double speed = 0.045;          // root displacement per frame
    double stride_amp = 0.6;       // peak-to-peak fore-aft separation of the feet
    double arm_swing_amp = 0.35;   // shoulder swing amplitude, radians
    double head_pitch = 0.0;       // radians, positive raises the head
    double torso_sway_amp = 0.03;  // forward pitch oscillation of the trunk, radians
    double cadence = 0.2;          // gait phase advance, radians per frame
    double noise_std = 0.0;        // additive coordinate noise

    /// Throws ValidationError on negative amplitudes or cadence outside (0, pi).
    void validate() const;
};

/// Segment lengths of the synthetic body.
struct BodyDimensions {
    double spine = 0.25;  // root-spine and spine-neck, each
    double head = 0.15;
    double shoulder_half_width = 0.2;
    double hip_half_width = 0.12;
    double upper_arm = 0.30;
    double forearm = 0.28;
    double thigh = 0.45;
    double shin = 0.45;
};

/// Coordinate noise used by make_dataset unless overridden.
inline constexpr double kDefaultNoiseStd = 0.02;
/// Relative per-sample jitter of profile parameters in make_dataset.
inline constexpr double kDefaultParamJitter = 0.12;

/// Fixed per-emotion regimes:
///   Angry   fast, long stride, wide arm swing
///   Happy   high cadence, wide arm swing, raised head
///   Sad     slow, short stride, lowered head
///   Neutral intermediate values
GaitParams emotion_profile(EmotionLabel label);

/// One walking sequence of T frames; deterministic in (params, T, seed).
SkeletonSequence generate(const GaitParams& params, Index T, std::uint64_t seed,
                          const BodyDimensions& body = BodyDimensions{});

struct SynthOptions {
    double noise_std = kDefaultNoiseStd;
    double param_jitter = kDefaultParamJitter;
};

/// Balanced dataset of 4 * n_per_class sequences, class-major order,
/// each sample drawing jittered profile parameters and its own seed.
Dataset make_dataset(Index n_per_class, Index T, std::uint64_t seed, const SynthOptions& opts = SynthOptions{});

}  // namespace stgait
