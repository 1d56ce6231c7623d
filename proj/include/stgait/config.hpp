#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "stgait/affective.hpp"
#include "stgait/data.hpp"
#include "stgait/losses.hpp"
#include "stgait/model.hpp"
#include "stgait/optim.hpp"

namespace stgait {

enum class ClassWeighting { Uniform, InverseFrequency, Explicit };

/// Everything a training run needs besides the data. Defaults are the
/// reference recipe.
struct TrainConfig {
    int epochs = 200;
    Index batch_size = 8;
    OptimizerKind optimizer = OptimizerKind::RMSProp;
    double basic_lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 3e-4;
    TopologyMode gcn_initializer = TopologyMode::Offset;
    std::vector<int> lr_milestones;  // empty: constant learning rate
    double lr_decay = 0.1;

    std::array<double, 3> split_ratios{7, 2, 1};
    Index window = 48;
    std::uint64_t seed = 0;
    Normalization normalization = Normalization::None;
    std::string skeleton = "default";  // "default" or a skeleton file path
    double frame_rate = 1.0;           // used when a sample carries none

    bool affective_fusion = true;
    FusionPoint fusion_point = FusionPoint::Pooled;
    ClassWeighting class_weighting = ClassWeighting::Uniform;
    std::vector<double> class_weights;  // used with Explicit

    std::string temporal_branches = "conv3d1,conv3d2,max3,pw";
    bool batch_norm = true;
    bool learn_topology = true;

    /// Convergence epoch: first epoch e whose best validation loss is not
    /// improved by at least epsilon during the following `patience` epochs.
    int convergence_patience = 20;
    double convergence_epsilon = 1e-4;

    int timing_warmup = 10;
    int timing_passes = 216;

    /// Throws ValidationError on out-of-range values.
    void validate() const;

    ModelConfig model_config() const;
    OptimizerConfig optimizer_config() const;
    SkeletonGraph load_skeleton() const;
};

/// Plain "key = value" text, one setting per line, '#' starts a comment.
/// Unknown keys and malformed values raise ParseError with the line number.
TrainConfig parse_train_config(std::istream& in, TrainConfig base = TrainConfig{});
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base = TrainConfig{});
/// Applies one setting; `line` is only used for error messages.
void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value, long line = 0);
/// Every key with its current value; parse_train_config inverts it.
std::string format_train_config(const TrainConfig& cfg);

std::string to_string(ClassWeighting w);

}  // namespace stgait
