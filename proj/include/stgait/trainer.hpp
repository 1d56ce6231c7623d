#pragma once

#include <array>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "stgait/affective.hpp"
#include "stgait/config.hpp"

namespace stgait {

/// Rows are ground truth, columns predictions, both in EmotionLabel order.
using ConfusionMatrix = std::array<std::array<Index, kNumEmotions>, kNumEmotions>;

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted);
Index total(const ConfusionMatrix& m);
/// trace / sum; 0 for an empty matrix.
double accuracy(const ConfusionMatrix& m);

/// First epoch e such that no later epoch within e+1..e+patience lowers
/// the best validation loss seen up to e by at least epsilon. -1 if the
/// history ends before a full patience window confirms a plateau.
int convergence_epoch(std::span<const double> val_loss, int patience, double epsilon);

/// Normalized sequences with their raw affective descriptors.
struct PreparedDataset {
    Dataset sequences;
    std::vector<AffectiveVector> affective;  // empty when fusion is off

    Index size() const { return static_cast<Index>(sequences.size()); }
};

PreparedDataset prepare(const Dataset& data, const TrainConfig& cfg, const SkeletonGraph& graph);

struct Batch {
    Tensor<float> x;          // [B, 3, window, 16]
    Tensor<float> affective;  // [B, 8] z-scored, undefined when fusion is off
    std::vector<int> labels;
};

struct EvalResult {
    double loss = 0;
    double accuracy = 0;
    ConfusionMatrix confusion{};
    std::vector<int> predictions;
};

struct TimingStats {
    double min_ms = 0;
    double mean_ms = 0;
    int warmup = 0;
    int passes = 0;
};

/// Network, feature scaler and the configuration that produced them.
class GaitClassifier {
public:
    GaitClassifier(const TrainConfig& cfg, const SkeletonGraph& graph, std::uint64_t init_seed);

    TrainConfig config;
    SkeletonGraph graph;
    StGaitNet<float> net;
    FeatureScaler scaler;
    CrossEntropyConfig loss;

    /// Windows of the selected samples: random crops when `crop_rng` is
    /// given, center crops otherwise.
    Batch batch(const PreparedDataset& data, std::span<const Index> idx, std::mt19937_64* crop_rng = nullptr) const;

    /// Eval-mode probabilities [n, 4] of the selected samples.
    Tensor<float> probabilities(const PreparedDataset& data, std::span<const Index> idx);
    /// Eval-mode penultimate features [n, feature width].
    Tensor<float> features(const PreparedDataset& data, std::span<const Index> idx);
    EvalResult evaluate(const PreparedDataset& data, std::span<const Index> idx);
    /// `warmup` untimed then `passes` timed single-sample forwards, cycling over idx.
    TimingStats time_inference(const PreparedDataset& data, std::span<const Index> idx, int warmup, int passes);
};

struct EpochMetrics {
    int epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double train_accuracy = 0;
    double val_loss = 0;
    double val_accuracy = 0;
};

struct MetricsReport {
    std::vector<EpochMetrics> epochs;
    int best_epoch = -1;
    int convergence_epoch = -1;
    int convergence_patience = 0;
    double convergence_epsilon = 0;
    std::optional<EvalResult> test;
    std::optional<TimingStats> timing;
    std::string split_name = "test";
};

struct TrainResult {
    GaitClassifier model;
    MetricsReport report;
};

/// Trains on split.train, selects the epoch with the best validation
/// accuracy (ties keep the earlier epoch) and evaluates it on split.test.
/// Non-finite loss or gradients raise NumericError naming the epoch, batch
/// and sample ids.
/// Training and inference run with subnormal floats flushed to zero.
TrainResult train(const TrainConfig& cfg, const PreparedDataset& data, const DatasetSplit& split,
                  const SkeletonGraph& graph, const std::function<void(const EpochMetrics&)>& on_epoch = {});

std::string format_report(const MetricsReport& r);
std::string report_json(const MetricsReport& r);

/// JSON record of a run: configuration, seeds, split indices, class counts,
/// library version.
std::string run_manifest(const TrainConfig& cfg, const DatasetSplit& split, const Dataset& data,
                         const std::string& dataset_path);

std::string library_version();

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// OS. Training allocates and frees the same large blocks every step; on
/// glibc this removes most system time. No-op elsewhere.
void retain_freed_memory();

}  // namespace stgait
