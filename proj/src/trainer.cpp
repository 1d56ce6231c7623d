#include "stgait/trainer.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif
#if defined(__SSE__)
#include <xmmintrin.h>
#endif

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "stgait/losses.hpp"
#include "stgait/optim.hpp"

#ifndef STGAIT_VERSION
#define STGAIT_VERSION "unknown"
#endif

namespace stgait {

namespace {

constexpr Index kEvalChunk = 64;

// Flushes subnormal floats to zero for the guard's lifetime. Late in
// training many activations and optimizer moments decay into the subnormal
// range, where x86 arithmetic is over ten times slower.
class FlushSubnormals {
public:
#if defined(__SSE__)
    FlushSubnormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | kFtz | kDaz); }
    ~FlushSubnormals() { _mm_setcsr(saved_); }

private:
    static constexpr unsigned kFtz = 0x8000, kDaz = 0x0040;
    unsigned saved_;
#endif
};

std::uint64_t mix(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t x = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

struct Snapshot {
    std::vector<Vec<float>> params;
    std::vector<std::pair<Vec<float>, Vec<float>>> stats;
};

Snapshot take_snapshot(StGaitNet<float>& net) {
    Snapshot s;
    auto set = net.parameters();
    for (auto& [name, t] : set.params) s.params.push_back(t.data());
    for (auto& [name, st] : set.stats) s.stats.emplace_back(st->mean, st->var);
    return s;
}

void restore_snapshot(StGaitNet<float>& net, const Snapshot& s) {
    auto set = net.parameters();
    for (std::size_t i = 0; i < set.params.size(); ++i) set.params[i].second.mutable_data() = s.params[i];
    for (std::size_t i = 0; i < set.stats.size(); ++i) {
        set.stats[i].second->mean = s.stats[i].first;
        set.stats[i].second->var = s.stats[i].second;
    }
}

std::vector<int> argmax_rows(const Tensor<float>& probs) {
    const Index n = probs.dim(0), c = probs.dim(1);
    std::vector<int> out(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) {
        Index k = 0;
        probs.data().segment(i * c, c).maxCoeff(&k);
        out[i] = static_cast<int>(k);
    }
    return out;
}

CrossEntropyConfig resolve_loss(const TrainConfig& cfg, const PreparedDataset& data, std::span<const Index> train_idx) {
    switch (cfg.class_weighting) {
        case ClassWeighting::Uniform: return {};
        case ClassWeighting::Explicit: return {cfg.class_weights};
        case ClassWeighting::InverseFrequency: {
            std::vector<int> labels;
            for (Index i : train_idx) labels.push_back(static_cast<int>(data.sequences[i].label));
            return {inverse_frequency_weights(labels, kNumEmotions)};
        }
    }
    return {};
}

std::string batch_ids(const PreparedDataset& data, std::span<const Index> idx) {
    std::string s;
    for (Index i : idx) s += (s.empty() ? "" : ",") + data.sequences[i].sample_id;
    return s;
}

}  // namespace

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted) {
    if (truth.size() != predicted.size()) throw DimensionError("confusion_matrix: length mismatch");
    ConfusionMatrix m{};
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= kNumEmotions || predicted[i] < 0 || predicted[i] >= kNumEmotions) {
            throw ValidationError("confusion_matrix: class index out of range");
        }
        ++m[truth[i]][predicted[i]];
    }
    return m;
}

Index total(const ConfusionMatrix& m) {
    Index n = 0;
    for (const auto& row : m) n += std::accumulate(row.begin(), row.end(), Index{0});
    return n;
}

double accuracy(const ConfusionMatrix& m) {
    const Index n = total(m);
    Index diag = 0;
    for (int k = 0; k < kNumEmotions; ++k) diag += m[k][k];
    return n == 0 ? 0.0 : static_cast<double>(diag) / static_cast<double>(n);
}

int convergence_epoch(std::span<const double> val_loss, int patience, double epsilon) {
    const int n = static_cast<int>(val_loss.size());
    double best = INFINITY;
    for (int e = 0; e + patience < n; ++e) {
        best = std::min(best, val_loss[e]);
        bool improved = false;
        for (int k = e + 1; k <= e + patience && !improved; ++k) improved = val_loss[k] <= best - epsilon;
        if (!improved) return e;
    }
    return -1;
}

PreparedDataset prepare(const Dataset& data, const TrainConfig& cfg, const SkeletonGraph& graph) {
    PreparedDataset out;
    out.sequences.reserve(data.size());
    for (const auto& s : data) out.sequences.push_back(normalize(s, cfg.normalization));
    if (cfg.affective_fusion) out.affective = extract_all(out.sequences, graph, cfg.frame_rate);
    return out;
}

GaitClassifier::GaitClassifier(const TrainConfig& cfg, const SkeletonGraph& g, std::uint64_t init_seed)
    : config(cfg), graph(g), net(cfg.model_config(), g, init_seed) {
    config.validate();
    if (graph.num_joints != joint::kCount) {
        throw ValidationError("the classifier needs a 16-joint skeleton, got " + std::to_string(graph.num_joints));
    }
    if (config.class_weighting == ClassWeighting::Explicit) loss.class_weights = config.class_weights;
    scaler.mean = Eigen::VectorXd::Zero(kAffectiveWidth);
    scaler.stddev = Eigen::VectorXd::Ones(kAffectiveWidth);
}

Batch GaitClassifier::batch(const PreparedDataset& data, std::span<const Index> idx, std::mt19937_64* crop_rng) const {
    std::vector<FrameMatrix> windows;
    Batch b;
    windows.reserve(idx.size());
    for (Index i : idx) {
        const auto& seq = data.sequences.at(static_cast<std::size_t>(i));
        const Index start = crop_rng ? random_crop_start(seq, config.window, *crop_rng) : -1;
        windows.push_back(crop_window(seq, config.window, start));
        b.labels.push_back(static_cast<int>(seq.label));
    }
    b.x = to_batch<float>(windows);
    if (config.affective_fusion) {
        if (static_cast<Index>(data.affective.size()) != data.size()) {
            throw ContractError("dataset was prepared without affective features");
        }
        std::vector<AffectiveVector> feats;
        for (Index i : idx) feats.push_back(data.affective[i]);
        b.affective = feature_tensor<float>(feats, scaler);
    }
    return b;
}

Tensor<float> GaitClassifier::probabilities(const PreparedDataset& data, std::span<const Index> idx) {
    const FlushSubnormals flush;
    std::vector<Tensor<float>> parts;
    for (std::size_t s = 0; s < idx.size(); s += kEvalChunk) {
        const auto chunk = idx.subspan(s, std::min<std::size_t>(kEvalChunk, idx.size() - s));
        const Batch b = batch(data, chunk);
        parts.push_back(net.predict(b.x, b.affective));
    }
    if (parts.empty()) throw DimensionError("probabilities: no samples");
    return parts.size() == 1 ? parts[0] : concat(parts, 0);
}

Tensor<float> GaitClassifier::features(const PreparedDataset& data, std::span<const Index> idx) {
    const FlushSubnormals flush;
    std::vector<Tensor<float>> parts;
    for (std::size_t s = 0; s < idx.size(); s += kEvalChunk) {
        const auto chunk = idx.subspan(s, std::min<std::size_t>(kEvalChunk, idx.size() - s));
        const Batch b = batch(data, chunk);
        parts.push_back(net.features(b.x, b.affective, false));
    }
    if (parts.empty()) throw DimensionError("features: no samples");
    return parts.size() == 1 ? parts[0] : concat(parts, 0);
}

EvalResult GaitClassifier::evaluate(const PreparedDataset& data, std::span<const Index> idx) {
    const FlushSubnormals flush;
    EvalResult r;
    if (idx.empty()) return r;
    std::vector<int> truth;
    double loss_sum = 0;
    for (std::size_t s = 0; s < idx.size(); s += kEvalChunk) {
        const auto chunk = idx.subspan(s, std::min<std::size_t>(kEvalChunk, idx.size() - s));
        const Batch b = batch(data, chunk);
        const Tensor<float> logits = net.logits(b.x, b.affective, false);
        loss_sum += static_cast<double>(cross_entropy(logits, b.labels, loss).item()) * static_cast<double>(chunk.size());
        const auto pred = argmax_rows(logits);
        r.predictions.insert(r.predictions.end(), pred.begin(), pred.end());
        truth.insert(truth.end(), b.labels.begin(), b.labels.end());
    }
    r.loss = loss_sum / static_cast<double>(idx.size());
    r.confusion = confusion_matrix(truth, r.predictions);
    r.accuracy = stgait::accuracy(r.confusion);
    return r;
}

TimingStats GaitClassifier::time_inference(const PreparedDataset& data, std::span<const Index> idx, int warmup,
                                           int passes) {
    const FlushSubnormals flush;
    TimingStats t;
    t.warmup = warmup;
    t.passes = passes;
    if (idx.empty() || passes <= 0) return t;
    std::vector<Batch> singles;
    for (Index i : idx) singles.push_back(batch(data, std::span<const Index>(&i, 1)));
    for (int k = 0; k < warmup; ++k) {
        const Batch& b = singles[static_cast<std::size_t>(k) % singles.size()];
        net.predict(b.x, b.affective);
    }
    double sum = 0, best = INFINITY;
    for (int k = 0; k < passes; ++k) {
        const Batch& b = singles[static_cast<std::size_t>(k) % singles.size()];
        const auto start = std::chrono::steady_clock::now();
        net.predict(b.x, b.affective);
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        sum += ms;
        best = std::min(best, ms);
    }
    t.min_ms = best;
    t.mean_ms = sum / passes;
    return t;
}

TrainResult train(const TrainConfig& cfg, const PreparedDataset& data, const DatasetSplit& split,
                  const SkeletonGraph& graph, const std::function<void(const EpochMetrics&)>& on_epoch) {
    const FlushSubnormals flush;
    cfg.validate();
    split.check_disjoint_cover(data.size());
    if (split.train.empty()) throw ValidationError("training split is empty");

    GaitClassifier model(cfg, graph, mix(cfg.seed, 1));
    model.loss = resolve_loss(cfg, data, split.train);
    if (cfg.class_weighting == ClassWeighting::InverseFrequency) {
        model.config.class_weighting = ClassWeighting::Explicit;
        model.config.class_weights = model.loss.class_weights;
    }
    if (cfg.affective_fusion) {
        std::vector<AffectiveVector> train_feats;
        for (Index i : split.train) train_feats.push_back(data.affective.at(static_cast<std::size_t>(i)));
        model.scaler = FeatureScaler::fit(train_feats);
        // checkpoints store the scaler in single precision
        model.scaler.mean = model.scaler.mean.cast<float>().cast<double>();
        model.scaler.stddev = model.scaler.stddev.cast<float>().cast<double>();
    }

    auto params = model.net.parameters();
    std::vector<std::pair<std::string, Tensor<float>>> trainable;
    for (auto& p : params.params)
        if (p.second.requires_grad()) trainable.push_back(p);
    Optimizer<float> opt(cfg.optimizer_config(), trainable);
    const StepDecay schedule{cfg.lr_milestones, cfg.lr_decay};

    std::mt19937_64 shuffle_rng(mix(cfg.seed, 2)), crop_rng(mix(cfg.seed, 3));
    std::vector<Index> order = split.train;
    MetricsReport report;
    report.convergence_patience = cfg.convergence_patience;
    report.convergence_epsilon = cfg.convergence_epsilon;
    std::optional<Snapshot> best;
    double best_acc = -1;
    std::vector<double> val_losses;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochMetrics m;
        m.epoch = epoch;
        m.lr = schedule.lr_at(cfg.basic_lr, epoch);
        opt.set_lr(m.lr);
        shuffle_indices(order, shuffle_rng);
        double loss_sum = 0;
        Index correct = 0;
        for (std::size_t s = 0, batch_no = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch_size), ++batch_no) {
            const auto idx = std::span<const Index>(order).subspan(
                s, std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - s));
            const Batch b = model.batch(data, idx, &crop_rng);
            opt.zero_grad();
            const Tensor<float> logits = model.net.logits(b.x, b.affective, true);
            Tensor<float> loss = cross_entropy(logits, b.labels, model.loss);
            const double value = loss.item();
            if (!std::isfinite(value)) {
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_no) + " (samples " + batch_ids(data, idx) + ")");
            }
            backward(loss);
            try {
                opt.step();
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_no) + " (samples " + batch_ids(data, idx) + ")");
            }
            loss_sum += value * static_cast<double>(idx.size());
            const auto pred = argmax_rows(logits);
            for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b.labels[i];
        }
        m.train_loss = loss_sum / static_cast<double>(order.size());
        m.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        if (!split.val.empty()) {
            const EvalResult v = model.evaluate(data, split.val);
            m.val_loss = v.loss;
            m.val_accuracy = v.accuracy;
        }
        val_losses.push_back(m.val_loss);
        const double select = split.val.empty() ? m.train_accuracy : m.val_accuracy;
        if (select > best_acc) {
            best_acc = select;
            report.best_epoch = epoch;
            best = take_snapshot(model.net);
        }
        report.epochs.push_back(m);
        if (on_epoch) on_epoch(m);
    }
    if (best) restore_snapshot(model.net, *best);
    if (!split.val.empty()) {
        report.convergence_epoch = convergence_epoch(val_losses, cfg.convergence_patience, cfg.convergence_epsilon);
    }
    if (!split.test.empty()) report.test = model.evaluate(data, split.test);
    return {std::move(model), std::move(report)};
}

std::string format_report(const MetricsReport& r) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    if (!r.epochs.empty()) {
        const auto& last = r.epochs.back();
        out << "epochs run:          " << r.epochs.size() << '\n'
            << "final train loss:    " << last.train_loss << "  accuracy " << last.train_accuracy << '\n'
            << "final val loss:      " << last.val_loss << "  accuracy " << last.val_accuracy << '\n'
            << "best epoch:          " << r.best_epoch << '\n'
            << "convergence epoch:   " << r.convergence_epoch << "  (validation loss plateau: no improvement >= "
            << std::defaultfloat << r.convergence_epsilon << " within " << r.convergence_patience << " epochs)\n"
            << std::fixed;
    }
    if (r.test) {
        const auto& t = *r.test;
        out << r.split_name << " samples:        " << total(t.confusion) << '\n'
            << r.split_name << " loss:           " << t.loss << '\n'
            << r.split_name << " accuracy:       " << t.accuracy << '\n'
            << "confusion matrix (rows: truth, columns: prediction)\n"
            << std::setw(10) << "";
        for (int c = 0; c < kNumEmotions; ++c) out << std::setw(9) << to_string(static_cast<EmotionLabel>(c));
        out << std::setw(10) << "recall" << '\n';
        for (int g = 0; g < kNumEmotions; ++g) {
            out << std::setw(10) << to_string(static_cast<EmotionLabel>(g));
            Index row = 0;
            for (int c = 0; c < kNumEmotions; ++c) {
                out << std::setw(9) << t.confusion[g][c];
                row += t.confusion[g][c];
            }
            if (row) {
                out << std::setw(10) << static_cast<double>(t.confusion[g][g]) / static_cast<double>(row) << '\n';
            } else {
                out << std::setw(10) << "-" << '\n';
            }
        }
    }
    if (r.timing) {
        out << std::setprecision(3) << "inference per sample: min " << r.timing->min_ms << " ms, mean "
            << r.timing->mean_ms << " ms (" << r.timing->passes << " passes after " << r.timing->warmup
            << " warm-up)\n";
    }
    return out.str();
}

std::string report_json(const MetricsReport& r) {
    nlohmann::json j;
    auto epochs = nlohmann::json::array();
    for (const auto& e : r.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"lr", e.lr},
                          {"train_loss", e.train_loss},
                          {"train_accuracy", e.train_accuracy},
                          {"val_loss", e.val_loss},
                          {"val_accuracy", e.val_accuracy}});
    }
    j["epochs"] = epochs;
    j["best_epoch"] = r.best_epoch;
    j["convergence_epoch"] = r.convergence_epoch;
    j["convergence_rule"] = {{"patience", r.convergence_patience}, {"epsilon", r.convergence_epsilon}};
    if (r.test) {
        j["split"] = r.split_name;
        j["loss"] = r.test->loss;
        j["accuracy"] = r.test->accuracy;
        j["confusion"] = r.test->confusion;
    }
    if (r.timing) {
        j["timing_ms"] = {{"min", r.timing->min_ms},
                          {"mean", r.timing->mean_ms},
                          {"warmup", r.timing->warmup},
                          {"passes", r.timing->passes}};
    }
    return j.dump(2);
}

std::string run_manifest(const TrainConfig& cfg, const DatasetSplit& split, const Dataset& data,
                         const std::string& dataset_path) {
    nlohmann::json j;
    j["version"] = library_version();
    j["dataset"] = dataset_path;
    j["samples"] = data.size();
    j["class_counts"] = class_counts(data);
    j["seed"] = cfg.seed;
    j["split_seed"] = split.seed;
    j["config"] = format_train_config(cfg);
    j["split"] = {{"train", split.train}, {"val", split.val}, {"test", split.test}};
    return j.dump(2);
}

std::string library_version() { return STGAIT_VERSION; }

void retain_freed_memory() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace stgait
