#pragma once

// Categorical hyperparameter search with a TPE-style surrogate.
//
// After a seeded-random cold start, trials are ranked by objective and the
// top gamma fraction (at least one) forms the "good" set. Each dimension gets
// Laplace-smoothed category frequencies l(c) over good trials and g(c) over
// the rest; the next point is the unevaluated one maximizing prod_d l/g.
// Failed trials rank below every completed one.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "stgait/model.hpp"
#include "stgait/optim.hpp"

namespace stgait {

/// Category index per dimension: basic_lr, gcn_initializer, optimizer, weight_decay.
using SearchPoint = std::array<int, 4>;

struct HyperParams {
    double basic_lr;
    TopologyMode gcn_initializer;
    OptimizerKind optimizer;
    double weight_decay;
};

struct SearchSpace {
    std::vector<double> basic_lr{0.01, 0.1, 0.3};
    std::vector<TopologyMode> gcn_initializer{TopologyMode::Importance, TopologyMode::Offset};
    std::vector<OptimizerKind> optimizer{OptimizerKind::Adam, OptimizerKind::RMSProp, OptimizerKind::SGD};
    std::vector<double> weight_decay{3e-4, 1e-4};

    SearchPoint cardinality() const;
    int size() const;
    /// Mixed-radix index, last dimension fastest.
    int index_of(const SearchPoint& p) const;
    SearchPoint point_at(int index) const;
    std::vector<SearchPoint> all() const;
    HyperParams decode(const SearchPoint& p) const;
    /// Inverse of decode; throws ValidationError for out-of-space values.
    SearchPoint encode(const HyperParams& h) const;
};

enum class TrialStatus { Done, Failed };

struct TrialRecord {
    SearchPoint point{};
    double objective = 0;  // meaningful only when Done
    TrialStatus status = TrialStatus::Done;
    int epochs_run = 0;
    std::string message;   // failure reason
};

struct TpeOptions {
    double gamma = 0.25;
    int cold_start = 5;
};

/// Next point to evaluate, or nullopt when every point has been evaluated.
/// Deterministic in (history, seed).
std::optional<SearchPoint> suggest(const std::vector<TrialRecord>& history, const SearchSpace& space,
                                   std::uint64_t seed, const TpeOptions& opts = TpeOptions{});

struct TrialOutcome {
    double objective = 0;
    int epochs_run = 0;
};

/// Exceptions thrown by the objective mark the trial failed.
using Objective = std::function<TrialOutcome(const HyperParams&)>;

struct SearchResult {
    std::optional<TrialRecord> best;  // empty if every trial failed
    std::vector<TrialRecord> history;
};

/// Evaluates points until `budget` trials exist in the history (prior
/// trials from a resumed run count toward it) or the space is exhausted.
/// Each new record is passed to `on_trial` as soon as it completes.
SearchResult run_search(int budget, const Objective& objective, const SearchSpace& space, std::uint64_t seed,
                        std::vector<TrialRecord> prior = {}, const TpeOptions& opts = TpeOptions{},
                        const std::function<void(const TrialRecord&)>& on_trial = {});

/// Highest objective among completed trials; ties keep the earliest.
std::optional<TrialRecord> best_trial(const std::vector<TrialRecord>& history);

/// JsonLines, one object per trial:
/// {"basic_lr", "gcn_initializer", "optimizer", "weight_decay", "objective", "status", "epochs_run", "message"?}
std::string format_trial(const TrialRecord& r, const SearchSpace& space);
TrialRecord parse_trial(const std::string& line, const SearchSpace& space, long line_no = 0);
std::vector<TrialRecord> read_history(std::istream& in, const SearchSpace& space);
std::vector<TrialRecord> load_history(const std::filesystem::path& path, const SearchSpace& space);

}  // namespace stgait
