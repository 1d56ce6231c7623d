#include "stgait/hpo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "json.hpp"

namespace stgait {

namespace {

template <typename T>
int find_category(const std::vector<T>& values, const T& v, const char* dim) {
    const auto it = std::find(values.begin(), values.end(), v);
    if (it == values.end()) throw ValidationError(std::string("value outside the search space for ") + dim);
    return static_cast<int>(it - values.begin());
}

double rank_key(const TrialRecord& r) {
    return r.status == TrialStatus::Done ? r.objective : -std::numeric_limits<double>::infinity();
}

}  // namespace

SearchPoint SearchSpace::cardinality() const {
    return {static_cast<int>(basic_lr.size()), static_cast<int>(gcn_initializer.size()),
            static_cast<int>(optimizer.size()), static_cast<int>(weight_decay.size())};
}

int SearchSpace::size() const {
    int n = 1;
    for (int c : cardinality()) n *= c;
    return n;
}

int SearchSpace::index_of(const SearchPoint& p) const {
    const auto card = cardinality();
    int idx = 0;
    for (std::size_t d = 0; d < 4; ++d) {
        if (p[d] < 0 || p[d] >= card[d]) throw ValidationError("search point outside the space");
        idx = idx * card[d] + p[d];
    }
    return idx;
}

SearchPoint SearchSpace::point_at(int index) const {
    const auto card = cardinality();
    SearchPoint p{};
    for (int d = 3; d >= 0; --d) {
        p[d] = index % card[d];
        index /= card[d];
    }
    return p;
}

std::vector<SearchPoint> SearchSpace::all() const {
    std::vector<SearchPoint> out;
    for (int i = 0; i < size(); ++i) out.push_back(point_at(i));
    return out;
}

HyperParams SearchSpace::decode(const SearchPoint& p) const {
    index_of(p);
    return {basic_lr[p[0]], gcn_initializer[p[1]], optimizer[p[2]], weight_decay[p[3]]};
}

SearchPoint SearchSpace::encode(const HyperParams& h) const {
    return {find_category(basic_lr, h.basic_lr, "basic_lr"),
            find_category(gcn_initializer, h.gcn_initializer, "gcn_initializer"),
            find_category(optimizer, h.optimizer, "optimizer"),
            find_category(weight_decay, h.weight_decay, "weight_decay")};
}

std::optional<SearchPoint> suggest(const std::vector<TrialRecord>& history, const SearchSpace& space,
                                   std::uint64_t seed, const TpeOptions& opts) {
    std::vector<char> evaluated(static_cast<std::size_t>(space.size()), 0);
    for (const auto& r : history) evaluated[space.index_of(r.point)] = 1;
    std::vector<int> open;
    for (int i = 0; i < space.size(); ++i)
        if (!evaluated[i]) open.push_back(i);
    if (open.empty()) return std::nullopt;

    std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ull * (history.size() + 1)));
    if (static_cast<int>(history.size()) < opts.cold_start) {
        return space.point_at(open[rng() % open.size()]);
    }

    std::vector<const TrialRecord*> ranked;
    for (const auto& r : history) ranked.push_back(&r);
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const TrialRecord* a, const TrialRecord* b) { return rank_key(*a) > rank_key(*b); });
    const std::size_t n_good = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(opts.gamma * static_cast<double>(ranked.size()))));

    const auto card = space.cardinality();
    std::array<std::vector<double>, 4> log_ratio;
    for (std::size_t d = 0; d < 4; ++d) {
        std::vector<double> good(static_cast<std::size_t>(card[d]), 1.0), bad(static_cast<std::size_t>(card[d]), 1.0);
        for (std::size_t i = 0; i < ranked.size(); ++i) (i < n_good ? good : bad)[ranked[i]->point[d]] += 1.0;
        const double ng = n_good + card[d], nb = ranked.size() - n_good + card[d];
        for (int c = 0; c < card[d]; ++c) log_ratio[d].push_back(std::log(good[c] / ng) - std::log(bad[c] / nb));
    }

    double best = -std::numeric_limits<double>::infinity();
    std::vector<int> ties;
    for (int i : open) {
        const SearchPoint p = space.point_at(i);
        double score = 0;
        for (std::size_t d = 0; d < 4; ++d) score += log_ratio[d][p[d]];
        if (score > best + 1e-12) {
            best = score;
            ties = {i};
        } else if (score >= best - 1e-12) {
            ties.push_back(i);
        }
    }
    return space.point_at(ties[rng() % ties.size()]);
}

std::optional<TrialRecord> best_trial(const std::vector<TrialRecord>& history) {
    std::optional<TrialRecord> best;
    for (const auto& r : history) {
        if (r.status != TrialStatus::Done) continue;
        if (!best || r.objective > best->objective) best = r;
    }
    return best;
}

SearchResult run_search(int budget, const Objective& objective, const SearchSpace& space, std::uint64_t seed,
                        std::vector<TrialRecord> prior, const TpeOptions& opts,
                        const std::function<void(const TrialRecord&)>& on_trial) {
    if (budget < 1) throw ValidationError("search budget must be at least 1");
    SearchResult res;
    res.history = std::move(prior);
    while (static_cast<int>(res.history.size()) < budget) {
        const auto next = suggest(res.history, space, seed, opts);
        if (!next) break;
        TrialRecord rec;
        rec.point = *next;
        try {
            const TrialOutcome out = objective(space.decode(*next));
            if (!std::isfinite(out.objective)) throw NumericError("objective is not finite");
            rec.objective = out.objective;
            rec.epochs_run = out.epochs_run;
        } catch (const std::exception& e) {
            rec.status = TrialStatus::Failed;
            rec.message = e.what();
        }
        res.history.push_back(rec);
        if (on_trial) on_trial(rec);
    }
    res.best = best_trial(res.history);
    return res;
}

std::string format_trial(const TrialRecord& r, const SearchSpace& space) {
    const HyperParams h = space.decode(r.point);
    nlohmann::json j;
    j["basic_lr"] = h.basic_lr;
    j["gcn_initializer"] = to_string(h.gcn_initializer);
    j["optimizer"] = to_string(h.optimizer);
    j["weight_decay"] = h.weight_decay;
    j["status"] = r.status == TrialStatus::Done ? "done" : "failed";
    j["objective"] = r.status == TrialStatus::Done ? nlohmann::json(r.objective) : nlohmann::json(nullptr);
    j["epochs_run"] = r.epochs_run;
    if (!r.message.empty()) j["message"] = r.message;
    return j.dump();
}

TrialRecord parse_trial(const std::string& line, const SearchSpace& space, long line_no) {
    try {
        const auto j = nlohmann::json::parse(line);
        HyperParams h{j.at("basic_lr").get<double>(), parse_topology_mode(j.at("gcn_initializer").get<std::string>()),
                      parse_optimizer(j.at("optimizer").get<std::string>()), j.at("weight_decay").get<double>()};
        TrialRecord r;
        r.point = space.encode(h);
        const auto status = j.at("status").get<std::string>();
        if (status != "done" && status != "failed") throw ParseError("unknown trial status '" + status + "'", line_no);
        r.status = status == "done" ? TrialStatus::Done : TrialStatus::Failed;
        if (r.status == TrialStatus::Done) r.objective = j.at("objective").get<double>();
        r.epochs_run = j.value("epochs_run", 0);
        r.message = j.value("message", std::string{});
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad trial record: ") + e.what(), line_no);
    }
}

std::vector<TrialRecord> read_history(std::istream& in, const SearchSpace& space) {
    std::vector<TrialRecord> out;
    std::string line;
    long n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        out.push_back(parse_trial(line, space, n));
    }
    return out;
}

std::vector<TrialRecord> load_history(const std::filesystem::path& path, const SearchSpace& space) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open search history '" + path.string() + "'");
    return read_history(in, space);
}

}  // namespace stgait
