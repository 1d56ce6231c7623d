#include "stgait/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace stgait {

namespace {

constexpr Index kCols = 3 * joint::kCount;

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_real(const std::string& s, long line) {
    std::size_t used = 0;
    double v = 0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw ParseError("bad number '" + s + "'", line);
    }
    if (used != s.size()) throw ParseError("bad number '" + s + "'", line);
    return v;
}

void validate_with_line(const SkeletonSequence& seq, long line) {
    try {
        seq.validate();
    } catch (const ValidationError& e) {
        throw ValidationError("line " + std::to_string(line) + ": " + e.what());
    }
}

Dataset read_jsonl(std::istream& in) {
    Dataset out;
    std::string text;
    long line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(std::string("invalid JSON: ") + e.what(), line);
        }
        if (!rec.is_object() || !rec.contains("id") || !rec.contains("label") || !rec.contains("frames")) {
            throw ParseError("record needs id, label and frames", line);
        }
        SkeletonSequence seq;
        seq.sample_id = rec["id"].is_string() ? rec["id"].get<std::string>() : rec["id"].dump();
        const auto& lab = rec["label"];
        seq.label = parse_label(lab.is_string() ? lab.get<std::string>() : lab.dump());
        if (rec.contains("fps") && !rec["fps"].is_null()) {
            if (!rec["fps"].is_number()) throw ParseError("fps must be a number", line);
            seq.frame_rate = rec["fps"].get<double>();
        }
        const auto& frames = rec["frames"];
        if (!frames.is_array()) throw ParseError("frames must be an array", line);
        seq.frames.resize(static_cast<Index>(frames.size()), kCols);
        for (std::size_t t = 0; t < frames.size(); ++t) {
            const auto& row = frames[t];
            if (!row.is_array() || static_cast<Index>(row.size()) != kCols) {
                throw ParseError("frame " + std::to_string(t) + " has " +
                                     std::to_string(row.is_array() ? row.size() : 0) + " values, expected 48",
                                 line);
            }
            for (Index c = 0; c < kCols; ++c) {
                const auto& v = row[static_cast<std::size_t>(c)];
                // nlohmann reads NaN/Inf literals as null; both are rejected here
                if (!v.is_number()) throw ValidationError("line " + std::to_string(line) + ": non-finite value");
                seq.frames(static_cast<Index>(t), c) = v.get<double>();
            }
        }
        validate_with_line(seq, line);
        out.push_back(std::move(seq));
    }
    return out;
}

Dataset read_csv(std::istream& in) {
    Dataset out;
    std::string text;
    long line = 0;
    if (!std::getline(in, text)) return out;
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    const auto header = split_csv(text);
    if (static_cast<Index>(header.size()) != 3 + kCols || header[0] != "id" || header[1] != "label" || header[2] != "t") {
        throw ParseError("expected header id,label,t,j0x..j15z", line);
    }
    std::vector<std::vector<double>> rows;
    long first_line = 0;
    auto flush = [&](SkeletonSequence& seq) {
        if (rows.empty()) return;
        seq.frames.resize(static_cast<Index>(rows.size()), kCols);
        for (std::size_t t = 0; t < rows.size(); ++t)
            for (Index c = 0; c < kCols; ++c) seq.frames(static_cast<Index>(t), c) = rows[t][c];
        validate_with_line(seq, first_line);
        out.push_back(std::move(seq));
        rows.clear();
    };
    SkeletonSequence cur;
    while (std::getline(in, text)) {
        ++line;
        if (!text.empty() && text.back() == '\r') text.pop_back();
        if (text.empty()) continue;
        const auto f = split_csv(text);
        if (f.size() != header.size()) {
            throw ParseError("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()),
                             line);
        }
        if (rows.empty() || f[0] != cur.sample_id) {
            flush(cur);
            cur = SkeletonSequence{};
            cur.sample_id = f[0];
            cur.label = parse_label(f[1]);
            first_line = line;
        }
        const double t = parse_real(f[2], line);
        if (t != static_cast<double>(rows.size())) throw ParseError("frame index out of order", line);
        std::vector<double> vals(kCols);
        for (Index c = 0; c < kCols; ++c) vals[c] = parse_real(f[3 + c], line);
        rows.push_back(std::move(vals));
    }
    flush(cur);
    return out;
}

}  // namespace

std::string to_string(EmotionLabel l) {
    switch (l) {
        case EmotionLabel::Angry: return "Angry";
        case EmotionLabel::Neutral: return "Neutral";
        case EmotionLabel::Happy: return "Happy";
        case EmotionLabel::Sad: return "Sad";
    }
    return "?";
}

EmotionLabel parse_label(const std::string& s) {
    static const std::map<std::string, EmotionLabel> names{
        {"Angry", EmotionLabel::Angry}, {"angry", EmotionLabel::Angry}, {"0", EmotionLabel::Angry},
        {"Neutral", EmotionLabel::Neutral}, {"neutral", EmotionLabel::Neutral}, {"1", EmotionLabel::Neutral},
        {"Happy", EmotionLabel::Happy}, {"happy", EmotionLabel::Happy}, {"2", EmotionLabel::Happy},
        {"Sad", EmotionLabel::Sad}, {"sad", EmotionLabel::Sad}, {"3", EmotionLabel::Sad}};
    auto it = names.find(s);
    if (it == names.end()) throw ValidationError("unknown emotion label '" + s + "'");
    return it->second;
}

void SkeletonSequence::validate() const {
    if (frames.cols() != kCols) {
        throw ValidationError("sample '" + sample_id + "': " + std::to_string(frames.cols()) +
                              " columns, expected 48 (16 joints x 3)");
    }
    if (frames.rows() < 2) throw ValidationError("sample '" + sample_id + "': needs at least 2 frames");
    if (!frames.allFinite()) throw ValidationError("sample '" + sample_id + "': non-finite value");
    if (frame_rate && !(*frame_rate > 0 && std::isfinite(*frame_rate))) {
        throw ValidationError("sample '" + sample_id + "': frame rate must be positive");
    }
}

std::string to_string(DataFormat f) { return f == DataFormat::JsonLines ? "jsonl" : "csv"; }

DataFormat parse_format(const std::string& s) {
    if (s == "jsonl" || s == "jsonlines" || s == "JsonLines") return DataFormat::JsonLines;
    if (s == "csv" || s == "flatcsv" || s == "FlatCsv") return DataFormat::FlatCsv;
    throw ValidationError("unknown data format '" + s + "'");
}

DataFormat format_from_path(const std::filesystem::path& p) {
    return p.extension() == ".csv" ? DataFormat::FlatCsv : DataFormat::JsonLines;
}

Dataset read_dataset(std::istream& in, DataFormat format) {
    return format == DataFormat::JsonLines ? read_jsonl(in) : read_csv(in);
}

void write_dataset(std::ostream& out, const Dataset& data, DataFormat format) {
    if (format == DataFormat::JsonLines) {
        for (const auto& seq : data) {
            nlohmann::json rec;
            rec["id"] = seq.sample_id;
            rec["label"] = to_string(seq.label);
            if (seq.frame_rate) rec["fps"] = *seq.frame_rate;
            auto frames = nlohmann::json::array();
            for (Index t = 0; t < seq.num_frames(); ++t) {
                std::vector<double> row(seq.frames.row(t).begin(), seq.frames.row(t).end());
                frames.push_back(std::move(row));
            }
            rec["frames"] = std::move(frames);
            out << rec.dump() << '\n';
        }
        return;
    }
    out << "id,label,t";
    for (Index j = 0; j < joint::kCount; ++j) out << ",j" << j << "x,j" << j << "y,j" << j << "z";
    out << '\n' << std::setprecision(17);
    for (const auto& seq : data) {
        if (seq.sample_id.find(',') != std::string::npos) {
            throw ValidationError("sample id '" + seq.sample_id + "' contains a comma");
        }
        for (Index t = 0; t < seq.num_frames(); ++t) {
            out << seq.sample_id << ',' << to_string(seq.label) << ',' << t;
            for (Index c = 0; c < kCols; ++c) out << ',' << seq.frames(t, c);
            out << '\n';
        }
    }
}

Dataset load_dataset(const std::filesystem::path& path, DataFormat format) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open dataset '" + path.string() + "'");
    return read_dataset(in, format);
}

Dataset load_dataset(const std::filesystem::path& path) { return load_dataset(path, format_from_path(path)); }

void save_dataset(const std::filesystem::path& path, const Dataset& data, DataFormat format) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write dataset '" + path.string() + "'");
    write_dataset(out, data, format);
}

std::array<Index, kNumEmotions> class_counts(const Dataset& data) {
    std::array<Index, kNumEmotions> c{};
    for (const auto& s : data) ++c[static_cast<std::size_t>(s.label)];
    return c;
}

std::vector<int> labels_of(const Dataset& data) {
    std::vector<int> out;
    out.reserve(data.size());
    for (const auto& s : data) out.push_back(static_cast<int>(s.label));
    return out;
}

void DatasetSplit::check_disjoint_cover(Index n) const {
    std::vector<int> seen(static_cast<std::size_t>(n), 0);
    for (const auto* part : {&train, &val, &test}) {
        for (Index i : *part) {
            if (i < 0 || i >= n) throw ContractError("split index " + std::to_string(i) + " out of range");
            if (seen[i]++) throw ContractError("split index " + std::to_string(i) + " appears twice (leakage)");
        }
    }
    if (std::find(seen.begin(), seen.end(), 0) != seen.end()) throw ContractError("split does not cover the dataset");
}

std::vector<Index> largest_remainder(Index n, const std::vector<double>& ratios) {
    const double total = std::accumulate(ratios.begin(), ratios.end(), 0.0);
    if (ratios.empty() || !(total > 0)) throw ValidationError("split ratios must be positive");
    std::vector<Index> counts(ratios.size());
    std::vector<std::pair<double, std::size_t>> frac;
    Index assigned = 0;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        if (ratios[i] < 0) throw ValidationError("split ratios must be non-negative");
        const double quota = static_cast<double>(n) * ratios[i] / total;
        counts[i] = static_cast<Index>(std::floor(quota));
        assigned += counts[i];
        frac.emplace_back(quota - std::floor(quota), i);
    }
    std::stable_sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (Index r = 0; r < n - assigned; ++r) ++counts[frac[static_cast<std::size_t>(r)].second];
    return counts;
}

void shuffle_indices(std::vector<Index>& idx, std::mt19937_64& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(idx[i - 1], idx[j]);
    }
}

DatasetSplit split(Index n, std::uint64_t seed, const std::array<double, 3>& ratios) {
    if (n < 10) throw ValidationError("split needs at least 10 samples, got " + std::to_string(n));
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::mt19937_64 rng(seed);
    shuffle_indices(idx, rng);
    const auto counts = largest_remainder(n, {ratios.begin(), ratios.end()});
    DatasetSplit s;
    s.seed = seed;
    auto it = idx.begin();
    s.train.assign(it, it + counts[0]);
    s.val.assign(it + counts[0], it + counts[0] + counts[1]);
    s.test.assign(it + counts[0] + counts[1], idx.end());
    return s;
}

std::string to_string(Normalization n) {
    switch (n) {
        case Normalization::None: return "none";
        case Normalization::RootCentered: return "root_centered";
        case Normalization::RootCenteredScaled: return "root_centered_scaled";
    }
    return "none";
}

Normalization parse_normalization(const std::string& s) {
    if (s == "none") return Normalization::None;
    if (s == "root_centered" || s == "RootCentered") return Normalization::RootCentered;
    if (s == "root_centered_scaled" || s == "RootCenteredScaled") return Normalization::RootCenteredScaled;
    throw ValidationError("unknown normalization '" + s + "'");
}

double spine_length(const SkeletonSequence& seq, Index t) {
    return (seq.joint(t, joint::kSpine) - seq.joint(t, joint::kRoot)).norm() +
           (seq.joint(t, joint::kNeck) - seq.joint(t, joint::kSpine)).norm();
}

SkeletonSequence normalize(const SkeletonSequence& seq, Normalization mode) {
    SkeletonSequence out = seq;
    if (mode == Normalization::None) return out;
    for (Index t = 0; t < out.num_frames(); ++t) {
        const Eigen::Vector3d root = seq.joint(t, joint::kRoot);
        for (Index j = 0; j < joint::kCount; ++j) out.set_joint(t, j, seq.joint(t, j) - root);
    }
    if (mode == Normalization::RootCenteredScaled) {
        double mean = 0;
        for (Index t = 0; t < out.num_frames(); ++t) mean += spine_length(out, t);
        mean /= static_cast<double>(out.num_frames());
        if (!(mean > 0)) throw ValidationError("sample '" + seq.sample_id + "': zero spine length");
        out.frames /= mean;
    }
    return out;
}

FrameMatrix crop_window(const SkeletonSequence& seq, Index window, Index start) {
    if (window < 1) throw ValidationError("window must be positive");
    const Index t = seq.num_frames();
    if (start < 0) start = std::max<Index>(t - window, 0) / 2;
    FrameMatrix out(window, kCols);
    for (Index f = 0; f < window; ++f) out.row(f) = seq.frames.row((start + f) % t);
    return out;
}

Index random_crop_start(const SkeletonSequence& seq, Index window, std::mt19937_64& rng) {
    const Index slack = std::max<Index>(seq.num_frames() - window, 0);
    return slack == 0 ? 0 : static_cast<Index>(rng() % static_cast<std::uint64_t>(slack + 1));
}

}  // namespace stgait
