#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stgait/skeleton_graph.hpp"

namespace stgait {

/// Class order is fixed: it is the row/column order of every confusion matrix.
enum class EmotionLabel { Angry = 0, Neutral = 1, Happy = 2, Sad = 3 };

inline constexpr int kNumEmotions = 4;

std::string to_string(EmotionLabel l);
/// Accepts the capitalized or lower-case name or the integer code.
EmotionLabel parse_label(const std::string& s);

/// frames is T x 48, row t holding (x, y, z) of joints 0..15 in order.
/// The vertical axis is y.
using FrameMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct SkeletonSequence {
    std::string sample_id;
    FrameMatrix frames;
    EmotionLabel label = EmotionLabel::Neutral;
    std::optional<double> frame_rate;

    Index num_frames() const { return frames.rows(); }
    Eigen::Vector3d joint(Index t, Index j) const { return frames.row(t).segment<3>(3 * j).transpose(); }
    void set_joint(Index t, Index j, const Eigen::Vector3d& p) { frames.row(t).segment<3>(3 * j) = p.transpose(); }

    /// Throws ValidationError unless T >= 2, 48 columns, all values finite.
    void validate() const;
};

using Dataset = std::vector<SkeletonSequence>;

enum class DataFormat { JsonLines, FlatCsv };
std::string to_string(DataFormat f);
DataFormat parse_format(const std::string& s);
/// ".csv" selects FlatCsv, anything else JsonLines.
DataFormat format_from_path(const std::filesystem::path& p);

/// JsonLines: one object per line, {"id", "label", "fps"?, "frames": [[48 reals] x T]}.
/// FlatCsv: header "id,label,t,j0x,j0y,j0z,...,j15z", one row per frame,
/// rows of a sample contiguous and ordered by t.
/// Every loaded sequence is validated; malformed lines raise ParseError
/// with the line number.
Dataset read_dataset(std::istream& in, DataFormat format);
void write_dataset(std::ostream& out, const Dataset& data, DataFormat format);
Dataset load_dataset(const std::filesystem::path& path, DataFormat format);
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, const Dataset& data, DataFormat format);

std::array<Index, kNumEmotions> class_counts(const Dataset& data);
std::vector<int> labels_of(const Dataset& data);

/// Train/val/test index lists into a dataset.
struct DatasetSplit {
    std::vector<Index> train, val, test;
    std::uint64_t seed = 0;

    /// Throws ContractError if the three sets overlap or do not cover 0..n-1.
    void check_disjoint_cover(Index n) const;
};

/// Integer counts proportional to `ratios` summing to n: floors of the
/// exact quotas, with the remainder handed out by descending fractional
/// part (ties to the earlier slot).
std::vector<Index> largest_remainder(Index n, const std::vector<double>& ratios);

/// Seeded Fisher-Yates shuffle of 0..n-1 followed by a ratio split.
DatasetSplit split(Index n, std::uint64_t seed, const std::array<double, 3>& ratios = {7, 2, 1});

/// Portable Fisher-Yates; identical across standard libraries.
void shuffle_indices(std::vector<Index>& idx, std::mt19937_64& rng);

enum class Normalization { None, RootCentered, RootCenteredScaled };
std::string to_string(Normalization n);
Normalization parse_normalization(const std::string& s);

/// Sum of the root-spine and spine-neck bone lengths in frame t.
double spine_length(const SkeletonSequence& seq, Index t);

/// RootCentered subtracts joint 0 per frame. RootCenteredScaled further
/// divides by the mean spine length over the sequence; a zero spine
/// raises ValidationError.
SkeletonSequence normalize(const SkeletonSequence& seq, Normalization mode);

/// Fixed-length window of `window` frames. Sequences shorter than the
/// window are looped (frame t maps to t mod T). `start` < 0 selects the
/// center crop.
FrameMatrix crop_window(const SkeletonSequence& seq, Index window, Index start = -1);

/// Random crop start in [0, max(T - window, 0)].
Index random_crop_start(const SkeletonSequence& seq, Index window, std::mt19937_64& rng);

/// Stack windows [T x 48] into the network layout [N, 3, T, 16].
template <typename Scalar>
Tensor<Scalar> to_batch(const std::vector<FrameMatrix>& windows) {
    if (windows.empty()) throw DimensionError("to_batch: no samples");
    const Index n = static_cast<Index>(windows.size()), t = windows[0].rows(), v = joint::kCount;
    Vec<Scalar> data(n * 3 * t * v);
    for (Index s = 0; s < n; ++s) {
        if (windows[s].rows() != t || windows[s].cols() != 3 * v) throw DimensionError("to_batch: ragged windows");
        for (Index d = 0; d < 3; ++d)
            for (Index f = 0; f < t; ++f)
                for (Index j = 0; j < v; ++j)
                    data[((s * 3 + d) * t + f) * v + j] = static_cast<Scalar>(windows[s](f, 3 * j + d));
    }
    return Tensor<Scalar>({n, 3, t, v}, std::move(data));
}

}  // namespace stgait
