#pragma once

// Binary checkpoint, little-endian throughout:
//
//   magic        8 bytes  "STGAITCK"
//   version      u32      kCheckpointVersion
//   header_len   u64
//   header       header_len bytes of JSON:
//                {"train_config": <key = value text>, "skeleton": <skeleton text>}
//   count        u32      number of tensors
//   count times:
//     name_len   u32, name bytes
//     ndim       u32, ndim x i64 extents
//     data       numel x f32, row-major
//
// Tensors are the network parameters by name, every batch-norm running
// mean/var as "<layer>.running_mean"/"<layer>.running_var", and the
// affective scaler as "affective.mean"/"affective.std".

#include <filesystem>
#include <iosfwd>

#include "stgait/trainer.hpp"

namespace stgait {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, GaitClassifier& model);
/// Throws ValidationError on a bad magic, unsupported version, or a tensor
/// set that does not match the architecture in the header.
GaitClassifier read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, GaitClassifier& model);
GaitClassifier load_checkpoint(const std::filesystem::path& path);

}  // namespace stgait
