#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "nrpa/model.hpp"

namespace nrpa {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary checkpoint, all integers and floats little-endian:
///
///   "NRPA"                      4 bytes
///   format version              u32
///   dims                        11 x u64: |V| |U| |I| d_w d_id K d_a window k_fm T N
///   metadata length             u32, then that many bytes of `key = value` lines
///   tensors                     f64 row-major, in for_each_tensor order:
///       word_embedding, user_embedding, item_embedding,
///       user.{conv_weight, conv_bias, word_query_weight, word_query_bias, word_harmony,
///             review_query_weight, review_query_bias, review_harmony},
///       item.{same eight},
///       fm.bias, fm.linear, fm.factors
///
/// The metadata block carries the training configuration snapshot and the
/// `conv_activation` key used to restore ModelParams::activation.
struct Checkpoint {
    ModelParams params;
    std::string metadata;
};

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace nrpa
