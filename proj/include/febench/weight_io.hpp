#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>

#include "febench/params.hpp"

namespace febench {

/// Weight file layout (all integers little-endian):
///
///   "FEB1"  u8 version(=1)  u32 entry_count
///   entry_count x { u32 name_len, name bytes, u8 dtype(0 = f32), u32 rank, rank x u32 dim }
///   payloads: f32 values of each entry, in header order
///
/// The file ends exactly after the last payload.
inline constexpr std::uint8_t kWeightFileVersion = 1;

class WeightFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_weights(const ParameterSet<float>& weights, const std::filesystem::path& path);

/// Loaded tensors do not require a gradient.
ParameterSet<float> load_weights(const std::filesystem::path& path);

}  // namespace febench
