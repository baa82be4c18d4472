// SPDX-License-Identifier: Apache-2.0
//
// Parameter checkpoint file:
//   "MRCK" | u8 version | u32 count |
//   count x ( u16 name_len | name (UTF-8) | u8 rank | u32 dims[rank] | f32 data[] )
//   | u32 config_len | config JSON (UTF-8)
// All integers little-endian. The trailing config block carries the model
// configuration so eval/predict can rebuild the network.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mravff/tensor.hpp"

namespace mravff::inline MRAVFF_ABI {

inline constexpr std::uint8_t kCheckpointVersion = 1;

struct StoredTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct CheckpointContents {
  std::vector<StoredTensor> tensors;
  std::string config_json;
};

std::vector<char> encode_checkpoint(const std::vector<Parameter>& params,
                                    const std::string& config_json);
CheckpointContents decode_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const std::string& path, const std::vector<Parameter>& params,
                     const std::string& config_json);
CheckpointContents load_checkpoint(const std::string& path);

/// Copies stored values into `params`. Names and shapes must match exactly.
void restore_parameters(const CheckpointContents& contents, std::vector<Parameter>& params);

}  // namespace mravff
