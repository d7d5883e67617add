#pragma once

#include <string>
#include <vector>

#include "graspdet/tensor.hpp"

namespace grasp {

struct NamedParam {
  std::string name;
  ad::Tensor value;
};

// Flat versioned container, little-endian throughout:
//   magic "GRASPCK\0" | u32 version=1 | 4-byte element tag "f64\0" | u32 count
//   then per parameter, in file order:
//   u32 name_len | name bytes | u32 ndim | u32 dims[ndim] | u64 byte_len |
//   raw f64 elements.
void save_checkpoint(const std::string& path, const std::vector<NamedParam>& params);
std::vector<NamedParam> load_checkpoint(const std::string& path);

}  // namespace grasp
