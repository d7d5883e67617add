#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "graspdet/tensor.hpp"

namespace grasp {

struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3, interleaved row-major
  std::vector<std::uint8_t> v;
};

struct ImageU16 {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> v;
};

// Binary netpbm containers. 16-bit PGM samples are big-endian on disk per the
// format; in memory they are host-order.
ImageU8 read_ppm(const std::string& path);
void write_ppm(const std::string& path, const ImageU8& img);
ImageU16 read_pgm16(const std::string& path);
void write_pgm16(const std::string& path, const ImageU16& img);
void write_pgm8(const std::string& path, const ImageU8& img);

// [3,H,W] in [0,1] <-> interleaved 8-bit RGB.
ad::Tensor rgb_to_tensor(const ImageU8& img);
ImageU8 tensor_to_rgb(const ad::Tensor& t);

// [1,H,W] or [H,W] in [0,1], clamped and scaled to 8-bit grey.
ImageU8 tensor_to_grey(const ad::Tensor& t);

}  // namespace grasp
