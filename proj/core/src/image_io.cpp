#include "graspdet/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "graspdet/errors.hpp"

namespace grasp {

namespace {

// Reads one whitespace-delimited token, skipping '#' comment lines.
std::string next_token(std::istream& is) {
  std::string tok;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {}
      continue;
    }
    if (!std::isspace(c)) break;
  }
  if (c == EOF) return tok;
  tok.push_back(static_cast<char>(c));
  while ((c = is.get()) != EOF && !std::isspace(c)) tok.push_back(static_cast<char>(c));
  return tok;
}

int parse_dim(const std::string& tok, const std::string& path) {
  if (tok.empty()) throw ParseError("truncated netpbm header: " + path);
  int v = 0;
  for (char ch : tok) {
    if (ch < '0' || ch > '9') throw ParseError("bad netpbm header token '" + tok + "': " + path);
    v = v * 10 + (ch - '0');
    if (v > 1 << 24) throw ParseError("absurd netpbm dimension: " + path);
  }
  return v;
}

void read_header(std::istream& is, const std::string& path, const char* want_magic,
                 int& w, int& h, int& maxval) {
  std::string magic = next_token(is);
  if (magic != want_magic) throw ParseError("expected " + std::string(want_magic) + ": " + path);
  w = parse_dim(next_token(is), path);
  h = parse_dim(next_token(is), path);
  maxval = parse_dim(next_token(is), path);
  if (w <= 0 || h <= 0) throw ParseError("empty image: " + path);
  // A single whitespace byte separates the header from raster data.
}

}  // namespace

ImageU8 read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  int w, h, maxval;
  read_header(is, path, "P6", w, h, maxval);
  if (maxval != 255) throw ParseError("only 8-bit PPM supported: " + path);
  ImageU8 img{w, h, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3)};
  if (!is.read(reinterpret_cast<char*>(img.v.data()), static_cast<std::streamsize>(img.v.size())))
    throw ParseError("truncated PPM raster: " + path);
  return img;
}

void write_ppm(const std::string& path, const ImageU8& img) {
  if (img.channels != 3) throw ArgumentError("write_ppm needs 3-channel image");
  if (img.v.size() != static_cast<std::size_t>(img.width) * img.height * 3)
    throw ArgumentError("write_ppm size mismatch");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for write: " + path);
  os << "P6\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.v.data()), static_cast<std::streamsize>(img.v.size()));
  if (!os) throw IoError("write failed: " + path);
}

ImageU16 read_pgm16(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  int w, h, maxval;
  read_header(is, path, "P5", w, h, maxval);
  if (maxval != 65535) throw ParseError("expected 16-bit PGM: " + path);
  ImageU16 img{w, h, std::vector<std::uint16_t>(static_cast<std::size_t>(w) * h)};
  std::vector<std::uint8_t> raw(img.v.size() * 2);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw ParseError("truncated PGM raster: " + path);
  for (std::size_t i = 0; i < img.v.size(); ++i)
    img.v[i] = static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
  return img;
}

void write_pgm16(const std::string& path, const ImageU16& img) {
  if (img.v.size() != static_cast<std::size_t>(img.width) * img.height)
    throw ArgumentError("write_pgm16 size mismatch");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for write: " + path);
  os << "P5\n" << img.width << " " << img.height << "\n65535\n";
  std::vector<std::uint8_t> raw(img.v.size() * 2);
  for (std::size_t i = 0; i < img.v.size(); ++i) {
    raw[2 * i] = static_cast<std::uint8_t>(img.v[i] >> 8);
    raw[2 * i + 1] = static_cast<std::uint8_t>(img.v[i] & 0xff);
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw IoError("write failed: " + path);
}

void write_pgm8(const std::string& path, const ImageU8& img) {
  if (img.channels != 1) throw ArgumentError("write_pgm8 needs 1-channel image");
  if (img.v.size() != static_cast<std::size_t>(img.width) * img.height)
    throw ArgumentError("write_pgm8 size mismatch");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for write: " + path);
  os << "P5\n" << img.width << " " << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.v.data()), static_cast<std::streamsize>(img.v.size()));
  if (!os) throw IoError("write failed: " + path);
}

ad::Tensor rgb_to_tensor(const ImageU8& img) {
  if (img.channels != 3) throw ArgumentError("rgb_to_tensor needs 3-channel image");
  ad::Tensor t = ad::Tensor::zeros({3, img.height, img.width});
  ad::real* out = t.data();
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c)
      out[c * plane + i] = static_cast<ad::real>(img.v[3 * i + c]) / ad::real(255);
  return t;
}

ImageU8 tensor_to_rgb(const ad::Tensor& t) {
  if (t.shape().size() != 3 || t.shape()[0] != 3) throw ArgumentError("tensor_to_rgb needs [3,H,W]");
  const int h = t.shape()[1], w = t.shape()[2];
  ImageU8 img{w, h, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3)};
  const ad::real* in = t.data();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(static_cast<double>(in[c * plane + i]), 0.0, 1.0);
      img.v[3 * i + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  return img;
}

ImageU8 tensor_to_grey(const ad::Tensor& t) {
  int h, w;
  if (t.shape().size() == 3 && t.shape()[0] == 1) {
    h = t.shape()[1];
    w = t.shape()[2];
  } else if (t.shape().size() == 2) {
    h = t.shape()[0];
    w = t.shape()[1];
  } else {
    throw ArgumentError("tensor_to_grey needs [1,H,W] or [H,W]");
  }
  ImageU8 img{w, h, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h)};
  const ad::real* in = t.data();
  for (std::size_t i = 0; i < img.v.size(); ++i) {
    const double v = std::clamp(static_cast<double>(in[i]), 0.0, 1.0);
    img.v[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

}  // namespace grasp
