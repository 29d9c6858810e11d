#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "osn/tensor.hpp"

namespace osn::pipeline {

class PgmParseError : public std::runtime_error {
 public:
  PgmParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Binary P5, maxval 65535, big-endian samples. Values map affinely from
// [min, max] of the image onto [0, 65535] with rounding; a constant image
// encodes as all zeros. Accepts [H,W] or [1,H,W].
std::string encode_pgm(const ad::Tensor& image);
// Returns [1,H,W] with values sample / maxval in [0,1].
ad::Tensor decode_pgm(const std::string& bytes);

void write_pgm(const ad::Tensor& image, const std::filesystem::path& path);
ad::Tensor read_pgm(const std::filesystem::path& path);

}  // namespace osn::pipeline
