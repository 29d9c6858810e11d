#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "osn/common.hpp"
#include "osn/tensor.hpp"

namespace osn::pipeline {

// File layout:
//   osn-archive <version>\n
//   attr <key> <value>\n               (zero or more, value runs to end of line)
//   tensor <name> <f32|f64> <offset> <ndim> <d0> ... <dn-1>\n
//   payload <bytes>\n
//   <payload: little-endian elements, tensors concatenated in manifest order>
// Offsets are relative to the first payload byte.
inline constexpr int kArchiveVersion = 1;

struct ArchiveEntry {
  std::string name;
  Precision precision = Precision::f64;
  ad::Shape shape;
  std::vector<double> values;
};

struct Archive {
  std::map<std::string, std::string> attrs;
  std::vector<ArchiveEntry> entries;

  void add(std::string name, const ad::Tensor& t, Precision p = Precision::f64);
  const ArchiveEntry& get(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::string& attr(const std::string& key) const;
};

class ArchiveError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class ArchiveCorrupt : public ArchiveError {
  using ArchiveError::ArchiveError;
};
class ArchiveOffsetMismatch : public ArchiveError {
  using ArchiveError::ArchiveError;
};
class ArchiveVersionMismatch : public ArchiveError {
  using ArchiveError::ArchiveError;
};

std::string encode_archive(const Archive& a);
Archive decode_archive(const std::string& bytes);

void save_archive(const Archive& a, const std::filesystem::path& path);
Archive load_archive(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace osn::pipeline
