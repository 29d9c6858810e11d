#include "osn/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace osn::pipeline {

namespace {

bool valid_token(const std::string& s) {
  if (s.empty()) return false;
  for (unsigned char ch : s)
    if (ch <= ' ' || ch == 0x7f) return false;
  return true;
}

template <typename U>
void put_le(std::string& out, U bits) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const unsigned char* p) {
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(p[i]) << (8 * i);
  return bits;
}

std::size_t element_bytes(Precision p) { return p == Precision::f32 ? 4 : 8; }

}  // namespace

void Archive::add(std::string name, const ad::Tensor& t, Precision p) {
  require(valid_token(name), "archive: tensor name '" + name + "' must be non-empty without whitespace");
  require(!has(name), "archive: duplicate tensor name '" + name + "'");
  entries.push_back({std::move(name), p, t.shape(), t.vec()});
}

bool Archive::has(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return true;
  return false;
}

const ArchiveEntry& Archive::get(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw ContractViolation("archive: no tensor named '" + name + "'");
}

const std::string& Archive::attr(const std::string& key) const {
  const auto it = attrs.find(key);
  if (it == attrs.end()) throw ContractViolation("archive: missing attribute '" + key + "'");
  return it->second;
}

std::string encode_archive(const Archive& a) {
  std::set<std::string> seen;
  std::ostringstream head;
  head << "osn-archive " << kArchiveVersion << "\n";
  for (const auto& [k, v] : a.attrs) {
    require(valid_token(k), "archive: attribute key '" + k + "' must be non-empty without whitespace");
    require(v.find('\n') == std::string::npos, "archive: attribute value for '" + k + "' contains a newline");
    head << "attr " << k << " " << v << "\n";
  }
  std::string payload;
  for (const auto& e : a.entries) {
    require(valid_token(e.name), "archive: bad tensor name '" + e.name + "'");
    require(seen.insert(e.name).second, "archive: duplicate tensor name '" + e.name + "'");
    require(ad::numel_of(e.shape) == e.values.size(), "archive: '" + e.name + "' shape/value count mismatch");
    head << "tensor " << e.name << " " << to_string(e.precision) << " " << payload.size() << " " << e.shape.size();
    for (auto d : e.shape) head << " " << d;
    head << "\n";
    for (double v : e.values) {
      if (e.precision == Precision::f32)
        put_le(payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      else
        put_le(payload, std::bit_cast<std::uint64_t>(v));
    }
  }
  head << "payload " << payload.size() << "\n";
  return head.str() + payload;
}

Archive decode_archive(const std::string& bytes) {
  std::size_t pos = 0;
  std::size_t line_no = 0;
  auto next_line = [&]() -> std::string {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string::npos)
      throw ArchiveCorrupt("archive manifest: unterminated line " + std::to_string(line_no + 1));
    std::string line = bytes.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    return line;
  };
  auto bad = [&](const std::string& why) {
    return ArchiveCorrupt("archive manifest line " + std::to_string(line_no) + ": " + why);
  };

  {
    std::istringstream first(next_line());
    std::string magic;
    long version = -1;
    if (!(first >> magic) || magic != "osn-archive") throw bad("not an osn archive");
    if (!(first >> version)) throw bad("missing version");
    if (version != kArchiveVersion)
      throw ArchiveVersionMismatch("archive version " + std::to_string(version) + ", this build reads " +
                                   std::to_string(kArchiveVersion));
  }

  Archive a;
  struct Pending {
    std::size_t offset;
  };
  std::vector<Pending> offsets;
  std::size_t payload_size = 0;
  for (;;) {
    const std::string line = next_line();
    std::istringstream in(line);
    std::string kind;
    in >> kind;
    if (kind == "attr") {
      std::string key;
      if (!(in >> key)) throw bad("attribute without key");
      std::string value;
      if (in.peek() == ' ') in.get();
      std::getline(in, value);
      a.attrs[key] = value;
    } else if (kind == "tensor") {
      ArchiveEntry e;
      std::string prec;
      std::size_t offset = 0, ndim = 0;
      if (!(in >> e.name >> prec >> offset >> ndim)) throw bad("malformed tensor entry");
      try {
        e.precision = parse_precision(prec);
      } catch (const ContractViolation&) {
        throw bad("unknown precision '" + prec + "'");
      }
      if (ndim > 16) throw bad("too many dimensions");
      for (std::size_t i = 0; i < ndim; ++i) {
        std::size_t d = 0;
        if (!(in >> d) || d == 0) throw bad("bad extent");
        e.shape.push_back(d);
      }
      if (a.has(e.name)) throw bad("duplicate tensor '" + e.name + "'");
      a.entries.push_back(std::move(e));
      offsets.push_back({offset});
    } else if (kind == "payload") {
      if (!(in >> payload_size)) throw bad("malformed payload size");
      break;
    } else {
      throw bad("unknown record '" + kind + "'");
    }
  }

  std::size_t expect = 0;
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    if (offsets[i].offset != expect)
      throw ArchiveOffsetMismatch("archive: tensor '" + a.entries[i].name + "' at offset " +
                                  std::to_string(offsets[i].offset) + ", expected " + std::to_string(expect));
    expect += ad::numel_of(a.entries[i].shape) * element_bytes(a.entries[i].precision);
  }
  if (expect != payload_size)
    throw ArchiveOffsetMismatch("archive: manifest describes " + std::to_string(expect) +
                                " payload bytes, header says " + std::to_string(payload_size));
  if (bytes.size() - pos != payload_size)
    throw ArchiveOffsetMismatch("archive: payload has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                                std::to_string(payload_size));

  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
  for (auto& e : a.entries) {
    const std::size_t n = ad::numel_of(e.shape);
    e.values.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
      if (e.precision == Precision::f32) {
        e.values[j] = static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(p)));
        p += 4;
      } else {
        e.values[j] = std::bit_cast<double>(get_le<std::uint64_t>(p));
        p += 8;
      }
    }
  }
  return a;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void save_archive(const Archive& a, const std::filesystem::path& path) { write_file(path, encode_archive(a)); }

Archive load_archive(const std::filesystem::path& path) { return decode_archive(read_file(path)); }

}  // namespace osn::pipeline
