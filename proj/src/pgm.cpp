#include "osn/pgm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "osn/archive.hpp"

namespace osn::pipeline {

std::string encode_pgm(const ad::Tensor& image) {
  const auto& s = image.shape();
  require(s.size() == 2 || (s.size() == 3 && s[0] == 1), "encode_pgm: expected [H,W] or [1,H,W], got " + ad::shape_str(s));
  require(ad::all_finite(image.values()), "encode_pgm: image has non-finite values");
  const std::size_t h = s[s.size() - 2], w = s[s.size() - 1];
  const auto v = image.values();
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double range = *hi - *lo;
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n65535\n";
  for (double x : v) {
    const auto q = range > 0.0 ? static_cast<unsigned>(std::lround((x - *lo) / range * 65535.0)) : 0u;
    out.push_back(static_cast<char>((q >> 8) & 0xff));
    out.push_back(static_cast<char>(q & 0xff));
  }
  return out;
}

ad::Tensor decode_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&]() {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      return;
    }
  };
  auto number = [&](const char* what) -> std::size_t {
    skip_space();
    const std::size_t start = pos;
    std::size_t n = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      n = n * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (n > (1u << 30)) throw PgmParseError(std::string("pgm: ") + what + " too large", start);
      ++pos;
    }
    if (pos == start) throw PgmParseError(std::string("pgm: expected ") + what, start);
    return n;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw PgmParseError("pgm: missing P5 magic", 0);
  pos = 2;
  const std::size_t w = number("width");
  const std::size_t h = number("height");
  const std::size_t maxval = number("maxval");
  if (w == 0 || h == 0) throw PgmParseError("pgm: zero image extent", pos);
  if (maxval == 0 || maxval > 65535) throw PgmParseError("pgm: maxval out of range", pos);
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw PgmParseError("pgm: expected whitespace after maxval", pos);
  ++pos;
  const std::size_t bps = maxval > 255 ? 2 : 1;
  const std::size_t need = w * h * bps;
  if (bytes.size() - pos != need)
    throw PgmParseError("pgm: expected " + std::to_string(need) + " sample bytes, found " +
                            std::to_string(bytes.size() - pos),
                        pos);
  std::vector<double> out(w * h);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + pos;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t q = bps == 2 ? (static_cast<std::size_t>(p[2 * i]) << 8) | p[2 * i + 1] : p[i];
    if (q > maxval) throw PgmParseError("pgm: sample exceeds maxval", pos + i * bps);
    out[i] = static_cast<double>(q) / static_cast<double>(maxval);
  }
  return ad::Tensor::constant({1, h, w}, std::move(out));
}

void write_pgm(const ad::Tensor& image, const std::filesystem::path& path) { write_file(path, encode_pgm(image)); }

ad::Tensor read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file(path)); }

}  // namespace osn::pipeline
