#include "duodepth/data/pfm.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace duodepth::data {
namespace {

constexpr bool host_little_endian() { return std::endian::native == std::endian::little; }

float byteswap_float(float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  u = ((u & 0xff000000u) >> 24) | ((u & 0x00ff0000u) >> 8) | ((u & 0x0000ff00u) << 8) |
      ((u & 0x000000ffu) << 24);
  std::memcpy(&f, &u, 4);
  return f;
}

// Reads one whitespace-terminated token starting at `pos`; advances past the
// single terminating whitespace byte.
std::string next_token(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size() && (bytes[pos] == ' ' || bytes[pos] == '\n' || bytes[pos] == '\r' ||
                                bytes[pos] == '\t'))
    ++pos;
  const std::size_t start = pos;
  while (pos < bytes.size() && !(bytes[pos] == ' ' || bytes[pos] == '\n' || bytes[pos] == '\r' ||
                                 bytes[pos] == '\t'))
    ++pos;
  if (start == pos) throw ParseError("pfm: truncated header", start);
  std::string tok = bytes.substr(start, pos - start);
  if (pos < bytes.size()) ++pos;  // consume one terminator
  return tok;
}

}  // namespace

std::string encode_pfm(const Grid<float>& field) {
  if (field.c != 1) throw ContractViolation("pfm: single-channel fields only");
  std::ostringstream os;
  os << "Pf\n" << field.w << " " << field.h << "\n" << (host_little_endian() ? "-1.0" : "1.0")
     << "\n";
  std::string out = os.str();
  out.reserve(out.size() + std::size_t(field.size()) * 4);
  // bottom row first
  for (int y = field.h - 1; y >= 0; --y) {
    const char* row = reinterpret_cast<const char*>(field.v.data() + std::int64_t(y) * field.w);
    out.append(row, std::size_t(field.w) * 4);
  }
  return out;
}

Grid<float> decode_pfm(const std::string& bytes) {
  std::size_t pos = 0;
  const std::string magic = next_token(bytes, pos);
  if (magic != "Pf") throw ParseError("pfm: bad magic '" + magic + "'", 0);
  std::size_t tok_at = pos;
  int w = 0, h = 0;
  double scale = 0.0;
  try {
    w = std::stoi(next_token(bytes, pos));
    tok_at = pos;
    h = std::stoi(next_token(bytes, pos));
    tok_at = pos;
    scale = std::stod(next_token(bytes, pos));
  } catch (const std::exception&) {
    throw ParseError("pfm: malformed dims/scale", tok_at);
  }
  if (w <= 0 || h <= 0) throw ParseError("pfm: non-positive dims", tok_at);
  if (scale == 0.0) throw ParseError("pfm: zero scale", tok_at);

  const std::size_t need = std::size_t(w) * std::size_t(h) * 4;
  if (bytes.size() - pos < need)
    throw ParseError("pfm: truncated payload, need " + std::to_string(need) + " bytes",
                     bytes.size());

  const bool file_little = scale < 0.0;
  Grid<float> field(h, w, 1);
  for (int y = h - 1; y >= 0; --y) {
    std::memcpy(field.v.data() + std::int64_t(y) * w, bytes.data() + pos, std::size_t(w) * 4);
    pos += std::size_t(w) * 4;
  }
  if (file_little != host_little_endian())
    for (std::int64_t i = 0; i < field.size(); ++i) field.v[i] = byteswap_float(field.v[i]);
  return field;
}

void write_pfm(const std::string& path, const Grid<float>& field) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("pfm: cannot open for write: " + path);
  const std::string bytes = encode_pfm(field);
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw IoError("pfm: write failed: " + path);
}

Grid<float> read_pfm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("pfm: cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_pfm(ss.str());
}

}  // namespace duodepth::data
