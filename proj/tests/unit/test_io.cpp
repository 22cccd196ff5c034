#include <cstring>
#include <filesystem>

#include "doctest.h"
#include "duodepth/core/rng.hpp"
#include "duodepth/data/pfm.hpp"
#include "duodepth/data/ppm.hpp"

using namespace duodepth;
namespace fs = std::filesystem;

TEST_CASE("pfm round trip is bitwise") {
  Rng rng(7);
  Grid<float> f(13, 9, 1);
  for (std::int64_t i = 0; i < f.size(); ++i) f.v[i] = float(rng.normal() * 10.0);
  const std::string tmp = (fs::temp_directory_path() / "dd_pfm_rt.pfm").string();
  data::write_pfm(tmp, f);
  const Grid<float> g = data::read_pfm(tmp);
  REQUIRE(g.h == f.h);
  REQUIRE(g.w == f.w);
  CHECK(std::memcmp(g.v.data(), f.v.data(), std::size_t(f.size()) * 4) == 0);
  fs::remove(tmp);
}

TEST_CASE("pfm writer matches hand-assembled bytes") {
  // 2x2 field; rows are written bottom-to-top
  Grid<float> f(2, 2, 1);
  f.at(0, 0) = 1.0f;
  f.at(0, 1) = 2.0f;
  f.at(1, 0) = 3.0f;
  f.at(1, 1) = 4.0f;
  std::string expect = "Pf\n2 2\n-1.0\n";
  const float payload[4] = {3.0f, 4.0f, 1.0f, 2.0f};
  expect.append(reinterpret_cast<const char*>(payload), 16);
  CHECK(data::encode_pfm(f) == expect);
}

TEST_CASE("pfm big-endian file reads correctly") {
  std::string bytes = "Pf\n2 1\n1.0\n";
  auto push_be = [&](float v) {
    unsigned char b[4];
    std::memcpy(b, &v, 4);
    bytes.push_back(char(b[3]));
    bytes.push_back(char(b[2]));
    bytes.push_back(char(b[1]));
    bytes.push_back(char(b[0]));
  };
  push_be(-5.25f);
  push_be(100.5f);
  const Grid<float> g = data::decode_pfm(bytes);
  CHECK(g.at(0, 0) == -5.25f);
  CHECK(g.at(0, 1) == 100.5f);
}

TEST_CASE("pfm parse errors carry byte offsets") {
  CHECK_THROWS_AS(data::decode_pfm("PF\n2 2\n-1.0\n"), ParseError);
  std::string truncated = "Pf\n4 4\n-1.0\nxx";
  CHECK_THROWS_AS(data::decode_pfm(truncated), ParseError);
  try {
    data::decode_pfm(truncated);
  } catch (const ParseError& e) {
    CHECK(e.byte_offset == truncated.size());
  }
}

TEST_CASE("ppm round trip") {
  Rng rng(3);
  data::Image8 img(5, 7);
  for (auto& b : img.rgb) b = std::uint8_t(rng.bits() & 0xff);
  const std::string tmp = (fs::temp_directory_path() / "dd_ppm_rt.ppm").string();
  data::write_ppm(tmp, img);
  const data::Image8 back = data::read_ppm(tmp);
  REQUIRE(back.h == img.h);
  REQUIRE(back.w == img.w);
  CHECK(back.rgb == img.rgb);
  fs::remove(tmp);
}
