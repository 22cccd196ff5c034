#pragma once

#include <string>

#include "duodepth/core/grid.hpp"

namespace duodepth::data {

// Single-channel PFM ("Pf"): dims line "W H", scale line whose sign encodes
// endianness (negative = little), then float32 rows bottom-to-top.
void write_pfm(const std::string& path, const Grid<float>& field);
Grid<float> read_pfm(const std::string& path);

// In-memory codecs used by both the file functions and the tests.
std::string encode_pfm(const Grid<float>& field);
Grid<float> decode_pfm(const std::string& bytes);

}  // namespace duodepth::data
