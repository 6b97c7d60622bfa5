#pragma once

#include <string>

#include "mvss/tensor.hpp"

namespace mvss::img {

// Binary NetPBM I/O, 8-bit, maxval 255. Values are stored as
// round(v * 255) clamped to [0, 255], so a write/read round trip is exact
// for 0/1 masks and within 1/255 for arbitrary maps. Readers throw
// ParseError with the byte offset of the problem; nothing partial is
// returned.

void write_ppm(const std::string& path, const Tensor& image);  // (1,3,H,W)
Tensor read_ppm(const std::string& path);                      // values in [0,1]

void write_pgm(const std::string& path, const Tensor& map);    // (1,1,H,W)
Tensor read_pgm(const std::string& path);

}  // namespace mvss::img
