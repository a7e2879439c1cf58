#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "rediffuse/tensor.hpp"

namespace rediffuse {

// Parse/IO failure for PGM files; byte_offset locates the problem in the
// input stream (0-based), and the message repeats it.
struct PgmError : std::runtime_error {
  size_t byte_offset;
  PgmError(const std::string& what, size_t offset) : std::runtime_error(what), byte_offset(offset) {}
};

// Reads a binary ("P5") PGM with maxval 255 or 65535 (16-bit samples are
// big-endian per the format). Returns a (H, W, 1) image with values mapped to
// [0,1] by division by maxval. Header comments ("#...") are skipped.
Tensor<double> read_pgm(const std::string& path);

// Writes a binary PGM; values are clamped to [0,1] and quantized by rounding
// to maxval steps (maxval 255 or 65535). The file is written to a temporary
// sibling and renamed into place so readers never observe a partial file.
// Optional comments are embedded as '#'-prefixed header lines (they may not
// contain newlines); readers skip them.
void write_pgm(const std::string& path, const Tensor<double>& img, int maxval = 65535,
               const std::vector<std::string>& comments = {});

}  // namespace rediffuse
