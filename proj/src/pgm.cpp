#include "rediffuse/pgm.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace rediffuse {

namespace {

// Incremental header scanner that tracks the byte offset for diagnostics.
struct ByteReader {
  const std::vector<unsigned char>& bytes;
  size_t pos = 0;

  explicit ByteReader(const std::vector<unsigned char>& b) : bytes(b) {}

  [[noreturn]] void fail(const std::string& what) const {
    std::ostringstream msg;
    msg << what << " (byte offset " << pos << ")";
    throw PgmError(msg.str(), pos);
  }

  bool eof() const { return pos >= bytes.size(); }
  unsigned char peek() const { return bytes[pos]; }

  // Skips whitespace and "#..." comment lines between header tokens.
  void skip_separators() {
    while (!eof()) {
      const unsigned char c = peek();
      if (c == '#') {
        while (!eof() && peek() != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos;
      } else {
        return;
      }
    }
  }

  long read_int(const char* name) {
    skip_separators();
    if (eof()) fail(std::string("unexpected end of file reading ") + name);
    if (peek() < '0' || peek() > '9') fail(std::string("expected digit for ") + name);
    long v = 0;
    while (!eof() && peek() >= '0' && peek() <= '9') {
      v = v * 10 + (peek() - '0');
      if (v > 1000000000L) fail(std::string("implausibly large value for ") + name);
      ++pos;
    }
    return v;
  }
};

}  // namespace

Tensor<double> read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PgmError("cannot open '" + path + "' (byte offset 0)", 0);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  ByteReader r(bytes);

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    r.fail("not a binary PGM: expected magic 'P5'");
  r.pos = 2;

  const long w = r.read_int("width");
  const long h = r.read_int("height");
  const long maxval = r.read_int("maxval");
  if (w <= 0 || h <= 0) r.fail("non-positive image dimensions");
  if (maxval != 255 && maxval != 65535) r.fail("unsupported maxval (expected 255 or 65535)");

  // exactly one whitespace byte separates the header from the payload
  if (r.eof()) r.fail("unexpected end of file before pixel data");
  const unsigned char sep = r.peek();
  if (sep != ' ' && sep != '\t' && sep != '\r' && sep != '\n')
    r.fail("expected single whitespace before pixel data");
  ++r.pos;

  const size_t npix = static_cast<size_t>(w) * static_cast<size_t>(h);
  const size_t need = npix * (maxval == 255 ? 1 : 2);
  if (bytes.size() - r.pos < need) {
    const size_t have = bytes.size() - r.pos;
    r.pos = bytes.size();
    std::ostringstream msg;
    msg << "truncated pixel data: need " << need << " bytes, have " << have;
    r.fail(msg.str());
  }

  Tensor<double> img({static_cast<int>(h), static_cast<int>(w), 1});
  const double scale = 1.0 / static_cast<double>(maxval);
  size_t p = r.pos;
  if (maxval == 255) {
    for (size_t i = 0; i < npix; ++i) img.data[i] = bytes[p + i] * scale;
  } else {
    for (size_t i = 0; i < npix; ++i) {
      const unsigned v = (static_cast<unsigned>(bytes[p + 2 * i]) << 8) | bytes[p + 2 * i + 1];
      img.data[i] = v * scale;
    }
  }
  return img;
}

void write_pgm(const std::string& path, const Tensor<double>& img, int maxval,
               const std::vector<std::string>& comments) {
  if (img.ndim != 3 || img.dims[2] != 1)
    throw PgmError("write_pgm expects a (H, W, 1) image (byte offset 0)", 0);
  if (maxval != 255 && maxval != 65535)
    throw PgmError("write_pgm: maxval must be 255 or 65535 (byte offset 0)", 0);

  const int h = img.dims[0], w = img.dims[1];
  for (const auto& cmt : comments)
    if (cmt.find('\n') != std::string::npos)
      throw PgmError("write_pgm: comment may not contain a newline (byte offset 0)", 0);
  std::ostringstream out;
  out << "P5\n";
  for (const auto& cmt : comments) out << "# " << cmt << "\n";
  out << w << " " << h << "\n" << maxval << "\n";
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double v = img(i, j, 0);
      v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
      const long q = std::lround(v * maxval);
      if (maxval == 255) {
        out.put(static_cast<char>(q));
      } else {
        out.put(static_cast<char>((q >> 8) & 0xff));
        out.put(static_cast<char>(q & 0xff));
      }
    }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw PgmError("cannot open '" + tmp + "' for writing (byte offset 0)", 0);
    const std::string s = out.str();
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
    if (!f) throw PgmError("short write to '" + tmp + "' (byte offset 0)", 0);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw PgmError("cannot rename '" + tmp + "' to '" + path + "' (byte offset 0)", 0);
}

}  // namespace rediffuse
