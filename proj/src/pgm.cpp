#include "mancount/pgm.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

namespace mancount {

namespace {

class PgmReader {
 public:
  PgmReader(const std::string& path, std::ifstream& in) : path_(path), in_(in) {}

  [[noreturn]] void fail(const std::string& what) {
    throw ParseError(path_ + ": offset " + std::to_string(offset_) + ": " + what);
  }

  int get() {
    const int c = in_.get();
    if (c != EOF) ++offset_;
    return c;
  }

  // skips whitespace and '#' comment lines between header tokens
  void skip_space() {
    for (;;) {
      int c = in_.peek();
      if (c == '#') {
        while (c != EOF && c != '\n') c = get();
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        get();
      } else {
        return;
      }
    }
  }

  long read_number(const char* what) {
    skip_space();
    int c = in_.peek();
    if (c == EOF || c < '0' || c > '9') {
      fail(std::string("expected ") + what);
    }
    long v = 0;
    while (c >= '0' && c <= '9') {
      v = v * 10 + (c - '0');
      if (v > 1 << 20) fail(std::string(what) + " out of range");
      get();
      c = in_.peek();
    }
    return v;
  }

  std::size_t offset() const { return offset_; }

 private:
  const std::string& path_;
  std::ifstream& in_;
  std::size_t offset_ = 0;
};

}  // namespace

Tensor read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": offset 0: cannot open file");
  PgmReader r(path, in);
  if (r.get() != 'P' || r.get() != '5') r.fail("bad magic, expected P5");
  const long w = r.read_number("width");
  const long h = r.read_number("height");
  const long maxval = r.read_number("maxval");
  if (w <= 0 || h <= 0) r.fail("non-positive image extents");
  if (maxval != 255) r.fail("maxval must be 255, got " + std::to_string(maxval));
  // single whitespace byte separates the header from the raster
  const int sep = r.get();
  if (sep != ' ' && sep != '\t' && sep != '\r' && sep != '\n') {
    r.fail("expected whitespace before raster");
  }
  Tensor img({static_cast<int>(h), static_cast<int>(w)});
  std::vector<char> raster(static_cast<std::size_t>(w) * h);
  in.read(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (static_cast<std::size_t>(in.gcount()) != raster.size()) {
    throw ParseError(path + ": offset " +
                     std::to_string(r.offset() + static_cast<std::size_t>(in.gcount())) +
                     ": truncated raster, expected " + std::to_string(raster.size()) +
                     " bytes");
  }
  for (std::size_t i = 0; i < raster.size(); ++i) {
    img[i] = static_cast<unsigned char>(raster[i]) / 255.0;
  }
  return img;
}

void write_pgm(const std::string& path, const Tensor& image) {
  if (image.rank() != 2) {
    throw DimensionError("write_pgm: expected a 2D image, got " +
                         shape_str(image.shape()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  const int h = image.extent(0), w = image.extent(1);
  out << "P5\n" << w << " " << h << "\n255\n";
  std::vector<char> raster(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    double v = std::lround(std::min(1.0, std::max(0.0, image[i])) * 255.0);
    raster[i] = static_cast<char>(static_cast<unsigned char>(v));
  }
  out.write(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace mancount
