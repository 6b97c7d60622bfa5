#include "mvss/image_io.hpp"

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <vector>

#include "mvss/error.hpp"

namespace mvss::img {

namespace {

std::uint8_t quantize(double v) {
  const double scaled = std::round(v * 255.0);
  if (scaled <= 0.0) return 0;
  if (scaled >= 255.0) return 255;
  return static_cast<std::uint8_t>(scaled);
}

void write_netpbm(const std::string& path, const Tensor& t, int channels,
                  const char* magic) {
  const Shape s = t.shape();
  if (s.n != 1 || s.c != channels) {
    throw DimensionError(std::string("expected a (1,") +
                         std::to_string(channels) + ",H,W) tensor, got " +
                         s.str());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << magic << "\n" << s.w << " " << s.h << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(s.w) * channels);
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      for (int c = 0; c < channels; ++c) {
        row[static_cast<std::size_t>(x) * channels + c] =
            quantize(t.at(0, c, y, x));
      }
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  out.flush();
  if (!out) throw IoError("write failed for '" + path + "'");
}

class PnmReader {
 public:
  explicit PnmReader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    buf_.assign(std::istreambuf_iterator<char>(in),
                std::istreambuf_iterator<char>());
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("'" + path_ + "': " + what + " at byte offset " +
                     std::to_string(pos_));
  }

  // whitespace and '#' comments separate header tokens
  void skip_separators() {
    while (pos_ < buf_.size()) {
      const char c = buf_[pos_];
      if (c == '#') {
        while (pos_ < buf_.size() && buf_[pos_] != '\n') ++pos_;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::string token() {
    skip_separators();
    if (pos_ >= buf_.size()) fail("unexpected end of header");
    std::size_t start = pos_;
    while (pos_ < buf_.size() && !std::isspace(static_cast<unsigned char>(
                                     buf_[pos_])) &&
           buf_[pos_] != '#') {
      ++pos_;
    }
    return std::string(buf_.data() + start, pos_ - start);
  }

  int int_token(int lo, int hi) {
    const std::size_t at = pos_;
    const std::string t = token();
    long long v = 0;
    bool any = false;
    for (char c : t) {
      if (c < '0' || c > '9') {
        pos_ = at;
        fail("expected an integer, got '" + t + "'");
      }
      v = v * 10 + (c - '0');
      any = true;
      if (v > hi) break;
    }
    if (!any || v < lo || v > hi) {
      pos_ = at;
      fail("integer '" + t + "' outside [" + std::to_string(lo) + ", " +
           std::to_string(hi) + "]");
    }
    return static_cast<int>(v);
  }

  // exactly one whitespace byte separates the maxval from the raster
  void raster_separator() {
    if (pos_ >= buf_.size() ||
        !std::isspace(static_cast<unsigned char>(buf_[pos_]))) {
      fail("missing separator before raster");
    }
    ++pos_;
  }

  const std::uint8_t* raster(std::size_t n) {
    if (pos_ + n > buf_.size()) {
      pos_ = buf_.size();
      fail("raster truncated (need " + std::to_string(n) + " bytes)");
    }
    const auto* p = reinterpret_cast<const std::uint8_t*>(buf_.data() + pos_);
    pos_ += n;
    return p;
  }

  bool at_end() const { return pos_ == buf_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  std::string path_;
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

Tensor read_netpbm(const std::string& path, int channels, const char* magic) {
  PnmReader r(path);
  if (r.token() != magic) {
    throw ParseError("'" + path + "': not a " + std::string(magic) +
                     " file at byte offset 0");
  }
  const int w = r.int_token(1, 1 << 20);
  const int h = r.int_token(1, 1 << 20);
  const int maxval = r.int_token(1, 65535);
  if (maxval != 255) {
    throw ParseError("'" + path + "': unsupported maxval " +
                     std::to_string(maxval) + " (only 255)");
  }
  r.raster_separator();
  const std::size_t count =
      static_cast<std::size_t>(w) * h * static_cast<std::size_t>(channels);
  const std::uint8_t* bytes = r.raster(count);
  if (!r.at_end()) {
    throw ParseError("'" + path + "': trailing bytes at offset " +
                     std::to_string(r.pos()));
  }
  Tensor t = Tensor::zeros({1, channels, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        const std::uint8_t b =
            bytes[(static_cast<std::size_t>(y) * w + x) * channels + c];
        t.at(0, c, y, x) = static_cast<double>(b) / 255.0;
      }
    }
  }
  return t;
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& image) {
  write_netpbm(path, image, 3, "P6");
}

Tensor read_ppm(const std::string& path) { return read_netpbm(path, 3, "P6"); }

void write_pgm(const std::string& path, const Tensor& map) {
  write_netpbm(path, map, 1, "P5");
}

Tensor read_pgm(const std::string& path) { return read_netpbm(path, 1, "P5"); }

}  // namespace mvss::img
