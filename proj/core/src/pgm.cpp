#include "chronokit/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace chronokit {

void write_pgm(const std::string& path, const Tensor& image) {
  check_shape(image.rank() == 2, "PGM output expects [H,W]");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << "P5\n" << image.extent(1) << " " << image.extent(0) << "\n255\n";
  for (std::size_t i = 0; i < image.numel(); ++i) {
    const double v = std::clamp(image[i], 0.0, 1.0);
    os.put(static_cast<char>(
        static_cast<unsigned char>(std::lround(v * 255.0))));
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

Tensor read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::string magic;
  is >> magic;
  if (magic != "P5") throw std::runtime_error(path + " is not a binary PGM");
  std::size_t w = 0, h = 0, maxval = 0;
  is >> w >> h >> maxval;
  if (maxval != 255) throw std::runtime_error("only 8-bit PGM supported");
  is.get();  // single whitespace after the header
  Tensor img({h, w});
  for (std::size_t i = 0; i < img.numel(); ++i) {
    const int c = is.get();
    if (c < 0) throw std::runtime_error("truncated PGM payload in " + path);
    img[i] = static_cast<double>(c) / 255.0;
  }
  return img;
}

}  // namespace chronokit
