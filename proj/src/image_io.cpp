#include "preemptkit/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "preemptkit/fingerprint.hpp"

namespace pk {

std::uint8_t to_byte(float v) {
  const double clamped = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::floor(clamped * 255.0 + 0.5));
}

namespace {

std::vector<std::uint8_t> header(const char* magic, const Shape& s) {
  const std::string text = std::string(magic) + "\n" + std::to_string(s.width) + " " + std::to_string(s.height) + "\n255\n";
  return {text.begin(), text.end()};
}

}  // namespace

std::vector<std::uint8_t> encode_pgm(const Tensor& image) {
  const Shape s = image.shape();
  if (s.channels != 1) throw ShapeError("PGM needs a single-channel image, got " + s.str());
  auto out = header("P5", s);
  for (float v : image.data()) out.push_back(to_byte(v));
  return out;
}

std::vector<std::uint8_t> encode_ppm(const Tensor& image) {
  const Shape s = image.shape();
  if (s.channels != 3) throw ShapeError("PPM needs a 3-channel image, got " + s.str());
  auto out = header("P6", s);
  for (std::size_t h = 0; h < s.height; ++h) {
    for (std::size_t w = 0; w < s.width; ++w) {
      for (std::size_t c = 0; c < 3; ++c) out.push_back(to_byte(image.at(c, h, w)));
    }
  }
  return out;
}

void write_pnm(const std::filesystem::path& path, const Tensor& image) {
  write_file_atomic(path, image.shape().channels == 3 ? encode_ppm(image) : encode_pgm(image));
}

}  // namespace pk
