#include "sodar/mask.hpp"

#include <sstream>
#include <stdexcept>

namespace sodar {

int64_t BinaryMask::area() const {
  int64_t n = 0;
  for (uint8_t p : pixels) n += p;
  return n;
}

BinaryMask BinaryMask::threshold(std::span<const double> values, int64_t h, int64_t w, double threshold) {
  if (static_cast<int64_t>(values.size()) != h * w) throw std::invalid_argument("threshold: size mismatch");
  BinaryMask m(h, w);
  for (size_t k = 0; k < values.size(); ++k) m.pixels[k] = values[k] > threshold ? 1 : 0;
  return m;
}

GridTensor BinaryMask::to_tensor() const {
  GridTensor t({height, width});
  for (size_t k = 0; k < pixels.size(); ++k) t[k] = pixels[k];
  return t;
}

double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument("mask_iou: shapes " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                                " and " + std::to_string(b.height) + "x" + std::to_string(b.width) + " differ");
  }
  int64_t inter = 0, uni = 0;
  for (size_t k = 0; k < a.pixels.size(); ++k) {
    inter += a.pixels[k] & b.pixels[k];
    uni += a.pixels[k] | b.pixels[k];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<int64_t> rle_encode(const BinaryMask& mask) {
  std::vector<int64_t> counts;
  uint8_t current = 0;
  int64_t run = 0;
  for (uint8_t p : mask.pixels) {
    if (p != current) {
      counts.push_back(run);
      run = 0;
      current = p;
    }
    ++run;
  }
  counts.push_back(run);
  return counts;
}

BinaryMask rle_decode(std::span<const int64_t> counts, int64_t height, int64_t width) {
  BinaryMask m(height, width);
  size_t pos = 0;
  uint8_t value = 0;
  for (int64_t c : counts) {
    if (c < 0 || pos + static_cast<size_t>(c) > m.pixels.size()) throw std::runtime_error("RLE overruns the mask");
    std::fill_n(m.pixels.begin() + static_cast<std::ptrdiff_t>(pos), c, value);
    pos += static_cast<size_t>(c);
    value ^= 1;
  }
  if (pos != m.pixels.size()) throw std::runtime_error("RLE covers " + std::to_string(pos) + " of " +
                                                       std::to_string(m.pixels.size()) + " pixels");
  return m;
}

std::string rle_to_string(const BinaryMask& mask) {
  std::ostringstream os;
  const auto counts = rle_encode(mask);
  for (size_t k = 0; k < counts.size(); ++k) os << (k ? " " : "") << counts[k];
  return os.str();
}

BinaryMask rle_from_string(const std::string& text, int64_t height, int64_t width) {
  std::istringstream is(text);
  std::vector<int64_t> counts;
  int64_t c;
  while (is >> c) counts.push_back(c);
  return rle_decode(counts, height, width);
}

}  // namespace sodar
