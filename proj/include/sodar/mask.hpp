#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sodar/tensor.hpp"

namespace sodar {

struct BinaryMask {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<uint8_t> pixels;  // row-major, 0 or 1

  BinaryMask() = default;
  BinaryMask(int64_t h, int64_t w) : height(h), width(w), pixels(static_cast<size_t>(h * w), 0) {}

  uint8_t& at(int64_t y, int64_t x) { return pixels[static_cast<size_t>(y * width + x)]; }
  uint8_t at(int64_t y, int64_t x) const { return pixels[static_cast<size_t>(y * width + x)]; }
  int64_t area() const;
  bool empty() const { return area() == 0; }

  // pixel = value > threshold
  static BinaryMask threshold(std::span<const double> values, int64_t h, int64_t w, double threshold);
  GridTensor to_tensor() const;  // [H, W] of 0.0 / 1.0

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

// |a & b| / |a | b|, 0 when both are empty.
double mask_iou(const BinaryMask& a, const BinaryMask& b);

// Row-major run lengths alternating 0-runs and 1-runs, starting with a
// (possibly empty) 0-run.
std::vector<int64_t> rle_encode(const BinaryMask& mask);
BinaryMask rle_decode(std::span<const int64_t> counts, int64_t height, int64_t width);
std::string rle_to_string(const BinaryMask& mask);
BinaryMask rle_from_string(const std::string& text, int64_t height, int64_t width);

}  // namespace sodar
