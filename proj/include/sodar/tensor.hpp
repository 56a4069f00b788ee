#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace sodar {

using Shape = std::vector<int64_t>;

std::string shape_to_string(const Shape& shape);
int64_t shape_volume(const Shape& shape);

// Dense row-major array of doubles with an explicit shape. Images, feature
// maps and mask grids are all carried as [C, H, W] tensors.
class GridTensor {
 public:
  GridTensor() = default;
  explicit GridTensor(Shape shape, double fill = 0.0);
  GridTensor(Shape shape, std::vector<double> data);

  static GridTensor zeros_like(const GridTensor& other) { return GridTensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  int64_t dim(size_t axis) const;
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](size_t k) { return data_[k]; }
  double operator[](size_t k) const { return data_[k]; }

  // Element access for rank-3 tensors.
  double& at(int64_t c, int64_t y, int64_t x) {
    return data_[static_cast<size_t>((c * shape_[1] + y) * shape_[2] + x)];
  }
  double at(int64_t c, int64_t y, int64_t x) const {
    return data_[static_cast<size_t>((c * shape_[1] + y) * shape_[2] + x)];
  }

  // Contiguous plane `c` of a tensor whose leading axis is a channel axis.
  std::span<double> plane(int64_t c);
  std::span<const double> plane(int64_t c) const;
  int64_t plane_size() const;

  GridTensor reshaped(Shape shape) const;
  void fill(double v);
  void add_(const GridTensor& other);
  void scale_(double s);
  bool all_finite() const;
  double max_abs() const;

  friend bool operator==(const GridTensor& a, const GridTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// GTF1 on-disk format: "GTF1", u32 rank, rank x u32 extents, f32 payload,
// all little-endian.
void write_gtf(const std::filesystem::path& path, const GridTensor& t);
GridTensor read_gtf(const std::filesystem::path& path);
std::vector<uint8_t> encode_gtf(const GridTensor& t);
GridTensor decode_gtf(std::span<const uint8_t> bytes);

}  // namespace sodar
