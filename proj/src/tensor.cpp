#include "sodar/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

namespace sodar {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t k = 0; k < shape.size(); ++k) {
    if (k) os << ", ";
    os << shape[k];
  }
  os << ']';
  return os.str();
}

int64_t shape_volume(const Shape& shape) {
  int64_t n = 1;
  for (int64_t e : shape) {
    if (e <= 0) throw std::invalid_argument("non-positive extent in shape " + shape_to_string(shape));
    n *= e;
  }
  return n;
}

GridTensor::GridTensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(static_cast<size_t>(shape_volume(shape_)), fill) {}

GridTensor::GridTensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (static_cast<int64_t>(data_.size()) != shape_volume(shape_)) {
    throw std::invalid_argument("data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_to_string(shape_));
  }
}

int64_t GridTensor::dim(size_t axis) const {
  if (axis >= shape_.size()) {
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for shape " +
                            shape_to_string(shape_));
  }
  return shape_[axis];
}

int64_t GridTensor::plane_size() const {
  if (shape_.empty()) return 0;
  return static_cast<int64_t>(data_.size()) / shape_[0];
}

std::span<double> GridTensor::plane(int64_t c) {
  const int64_t n = plane_size();
  return std::span<double>(data_).subspan(static_cast<size_t>(c * n), static_cast<size_t>(n));
}

std::span<const double> GridTensor::plane(int64_t c) const {
  const int64_t n = plane_size();
  return std::span<const double>(data_).subspan(static_cast<size_t>(c * n), static_cast<size_t>(n));
}

GridTensor GridTensor::reshaped(Shape shape) const {
  if (shape_volume(shape) != static_cast<int64_t>(data_.size())) {
    throw std::invalid_argument("cannot reshape " + shape_to_string(shape_) + " to " +
                                shape_to_string(shape));
  }
  return GridTensor(std::move(shape), data_);
}

void GridTensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void GridTensor::add_(const GridTensor& other) {
  if (other.shape_ != shape_) {
    throw std::invalid_argument("add_: shape " + shape_to_string(other.shape_) + " vs " +
                                shape_to_string(shape_));
  }
  for (size_t k = 0; k < data_.size(); ++k) data_[k] += other.data_[k];
}

void GridTensor::scale_(double s) {
  for (double& v : data_) v *= s;
}

bool GridTensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double GridTensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

namespace {

constexpr char kMagic[4] = {'G', 'T', 'F', '1'};

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<uint8_t>(v >> (8 * k)));
}

uint32_t get_u32(std::span<const uint8_t> bytes, size_t& pos) {
  if (pos + 4 > bytes.size()) throw std::runtime_error("GTF: truncated header");
  uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<uint32_t>(bytes[pos + k]) << (8 * k);
  pos += 4;
  return v;
}

}  // namespace

std::vector<uint8_t> encode_gtf(const GridTensor& t) {
  std::vector<uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, static_cast<uint32_t>(t.rank()));
  for (int64_t e : t.shape()) put_u32(out, static_cast<uint32_t>(e));
  out.reserve(out.size() + 4 * t.size());
  for (double v : t.values()) put_u32(out, std::bit_cast<uint32_t>(static_cast<float>(v)));
  return out;
}

GridTensor decode_gtf(std::span<const uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw std::runtime_error("GTF: bad magic");
  }
  size_t pos = 4;
  const uint32_t rank = get_u32(bytes, pos);
  Shape shape(rank);
  for (auto& e : shape) e = get_u32(bytes, pos);
  const int64_t n = shape_volume(shape);
  if (bytes.size() - pos != static_cast<size_t>(n) * 4) {
    throw std::runtime_error("GTF: payload length does not match shape " + shape_to_string(shape));
  }
  std::vector<double> data(static_cast<size_t>(n));
  for (auto& v : data) v = std::bit_cast<float>(get_u32(bytes, pos));
  return GridTensor(std::move(shape), std::move(data));
}

void write_gtf(const std::filesystem::path& path, const GridTensor& t) {
  const auto bytes = encode_gtf(t);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

GridTensor read_gtf(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_gtf(bytes);
}

}  // namespace sodar
