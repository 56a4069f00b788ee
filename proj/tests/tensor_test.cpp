#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "sodar/tensor.hpp"
#include "test_util.hpp"

using namespace sodar;

TEST_SUITE("tensor") {
  TEST_CASE("rank-3 indexing is row-major") {
    GridTensor t({2, 3, 4});
    for (size_t k = 0; k < t.size(); ++k) t[k] = static_cast<double>(k);
    CHECK(t.at(1, 2, 3) == 23.0);
    CHECK(t.at(0, 1, 0) == 4.0);
    CHECK(t.plane(1)[0] == 12.0);
    CHECK(t.plane_size() == 12);
  }

  TEST_CASE("shape and data length must agree") {
    CHECK_THROWS_AS(GridTensor({2, 2}, std::vector<double>(3)), std::invalid_argument);
    CHECK_THROWS_AS(GridTensor({2, 3}).reshaped({4, 2}), std::invalid_argument);
    CHECK_THROWS_AS(GridTensor({2, -1}), std::invalid_argument);
  }

  TEST_CASE("add_ rejects shape mismatch") {
    GridTensor a({2, 2}), b({4});
    CHECK_THROWS_AS(a.add_(b), std::invalid_argument);
  }

  TEST_CASE("all_finite flags NaN and Inf") {
    GridTensor t({3}, 1.0);
    CHECK(t.all_finite());
    t[1] = std::nan("");
    CHECK_FALSE(t.all_finite());
    t[1] = INFINITY;
    CHECK_FALSE(t.all_finite());
  }

  TEST_CASE("GTF header bytes") {
    GridTensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    const auto bytes = encode_gtf(t);
    REQUIRE(bytes.size() == 4 + 4 + 2 * 4 + 6 * 4);
    CHECK(std::memcmp(bytes.data(), "GTF1", 4) == 0);
    CHECK(bytes[4] == 2);
    CHECK(bytes[5] == 0);
    CHECK(bytes[8] == 2);
    CHECK(bytes[12] == 3);
    float first;
    std::memcpy(&first, bytes.data() + 16, 4);
    CHECK(first == 1.0f);
  }

  TEST_CASE("GTF round trip is exact for f32-representable values") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      Shape shape;
      const int rank = 1 + trial % 4;
      for (int r = 0; r < rank; ++r) shape.push_back(1 + (trial * 7 + r * 3) % 5);
      GridTensor t = testing::random_tensor(shape, rng);
      for (double& v : t.values()) v = static_cast<float>(v);
      CHECK(decode_gtf(encode_gtf(t)) == t);
    }
  }

  TEST_CASE("GTF rounds doubles to nearest f32") {
    GridTensor t({1}, std::vector<double>{0.1});
    CHECK(decode_gtf(encode_gtf(t))[0] == static_cast<double>(0.1f));
  }

  TEST_CASE("GTF decode rejects bad input") {
    GridTensor t({2, 2}, 1.0);
    auto bytes = encode_gtf(t);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_gtf(bad_magic), std::runtime_error);
    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS(decode_gtf(truncated), std::runtime_error);
    CHECK_THROWS_AS(decode_gtf(std::span<const uint8_t>(bytes.data(), 3)), std::runtime_error);
  }

  TEST_CASE("GTF file round trip") {
    const auto path = std::filesystem::temp_directory_path() / "sodar_tensor_test.gtf";
    GridTensor t({3, 2, 2}, 0.5);
    write_gtf(path, t);
    CHECK(read_gtf(path) == t);
    std::filesystem::remove(path);
    CHECK_THROWS(read_gtf(path));
  }
}
