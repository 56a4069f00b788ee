#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sodar/mask.hpp"
#include "sodar/tensor.hpp"

namespace sodar {

enum class ShapeKind : int { kDisk = 0, kRectangle = 1, kTriangle = 2 };
inline constexpr int kNumShapeClasses = 3;

struct Instance {
  int class_id = 0;
  int z_order = 0;   // larger is nearer the viewer
  BinaryMask mask;   // visible pixels after occlusion
};

struct Scene {
  uint64_t seed = 0;
  GridTensor image;  // [3, H, W], values roughly in [0, 1]
  std::vector<Instance> instances;

  int64_t height() const { return image.dim(1); }
  int64_t width() const { return image.dim(2); }
};

inline constexpr int64_t kMinVisiblePixels = 16;

// Deterministic in (seed, index). Object count per scene is uniform in
// [1, max_objects]; every visible mask keeps at least kMinVisiblePixels.
Scene generate_scene(uint64_t seed, int64_t index, int64_t height, int64_t width, int64_t max_objects);
std::vector<Scene> generate_scenes(uint64_t seed, int64_t count, int64_t height, int64_t width,
                                   int64_t max_objects);

// Directory layout: scene_NNNNN.gtf (image) + scene_NNNNN.masks sidecar with
// a "height width count seed" header followed by "class z_order rle..." lines.
void write_scene(const std::filesystem::path& dir, int64_t index, const Scene& scene);
Scene read_scene(const std::filesystem::path& dir, int64_t index);
void write_scenes(const std::filesystem::path& dir, const std::vector<Scene>& scenes);
std::vector<Scene> read_scenes(const std::filesystem::path& dir);

}  // namespace sodar
