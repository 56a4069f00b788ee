#include "sodar/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace sodar {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct Rgb {
  double r, g, b;
};

double color_distance(const Rgb& a, const Rgb& b) {
  return std::sqrt((a.r - b.r) * (a.r - b.r) + (a.g - b.g) * (a.g - b.g) + (a.b - b.b) * (a.b - b.b));
}

class SceneRng {
 public:
  explicit SceneRng(uint64_t seed) : engine_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  int64_t integer(int64_t lo, int64_t hi) { return std::uniform_int_distribution<int64_t>(lo, hi)(engine_); }
  double normal(double sigma) { return std::normal_distribution<double>(0.0, sigma)(engine_); }
  Rgb color() { return {uniform(0, 1), uniform(0, 1), uniform(0, 1)}; }

 private:
  std::mt19937_64 engine_;
};

BinaryMask rasterize(ShapeKind kind, SceneRng& rng, int64_t h, int64_t w) {
  BinaryMask m(h, w);
  const double cy = rng.uniform(6.0, static_cast<double>(h) - 6.0);
  const double cx = rng.uniform(6.0, static_cast<double>(w) - 6.0);
  const double scale = std::min(h, w) / 64.0;
  switch (kind) {
    case ShapeKind::kDisk: {
      const double r = rng.uniform(5.0, 12.0) * scale;
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
          const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
          m.at(y, x) = dy * dy + dx * dx <= r * r;
        }
      break;
    }
    case ShapeKind::kRectangle: {
      const double hh = rng.uniform(4.0, 12.0) * scale, hw = rng.uniform(4.0, 12.0) * scale;
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) m.at(y, x) = std::abs(y + 0.5 - cy) <= hh && std::abs(x + 0.5 - cx) <= hw;
      break;
    }
    case ShapeKind::kTriangle: {
      const double r = rng.uniform(7.0, 15.0) * scale;
      const double rot = rng.uniform(0.0, 2.0 * std::numbers::pi);
      double vy[3], vx[3];
      for (int k = 0; k < 3; ++k) {
        const double a = rot + k * 2.0 * std::numbers::pi / 3.0;
        vy[k] = cy + r * std::sin(a);
        vx[k] = cx + r * std::cos(a);
      }
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
          const double py = y + 0.5, px = x + 0.5;
          bool pos = false, neg = false;
          for (int k = 0; k < 3; ++k) {
            const int n = (k + 1) % 3;
            const double cross = (vx[n] - vx[k]) * (py - vy[k]) - (vy[n] - vy[k]) * (px - vx[k]);
            pos |= cross > 0;
            neg |= cross < 0;
          }
          m.at(y, x) = !(pos && neg);
        }
      break;
    }
  }
  return m;
}

}  // namespace

Scene generate_scene(uint64_t seed, int64_t index, int64_t height, int64_t width, int64_t max_objects) {
  if (height < 16 || width < 16) throw std::invalid_argument("scenes must be at least 16x16");
  if (max_objects < 1) throw std::invalid_argument("max_objects must be >= 1");
  Scene scene;
  scene.seed = splitmix64(seed ^ splitmix64(static_cast<uint64_t>(index)));
  SceneRng rng(scene.seed);
  const int64_t count = rng.integer(1, max_objects);
  const Rgb background = rng.color();

  struct Placed {
    int class_id;
    Rgb color;
    BinaryMask visible;
  };
  std::vector<Placed> placed;
  for (int64_t attempt = 0; static_cast<int64_t>(placed.size()) < count; ++attempt) {
    if (attempt > 10000) throw std::runtime_error("scene generation could not place all objects");
    const auto kind = static_cast<ShapeKind>(rng.integer(0, kNumShapeClasses - 1));
    BinaryMask mask = rasterize(kind, rng, height, width);
    Rgb color = rng.color();
    if (color_distance(color, background) < 0.4) continue;
    if (mask.area() < kMinVisiblePixels) continue;
    bool ok = true;
    for (const auto& p : placed) {
      int64_t remaining = 0;
      for (size_t k = 0; k < mask.pixels.size(); ++k) remaining += p.visible.pixels[k] & !mask.pixels[k];
      if (remaining < kMinVisiblePixels) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    for (auto& p : placed)
      for (size_t k = 0; k < mask.pixels.size(); ++k) p.visible.pixels[k] &= !mask.pixels[k];
    placed.push_back({static_cast<int>(kind), color, std::move(mask)});
  }

  scene.image = GridTensor({3, height, width});
  for (int64_t y = 0; y < height; ++y)
    for (int64_t x = 0; x < width; ++x) {
      Rgb c = background;
      for (const auto& p : placed)
        if (p.visible.at(y, x)) c = p.color;
      scene.image.at(0, y, x) = c.r + rng.normal(0.03);
      scene.image.at(1, y, x) = c.g + rng.normal(0.03);
      scene.image.at(2, y, x) = c.b + rng.normal(0.03);
    }
  for (size_t z = 0; z < placed.size(); ++z) {
    scene.instances.push_back({placed[z].class_id, static_cast<int>(z), std::move(placed[z].visible)});
  }
  return scene;
}

std::vector<Scene> generate_scenes(uint64_t seed, int64_t count, int64_t height, int64_t width,
                                   int64_t max_objects) {
  if (count < 1) throw std::invalid_argument("scene count must be >= 1");
  std::vector<Scene> scenes;
  scenes.reserve(static_cast<size_t>(count));
  for (int64_t k = 0; k < count; ++k) scenes.push_back(generate_scene(seed, k, height, width, max_objects));
  return scenes;
}

namespace {
std::string scene_stem(int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%05lld", static_cast<long long>(index));
  return buf;
}
}  // namespace

void write_scene(const std::filesystem::path& dir, int64_t index, const Scene& scene) {
  const std::string stem = scene_stem(index);
  write_gtf(dir / (stem + ".gtf"), scene.image);
  std::ofstream os(dir / (stem + ".masks"), std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + (dir / (stem + ".masks")).string());
  os << scene.height() << ' ' << scene.width() << ' ' << scene.instances.size() << ' ' << scene.seed << '\n';
  for (const auto& inst : scene.instances) {
    os << inst.class_id << ' ' << inst.z_order << ' ' << rle_to_string(inst.mask) << '\n';
  }
}

Scene read_scene(const std::filesystem::path& dir, int64_t index) {
  const std::string stem = scene_stem(index);
  Scene scene;
  scene.image = read_gtf(dir / (stem + ".gtf"));
  std::ifstream is(dir / (stem + ".masks"));
  if (!is) throw std::runtime_error("missing mask sidecar " + (dir / (stem + ".masks")).string());
  int64_t h = 0, w = 0;
  size_t n = 0;
  is >> h >> w >> n >> scene.seed;
  std::string line;
  std::getline(is, line);
  for (size_t k = 0; k < n; ++k) {
    if (!std::getline(is, line)) throw std::runtime_error("truncated mask sidecar for " + stem);
    std::istringstream ls(line);
    Instance inst;
    ls >> inst.class_id >> inst.z_order;
    std::string rest;
    std::getline(ls, rest);
    inst.mask = rle_from_string(rest, h, w);
    scene.instances.push_back(std::move(inst));
  }
  return scene;
}

void write_scenes(const std::filesystem::path& dir, const std::vector<Scene>& scenes) {
  std::filesystem::create_directories(dir);
  for (size_t k = 0; k < scenes.size(); ++k) write_scene(dir, static_cast<int64_t>(k), scenes[k]);
}

std::vector<Scene> read_scenes(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("dataset directory " + dir.string() + " not found");
  std::vector<Scene> scenes;
  for (int64_t k = 0; std::filesystem::exists(dir / (scene_stem(k) + ".gtf")); ++k) {
    scenes.push_back(read_scene(dir, k));
  }
  if (scenes.empty()) throw std::runtime_error("no scenes found in " + dir.string());
  return scenes;
}

}  // namespace sodar
