#include "sodar/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace sodar {

namespace {
constexpr int64_t kEnc1 = 8;
constexpr int64_t kEnc2 = 16;
constexpr int64_t kEnc3 = 16;
constexpr int64_t kTower = 16;
constexpr int64_t kClsWidth = 32;
constexpr double kClsPrior = 0.01;

std::string level_key(const char* stem, size_t level) { return std::string(stem) + "." + std::to_string(level); }
}  // namespace

std::string_view to_string(AggMode mode) {
  switch (mode) {
    case AggMode::kDynamic: return "dynamic";
    case AggMode::kStatic: return "static";
    case AggMode::kDirect: return "direct";
  }
  return "?";
}

AggMode parse_agg_mode(std::string_view text) {
  if (text == "dynamic" || text == "agg-D") return AggMode::kDynamic;
  if (text == "static" || text == "agg-S") return AggMode::kStatic;
  if (text == "direct" || text == "none") return AggMode::kDirect;
  throw std::invalid_argument("unknown aggregation mode '" + std::string(text) + "'");
}

int64_t ModelConfig::theta_dim() const {
  return agg_mode == AggMode::kDirect ? 0 : agg.architecture().param_count();
}

int64_t ModelConfig::offset_dim() const { return agg_mode == AggMode::kDirect ? 0 : agg.offset_count(); }

void ModelConfig::validate() const {
  grids.validate();
  if (num_classes < 1) throw std::invalid_argument("num_classes must be positive");
  if (center_region <= 0.0 || center_region > 1.0) throw std::invalid_argument("center_region must be in (0, 1]");
  if (agg_mode != AggMode::kDirect) agg.architecture().validate();
  if (agg_mode == AggMode::kStatic && agg.deformable) {
    throw std::invalid_argument("deformable sampling needs per-cell offsets (dynamic aggregation)");
  }
}

ParameterSet zeros_like(const ParameterSet& params) {
  ParameterSet z;
  for (const auto& [name, t] : params) z.emplace(name, GridTensor(t.shape()));
  return z;
}

int64_t parameter_count(const ParameterSet& params) {
  int64_t n = 0;
  for (const auto& [name, t] : params) n += static_cast<int64_t>(t.size());
  return n;
}

ParameterSet init_parameters(const ModelConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.init_seed);
  ParameterSet p;
  auto normal = [&](Shape shape, double stddev) {
    GridTensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.values()) v = dist(rng);
    return t;
  };
  auto conv = [&](const std::string& name, int64_t cout, int64_t cin, int64_t k, double gain) {
    p[name + ".w"] = normal({cout, cin, k, k}, gain * std::sqrt(1.0 / static_cast<double>(cin * k * k)));
    p[name + ".b"] = GridTensor({cout});
  };
  const double he = std::sqrt(2.0);
  conv("enc1", kEnc1, 3, 3, he);
  conv("enc2", kEnc2, kEnc1, 3, he);
  conv("enc3", kEnc3, kEnc2, 3, he);
  conv("ctx", config.agg.context_channels, kEnc3, 1, 1.0);
  conv("mask_tower", kTower, kEnc3 + 2, 3, he);
  for (size_t l = 0; l < config.grids.levels.size(); ++l) {
    const int64_t gm = config.grids.levels[l].mask_grid;
    conv(level_key("mask_out", l), gm * gm, kTower, 1, 1.0);
  }
  conv("cls_tower", kClsWidth, kEnc3, 3, he);
  conv("cls_tower2", kClsWidth, kClsWidth, 3, he);
  conv("cls_out", config.num_classes, kClsWidth, 3, 0.0);
  p["cls_out.w"] = normal({config.num_classes, kClsWidth, 3, 3}, 0.01);
  p["cls_out.b"].fill(-std::log((1.0 - kClsPrior) / kClsPrior));
  // Hidden aggregation layers get He weights, the output layer starts at zero.
  auto base_theta = [&] {
    const AggArchitecture arch = config.agg.architecture();
    const auto ch = arch.channels();
    std::vector<AggLayer> layers;
    for (size_t l = 0; l + 1 < ch.size(); ++l) {
      const double fan_in = static_cast<double>(ch[l] * arch.kernel * arch.kernel);
      const double stddev = l + 2 < ch.size() ? he / std::sqrt(fan_in) : 0.0;
      layers.push_back({normal({ch[l + 1], ch[l], arch.kernel, arch.kernel}, stddev), GridTensor({ch[l + 1]})});
    }
    return pack_theta(layers, arch);
  };
  if (config.agg_mode == AggMode::kDynamic) {
    conv("param_tower", kTower, kEnc3, 3, he);
    const int64_t d = config.theta_dim();
    GridTensor w = normal({config.param_channels(), kTower, 1, 1}, config.param_init_std);
    // Offset rows start at zero so sampling begins on the fixed neighbours.
    std::fill(w.values().begin() + d * kTower, w.values().end(), 0.0);
    p["param_out.w"] = std::move(w);
    GridTensor b({config.param_channels()});
    const auto theta = base_theta();
    std::copy(theta.begin(), theta.end(), b.values().begin());
    p["param_out.b"] = std::move(b);
  } else if (config.agg_mode == AggMode::kStatic) {
    const auto theta = base_theta();
    p["agg_static"] = GridTensor({static_cast<int64_t>(theta.size())}, theta);
  }
  return p;
}

ToyModel::ToyModel(ModelConfig config) : config_(std::move(config)), params_(init_parameters(config_)) {}

ToyModel::ToyModel(ModelConfig config, ParameterSet params) : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const ParameterSet expected = init_parameters(config_);
  for (const auto& [name, t] : expected) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("missing parameter '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw std::invalid_argument("parameter '" + name + "' has shape " + shape_to_string(it->second.shape()) +
                                  ", expected " + shape_to_string(t.shape()));
    }
  }
  if (params_.size() != expected.size()) throw std::invalid_argument("checkpoint has unexpected parameters");
}

namespace {

GridTensor coord_channels(int64_t h, int64_t w) {
  GridTensor c({2, h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      c.at(0, y, x) = w > 1 ? -1.0 + 2.0 * static_cast<double>(x) / static_cast<double>(w - 1) : 0.0;
      c.at(1, y, x) = h > 1 ? -1.0 + 2.0 * static_cast<double>(y) / static_cast<double>(h - 1) : 0.0;
    }
  return c;
}

// [D + P, G, G] channel-major map -> cell-major [G, G, n] block starting at channel `first`.
GridTensor to_cell_major(const GridTensor& map, int64_t first, int64_t n) {
  const int64_t g = map.dim(1);
  GridTensor out({g, g, n});
  for (int64_t d = 0; d < n; ++d) {
    const auto src = map.plane(first + d);
    for (int64_t k = 0; k < g * g; ++k) out[static_cast<size_t>(k * n + d)] = src[static_cast<size_t>(k)];
  }
  return out;
}

void add_from_cell_major(const GridTensor& cell_major, int64_t first, GridTensor& map) {
  const int64_t g = map.dim(1), n = cell_major.dim(2);
  for (int64_t d = 0; d < n; ++d) {
    auto dst = map.plane(first + d);
    for (int64_t k = 0; k < g * g; ++k) dst[static_cast<size_t>(k)] += cell_major[static_cast<size_t>(k * n + d)];
  }
}

void accumulate(ParameterSet& grads, const std::string& name, Conv2dGrads& g) {
  grads.at(name + ".w").add_(g.weight);
  grads.at(name + ".b").add_(g.bias);
}

}  // namespace

ModelOutput ToyModel::forward(const GridTensor& image, ForwardTrace* trace) const {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw std::invalid_argument("model input must be [3, H, W], got " + shape_to_string(image.shape()));
  }
  if (image.dim(1) % 4 != 0 || image.dim(2) % 4 != 0) {
    throw std::invalid_argument("image dims " + shape_to_string(image.shape()) + " must be divisible by 4");
  }
  ForwardTrace local;
  ForwardTrace& t = trace ? *trace : local;
  t = ForwardTrace{};
  t.in_h = image.dim(1);
  t.in_w = image.dim(2);
  const auto& P = params_;
  const int64_t mh = t.in_h / 2, mw = t.in_w / 2;

  const GridTensor e1 = t.relu1.forward(t.enc1.forward(image, P.at("enc1.w"), P.at("enc1.b")));
  const GridTensor e2 = t.relu2.forward(t.enc2.forward(avg_pool2(e1), P.at("enc2.w"), P.at("enc2.b")));
  const GridTensor e3 = t.relu3.forward(t.enc3.forward(avg_pool2(e2), P.at("enc3.w"), P.at("enc3.b")));
  const GridTensor fused = add(e2, resize_bilinear(e3, mh, mw));

  ModelOutput out;
  out.context = t.ctx_conv.forward(fused, P.at("ctx.w"), P.at("ctx.b"));
  const GridTensor tower_in[] = {fused, coord_channels(mh, mw)};
  const GridTensor m1 =
      t.relu_mask.forward(t.mask_tower.forward(t.mask_in.forward(tower_in), P.at("mask_tower.w"), P.at("mask_tower.b")));

  t.levels.resize(config_.grids.levels.size());
  for (size_t l = 0; l < config_.grids.levels.size(); ++l) {
    const GridLevel& lv = config_.grids.levels[l];
    auto& tl = t.levels[l];
    LevelOutput lo;
    lo.reps = tl.mask_out.forward(m1, P.at(level_key("mask_out", l) + ".w"), P.at(level_key("mask_out", l) + ".b"));
    const GridTensor g = resize_bilinear(e3, lv.grid, lv.grid);
    const GridTensor c1 = tl.relu_cls.forward(tl.cls_tower.forward(g, P.at("cls_tower.w"), P.at("cls_tower.b")));
    const GridTensor c2 =
        tl.relu_cls2.forward(tl.cls_tower2.forward(c1, P.at("cls_tower2.w"), P.at("cls_tower2.b")));
    lo.cls_logits = tl.cls_out.forward(c2, P.at("cls_out.w"), P.at("cls_out.b"));
    lo.cls = sigmoid(lo.cls_logits);
    if (config_.agg_mode == AggMode::kDynamic) {
      const GridTensor a1 =
          tl.relu_param.forward(tl.param_tower.forward(g, P.at("param_tower.w"), P.at("param_tower.b")));
      lo.param_map = tl.param_out.forward(a1, P.at("param_out.w"), P.at("param_out.b"));
      lo.params.theta = to_cell_major(lo.param_map, 0, config_.theta_dim());
      if (config_.offset_dim() > 0) {
        lo.params.offsets = to_cell_major(lo.param_map, config_.theta_dim(), config_.offset_dim());
      }
    } else if (config_.agg_mode == AggMode::kStatic) {
      const GridTensor& shared = P.at("agg_static");
      const int64_t d = static_cast<int64_t>(shared.size());
      GridTensor theta({lv.grid, lv.grid, d});
      for (int64_t k = 0; k < lv.grid * lv.grid; ++k)
        std::copy(shared.values().begin(), shared.values().end(), theta.values().begin() + k * d);
      lo.params.theta = std::move(theta);
    }
    out.levels.push_back(std::move(lo));
  }
  t.recorded = true;
  return out;
}

OutputGrads ToyModel::zero_output_grads(const ModelOutput& out) const {
  OutputGrads g;
  g.context = GridTensor::zeros_like(out.context);
  for (const auto& lo : out.levels) {
    LevelOutputGrads lg;
    lg.cls_logits = GridTensor::zeros_like(lo.cls_logits);
    lg.reps = GridTensor::zeros_like(lo.reps);
    if (!lo.params.theta.empty()) lg.theta = GridTensor::zeros_like(lo.params.theta);
    if (lo.params.offsets) lg.offsets = GridTensor::zeros_like(*lo.params.offsets);
    g.levels.push_back(std::move(lg));
  }
  return g;
}

void ToyModel::backward(const ForwardTrace& t, const OutputGrads& og, ParameterSet& grads) const {
  if (!t.recorded) throw std::logic_error("model backward called without a recorded forward");
  const int64_t mh = t.in_h / 2, mw = t.in_w / 2;
  GridTensor d_e3({kEnc3, t.in_h / 4, t.in_w / 4});
  GridTensor d_m1({kTower, mh, mw});

  for (size_t l = 0; l < config_.grids.levels.size(); ++l) {
    const GridLevel& lv = config_.grids.levels[l];
    const auto& tl = t.levels[l];
    const auto& lg = og.levels[l];
    GridTensor d_g({kEnc3, lv.grid, lv.grid});

    auto gm = tl.mask_out.backward(lg.reps);
    accumulate(grads, level_key("mask_out", l), gm);
    d_m1.add_(gm.input);

    auto gc = tl.cls_out.backward(lg.cls_logits);
    accumulate(grads, "cls_out", gc);
    auto gt2 = tl.cls_tower2.backward(tl.relu_cls2.backward(gc.input));
    accumulate(grads, "cls_tower2", gt2);
    auto gt = tl.cls_tower.backward(tl.relu_cls.backward(gt2.input));
    accumulate(grads, "cls_tower", gt);
    d_g.add_(gt.input);

    if (config_.agg_mode == AggMode::kDynamic) {
      GridTensor d_map({config_.param_channels(), lv.grid, lv.grid});
      add_from_cell_major(lg.theta, 0, d_map);
      if (config_.offset_dim() > 0) add_from_cell_major(lg.offsets, config_.theta_dim(), d_map);
      auto gp = tl.param_out.backward(d_map);
      accumulate(grads, "param_out", gp);
      auto gpt = tl.param_tower.backward(tl.relu_param.backward(gp.input));
      accumulate(grads, "param_tower", gpt);
      d_g.add_(gpt.input);
    } else if (config_.agg_mode == AggMode::kStatic) {
      GridTensor& ds = grads.at("agg_static");
      const int64_t d = static_cast<int64_t>(ds.size());
      for (int64_t k = 0; k < lv.grid * lv.grid; ++k)
        for (int64_t q = 0; q < d; ++q) ds[static_cast<size_t>(q)] += lg.theta[static_cast<size_t>(k * d + q)];
    }
    d_e3.add_(resize_bilinear_backward(d_g, t.in_h / 4, t.in_w / 4));
  }

  auto gmt = t.mask_tower.backward(t.relu_mask.backward(d_m1));
  accumulate(grads, "mask_tower", gmt);
  GridTensor d_fused = t.mask_in.backward(gmt.input)[0];
  auto gctx = t.ctx_conv.backward(og.context);
  accumulate(grads, "ctx", gctx);
  d_fused.add_(gctx.input);

  d_e3.add_(resize_bilinear_backward(d_fused, t.in_h / 4, t.in_w / 4));
  auto g3 = t.enc3.backward(t.relu3.backward(d_e3));
  accumulate(grads, "enc3", g3);
  GridTensor d_e2 = d_fused;
  d_e2.add_(avg_pool2_backward(g3.input));
  auto g2 = t.enc2.backward(t.relu2.backward(d_e2));
  accumulate(grads, "enc2", g2);
  auto g1 = t.enc1.backward(t.relu1.backward(avg_pool2_backward(g2.input)));
  accumulate(grads, "enc1", g1);
}

int64_t LabelAssignment::num_positive() const {
  int64_t n = 0;
  for (const auto& l : levels) n += static_cast<int64_t>(l.positives.size());
  return n;
}

GridTensor downsample_mask(const BinaryMask& mask, int64_t out_h, int64_t out_w) {
  if (mask.height % out_h != 0 || mask.width % out_w != 0) {
    throw std::invalid_argument("mask downsampling needs integer factors");
  }
  const int64_t fy = mask.height / out_h, fx = mask.width / out_w;
  GridTensor out({out_h, out_w});
  for (int64_t y = 0; y < out_h; ++y)
    for (int64_t x = 0; x < out_w; ++x) {
      int64_t on = 0;
      for (int64_t a = 0; a < fy; ++a)
        for (int64_t b = 0; b < fx; ++b) on += mask.at(y * fy + a, x * fx + b);
      out[static_cast<size_t>(y * out_w + x)] = 2 * on >= fy * fx ? 1.0 : 0.0;
    }
  return out;
}

namespace {

struct InstanceGeometry {
  double cy = 0, cx = 0;  // mass centre in pixels
  double h = 0, w = 0;    // box extent
  int64_t area = 0;
};

InstanceGeometry measure(const BinaryMask& m) {
  InstanceGeometry g;
  int64_t y0 = m.height, y1 = -1, x0 = m.width, x1 = -1;
  for (int64_t y = 0; y < m.height; ++y)
    for (int64_t x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      ++g.area;
      g.cy += y + 0.5;
      g.cx += x + 0.5;
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
    }
  if (g.area > 0) {
    g.cy /= static_cast<double>(g.area);
    g.cx /= static_cast<double>(g.area);
    g.h = static_cast<double>(y1 - y0 + 1);
    g.w = static_cast<double>(x1 - x0 + 1);
  }
  return g;
}

}  // namespace

std::vector<int64_t> assign_levels(const Scene& scene, const GridConfig& grids) {
  const size_t n = grids.levels.size();
  // Nominal object scale of a level: two cells of its classification grid.
  std::vector<double> log_scale(n);
  const double extent = static_cast<double>(std::min(scene.height(), scene.width()));
  for (size_t l = 0; l < n; ++l) log_scale[l] = std::log(2.0 * extent / static_cast<double>(grids.levels[l].grid));
  std::vector<int64_t> out;
  for (const auto& inst : scene.instances) {
    const double s = 0.5 * std::log(std::max<double>(1.0, static_cast<double>(inst.mask.area())));
    size_t best = 0;
    for (size_t l = 1; l < n; ++l)
      if (std::abs(s - log_scale[l]) < std::abs(s - log_scale[best])) best = l;
    out.push_back(static_cast<int64_t>(best));
  }
  return out;
}

LabelAssignment assign_labels(const Scene& scene, const GridConfig& grids, int64_t num_classes, double center_region) {
  grids.validate();
  const int64_t H = scene.height(), W = scene.width();
  LabelAssignment la;
  for (const auto& inst : scene.instances) la.target_masks.push_back(downsample_mask(inst.mask, H / 2, W / 2));
  const auto level_of = assign_levels(scene, grids);
  for (size_t l = 0; l < grids.levels.size(); ++l) {
    const int64_t G = grids.levels[l].grid;
    std::vector<int64_t> owner(static_cast<size_t>(G * G), -1);
    for (size_t k = 0; k < scene.instances.size(); ++k) {
      if (level_of[k] != static_cast<int64_t>(l)) continue;
      const InstanceGeometry geo = measure(scene.instances[k].mask);
      if (geo.area == 0) continue;
      const double half_h = 0.5 * center_region * geo.h, half_w = 0.5 * center_region * geo.w;
      const int64_t ci = std::clamp<int64_t>(static_cast<int64_t>(geo.cy / H * G), 0, G - 1);
      const int64_t cj = std::clamp<int64_t>(static_cast<int64_t>(geo.cx / W * G), 0, G - 1);
      for (int64_t i = 0; i < G; ++i)
        for (int64_t j = 0; j < G; ++j) {
          const double y = (i + 0.5) * H / G, x = (j + 0.5) * W / G;
          const bool in_region = std::abs(y - geo.cy) <= half_h && std::abs(x - geo.cx) <= half_w;
          if (!in_region && !(i == ci && j == cj)) continue;
          int64_t& o = owner[static_cast<size_t>(i * G + j)];
          if (o < 0 || scene.instances[k].mask.area() < scene.instances[static_cast<size_t>(o)].mask.area()) {
            o = static_cast<int64_t>(k);
          }
        }
    }
    LevelTargets lt;
    lt.cls_target = GridTensor({num_classes, G, G});
    for (int64_t i = 0; i < G; ++i)
      for (int64_t j = 0; j < G; ++j) {
        const int64_t o = owner[static_cast<size_t>(i * G + j)];
        if (o < 0) continue;
        const int c = scene.instances[static_cast<size_t>(o)].class_id;
        if (c < 0 || c >= num_classes) throw std::invalid_argument("instance class outside [0, num_classes)");
        lt.cls_target.at(c, i, j) = 1.0;
        lt.positives.push_back({{i, j}, o});
      }
    la.levels.push_back(std::move(lt));
  }
  return la;
}

void save_parameters(const std::filesystem::path& dir, const ParameterSet& params) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write checkpoint manifest in " + dir.string());
  for (const auto& [name, t] : params) {
    const std::string file = name + ".gtf";
    write_gtf(dir / file, t);
    manifest << name << ' ' << file << ' ';
    for (size_t k = 0; k < t.rank(); ++k) manifest << (k ? "x" : "") << t.dim(k);
    manifest << '\n';
  }
}

ParameterSet load_parameters(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw std::runtime_error("no checkpoint manifest in " + dir.string());
  ParameterSet params;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, file, dims;
    ls >> name >> file >> dims;
    GridTensor t = read_gtf(dir / file);
    std::string expected;
    for (size_t k = 0; k < t.rank(); ++k) expected += (k ? "x" : "") + std::to_string(t.dim(k));
    if (expected != dims) throw std::runtime_error("checkpoint tensor '" + name + "' shape " + expected +
                                                   " disagrees with manifest " + dims);
    params.emplace(name, std::move(t));
  }
  return params;
}

}  // namespace sodar
