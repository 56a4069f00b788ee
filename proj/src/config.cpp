#include "sodar/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace sodar {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw std::invalid_argument("config: bad value '" + std::string(text) + "' for " + std::string(key));
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "on" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "off" || text == "no") return false;
  throw std::invalid_argument("config: bad boolean '" + std::string(text) + "' for " + std::string(key));
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Entry {
  std::string_view key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SODAR_NUM(name, field, type)                                                        \
  Entry {                                                                                   \
    name, [](RunConfig& c, std::string_view v) { c.field = parse_number<type>(name, v); }, \
        [](const RunConfig& c) { return fmt(static_cast<double>(c.field)); }                \
  }
#define SODAR_INT(name, field, type)                                                        \
  Entry {                                                                                   \
    name, [](RunConfig& c, std::string_view v) { c.field = parse_number<type>(name, v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }                          \
  }
#define SODAR_BOOL(name, field)                                                        \
  Entry {                                                                              \
    name, [](RunConfig& c, std::string_view v) { c.field = parse_bool(name, v); },     \
        [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }     \
  }
#define SODAR_ENUM(name, field, parser)                                                 \
  Entry {                                                                               \
    name, [](RunConfig& c, std::string_view v) { c.field = parser(v); },                \
        [](const RunConfig& c) { return std::string(to_string(c.field)); }              \
  }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      SODAR_INT("num_classes", model.num_classes, int64_t),
      Entry{"grids", [](RunConfig& c, std::string_view v) { c.model.grids = parse_grids(v); },
            [](const RunConfig& c) { return grids_to_string(c.model.grids); }},
      SODAR_ENUM("agg_mode", model.agg_mode, parse_agg_mode),
      SODAR_ENUM("neighbors", model.agg.scheme, parse_neighbor_scheme),
      SODAR_ENUM("context", model.agg.context, parse_context_mode),
      SODAR_INT("context_channels", model.agg.context_channels, int64_t),
      SODAR_BOOL("deformable", model.agg.deformable),
      SODAR_INT("agg_layers", model.agg.layer_count, int64_t),
      SODAR_INT("agg_kernel", model.agg.kernel, int64_t),
      SODAR_INT("agg_hidden", model.agg.hidden, int64_t),
      SODAR_NUM("center_region", model.center_region, double),
      SODAR_NUM("param_init_std", model.param_init_std, double),
      SODAR_INT("init_seed", model.init_seed, uint64_t),
      SODAR_NUM("mask_loss_weight", loss.mask_loss_weight, double),
      SODAR_ENUM("cls_loss", loss.cls_loss, parse_cls_loss),
      SODAR_NUM("focal_gamma", loss.focal_gamma, double),
      SODAR_NUM("focal_alpha", loss.focal_alpha, double),
      SODAR_NUM("dice_eps", loss.dice_eps, double),
      SODAR_BOOL("two_stage", loss.two_stage),
      SODAR_INT("epochs", train.epochs, int64_t),
      SODAR_INT("batch_size", train.batch_size, int64_t),
      SODAR_NUM("learning_rate", train.learning_rate, double),
      SODAR_NUM("lr_decay", train.lr_decay, double),
      SODAR_NUM("decay_at", train.decay_at, double),
      SODAR_INT("seed", train.seed, uint64_t),
      SODAR_INT("val_every", train.val_every, int64_t),
      SODAR_BOOL("hflip", train.hflip),
      SODAR_NUM("adam_beta1", train.adam.beta1, double),
      SODAR_NUM("adam_beta2", train.adam.beta2, double),
      SODAR_NUM("adam_eps", train.adam.eps, double),
      SODAR_NUM("score_threshold", decode.score_threshold, double),
      SODAR_NUM("mask_threshold", decode.mask_threshold, double),
      SODAR_NUM("nms_iou", decode.nms_iou, double),
      SODAR_INT("max_detections", decode.max_detections, int64_t),
  };
  return table;
}

#undef SODAR_NUM
#undef SODAR_INT
#undef SODAR_BOOL
#undef SODAR_ENUM

}  // namespace

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  train.validate();
  if (decode.score_threshold < 0.0 || decode.score_threshold > 1.0) {
    throw std::invalid_argument("config: score_threshold must be in [0, 1]");
  }
  if (decode.nms_iou <= 0.0 || decode.nms_iou > 1.0) throw std::invalid_argument("config: nms_iou must be in (0, 1]");
  if (decode.max_detections <= 0) throw std::invalid_argument("config: max_detections must be positive");
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& e : entries()) {
    if (e.key == key) {
      e.set(cfg, value);
      return;
    }
  }
  throw std::invalid_argument("config: unknown key '" + std::string(key) + "'");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& e : entries()) keys.emplace_back(e.key);
  return keys;
}

RunConfig parse_config(std::istream& is, RunConfig base) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string_view s = line;
    if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    }
    try {
      set_config_value(base, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  base.validate();
  return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path.string());
  return parse_config(is, std::move(base));
}

std::string dump_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : entries()) out += std::string(e.key) + "=" + e.get(cfg) + "\n";
  return out;
}

GridConfig parse_grids(std::string_view text) {
  if (text == "default") return default_pyramid();
  if (text == "plus-cls") return plus_cls_pyramid();
  if (text == "minus-mask") return minus_mask_pyramid();
  GridConfig g;
  g.levels.clear();
  while (!text.empty()) {
    const auto comma = text.find(',');
    const std::string_view item = trim(text.substr(0, comma));
    const auto colon = item.find(':');
    GridLevel lv;
    lv.grid = parse_number<int64_t>("grids", item.substr(0, colon));
    lv.mask_grid = colon == std::string_view::npos ? lv.grid : parse_number<int64_t>("grids", item.substr(colon + 1));
    g.levels.push_back(lv);
    if (comma == std::string_view::npos) break;
    text = text.substr(comma + 1);
  }
  g.validate();
  return g;
}

std::string grids_to_string(const GridConfig& grids) {
  std::string out;
  for (size_t l = 0; l < grids.levels.size(); ++l) {
    if (l) out += ',';
    out += std::to_string(grids.levels[l].grid) + ":" + std::to_string(grids.levels[l].mask_grid);
  }
  return out;
}

}  // namespace sodar
