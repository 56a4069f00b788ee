#include "sodar/aggregation.hpp"

#include <stdexcept>
#include <string>

namespace sodar {

std::string_view to_string(ContextMode mode) {
  switch (mode) {
    case ContextMode::kWith: return "with";
    case ContextMode::kWithout: return "without";
    case ContextMode::kOnly: return "only";
  }
  return "?";
}

ContextMode parse_context_mode(std::string_view text) {
  for (auto m : {ContextMode::kWith, ContextMode::kWithout, ContextMode::kOnly}) {
    if (to_string(m) == text) return m;
  }
  throw std::invalid_argument("unknown context mode '" + std::string(text) + "'");
}

std::vector<int64_t> AggArchitecture::channels() const {
  std::vector<int64_t> ch{input_channels};
  for (int64_t l = 1; l < layer_count; ++l) ch.push_back(hidden);
  ch.push_back(1);
  return ch;
}

int64_t AggArchitecture::param_count() const {
  validate();
  const auto ch = channels();
  int64_t d = 0;
  for (size_t l = 0; l + 1 < ch.size(); ++l) d += ch[l] * ch[l + 1] * kernel * kernel + ch[l + 1];
  return d;
}

void AggArchitecture::validate() const {
  if (input_channels < 1) throw std::invalid_argument("aggregation input needs at least one channel");
  if (layer_count < 1 || layer_count > 4) {
    throw std::invalid_argument("aggregation layer count must be in [1, 4], got " + std::to_string(layer_count));
  }
  if (kernel != 1 && kernel != 3) throw std::invalid_argument("aggregation kernel must be 1 or 3");
  if (hidden < 1) throw std::invalid_argument("aggregation hidden width must be positive");
}

AggArchitecture AggregationConfig::architecture() const {
  AggArchitecture arch{rep_channels() + ctx_input_channels(), layer_count, kernel, hidden};
  arch.validate();
  return arch;
}

std::vector<AggLayer> unpack_theta(std::span<const double> theta, const AggArchitecture& arch) {
  const int64_t d = arch.param_count();
  if (static_cast<int64_t>(theta.size()) != d) {
    throw std::invalid_argument("theta has " + std::to_string(theta.size()) + " entries, expected D=" +
                                std::to_string(d));
  }
  const auto ch = arch.channels();
  std::vector<AggLayer> layers;
  size_t pos = 0;
  for (size_t l = 0; l + 1 < ch.size(); ++l) {
    const Shape ws{ch[l + 1], ch[l], arch.kernel, arch.kernel};
    const auto nw = static_cast<size_t>(shape_volume(ws));
    AggLayer layer{GridTensor(ws, std::vector<double>(theta.begin() + pos, theta.begin() + pos + nw)), {}};
    pos += nw;
    const auto nb = static_cast<size_t>(ch[l + 1]);
    layer.bias = GridTensor({ch[l + 1]}, std::vector<double>(theta.begin() + pos, theta.begin() + pos + nb));
    pos += nb;
    layers.push_back(std::move(layer));
  }
  return layers;
}

std::vector<double> pack_theta(std::span<const AggLayer> layers, const AggArchitecture& arch) {
  std::vector<double> theta;
  theta.reserve(static_cast<size_t>(arch.param_count()));
  for (const auto& l : layers) {
    theta.insert(theta.end(), l.weight.values().begin(), l.weight.values().end());
    theta.insert(theta.end(), l.bias.values().begin(), l.bias.values().end());
  }
  if (static_cast<int64_t>(theta.size()) != arch.param_count()) {
    throw std::invalid_argument("packed layers have " + std::to_string(theta.size()) + " values, expected D=" +
                                std::to_string(arch.param_count()));
  }
  return theta;
}

std::span<const double> DynamicParams::theta_at(int64_t i, int64_t j) const {
  const int64_t g = theta.dim(1), d = theta.dim(2);
  return theta.values().subspan(static_cast<size_t>((i * g + j) * d), static_cast<size_t>(d));
}

std::span<const double> DynamicParams::offsets_at(int64_t i, int64_t j) const {
  if (!offsets) return {};
  const int64_t g = offsets->dim(1), p = offsets->dim(2);
  return offsets->values().subspan(static_cast<size_t>((i * g + j) * p), static_cast<size_t>(p));
}

GridTensor AggNet::forward(const GridTensor& stack, std::span<const double> theta, const AggArchitecture& arch) {
  if (stack.rank() != 3 || stack.dim(0) != arch.input_channels) {
    throw std::invalid_argument("aggregation input has shape " + shape_to_string(stack.shape()) + ", expected " +
                                std::to_string(arch.input_channels) + " channels");
  }
  arch_ = arch;
  layers_ = unpack_theta(theta, arch);
  convs_.assign(layers_.size(), Conv2dNode{});
  relus_.assign(layers_.size() - 1, ReluNode{});
  GridTensor h = stack;
  for (size_t l = 0; l < layers_.size(); ++l) {
    h = convs_[l].forward(h, layers_[l].weight, layers_[l].bias);
    if (l + 1 < layers_.size()) h = relus_[l].forward(h);
  }
  return h;
}

AggNet::Grads AggNet::backward(const GridTensor& grad_out) const {
  if (!arch_) throw std::logic_error("aggregation backward called without a recorded forward");
  std::vector<AggLayer> dlayers(layers_.size());
  GridTensor g = grad_out;
  for (size_t l = layers_.size(); l-- > 0;) {
    if (l + 1 < layers_.size()) g = relus_[l].backward(g);
    auto cg = convs_[l].backward(g);
    dlayers[l] = {std::move(cg.weight), std::move(cg.bias)};
    g = std::move(cg.input);
  }
  return {std::move(g), pack_theta(dlayers, *arch_)};
}

GridTensor aggregate_static(const GridTensor& stack, std::span<const double> shared_theta,
                            const AggArchitecture& arch) {
  AggNet net;
  const GridTensor out = net.forward(stack, shared_theta, arch);
  return out.reshaped({out.dim(1), out.dim(2)});
}

GridTensor build_stack(const GridTensor& reps, const GridTensor& context, int64_t i, int64_t j,
                       std::span<const double> offsets, const AggregationConfig& cfg, const GridLevel& level) {
  std::vector<GridTensor> parts;
  if (cfg.rep_channels() > 0) {
    parts.push_back(cfg.deformable ? gather_deformable(reps, i, j, cfg.scheme, offsets, level)
                                   : gather_fixed(reps, i, j, cfg.scheme, level));
  }
  if (cfg.ctx_input_channels() > 0) {
    if (context.rank() != 3 || context.dim(0) != cfg.ctx_input_channels()) {
      throw std::invalid_argument("context feature has shape " + shape_to_string(context.shape()) + ", expected " +
                                  std::to_string(cfg.ctx_input_channels()) + " channels");
    }
    if (cfg.rep_channels() > 0 && (context.dim(1) != reps.dim(1) || context.dim(2) != reps.dim(2))) {
      throw std::invalid_argument("context spatial dims differ from mask representations");
    }
    parts.push_back(context);
  }
  return concat_channels(parts);
}

namespace {

void check_cell(const DynamicParams& params, Cell cell, const GridLevel& level, const AggArchitecture& arch,
                const AggregationConfig& cfg) {
  if (params.theta.rank() != 3 || params.theta.dim(0) != level.grid || params.theta.dim(1) != level.grid) {
    throw std::invalid_argument("theta grid has shape " + shape_to_string(params.theta.shape()) +
                                ", expected [G, G, D] with G=" + std::to_string(level.grid));
  }
  if (params.theta.dim(2) != arch.param_count()) {
    throw std::invalid_argument("theta depth " + std::to_string(params.theta.dim(2)) + " but D=" +
                                std::to_string(arch.param_count()));
  }
  if (cfg.offset_count() > 0 && (!params.offsets || params.offsets->dim(2) != cfg.offset_count())) {
    throw std::invalid_argument("deformable aggregation needs offsets with P=" + std::to_string(cfg.offset_count()));
  }
  if (cell.row < 0 || cell.col < 0 || cell.row >= level.grid || cell.col >= level.grid) {
    throw std::out_of_range("cell outside the classification grid");
  }
}

}  // namespace

GridTensor aggregate_dynamic(const GridTensor& reps, const DynamicParams& params, const GridTensor& context,
                             Cell cell, const AggregationConfig& cfg, const GridLevel& level) {
  const AggArchitecture arch = cfg.architecture();
  check_cell(params, cell, level, arch, cfg);
  const GridTensor stack = build_stack(reps, context, cell.row, cell.col, params.offsets_at(cell.row, cell.col),
                                       cfg, level);
  return aggregate_static(stack, params.theta_at(cell.row, cell.col), arch);
}

GridTensor aggregate_batch(const GridTensor& reps, const DynamicParams& params, const GridTensor& context,
                           std::span<const Cell> cells, const AggregationConfig& cfg, const GridLevel& level) {
  const AggArchitecture arch = cfg.architecture();
  const int64_t H = cfg.rep_channels() > 0 ? reps.dim(1) : context.dim(1);
  const int64_t W = cfg.rep_channels() > 0 ? reps.dim(2) : context.dim(2);
  const auto n = static_cast<int64_t>(cells.size());
  if (n == 0) return GridTensor();
  std::vector<GridTensor> stacks;
  std::vector<std::vector<AggLayer>> per_cell;
  for (const Cell& c : cells) {
    check_cell(params, c, level, arch, cfg);
    stacks.push_back(build_stack(reps, context, c.row, c.col, params.offsets_at(c.row, c.col), cfg, level));
    per_cell.push_back(unpack_theta(params.theta_at(c.row, c.col), arch));
  }
  GridTensor h = concat_channels(stacks);
  const auto ch = arch.channels();
  const int64_t k = arch.kernel;
  for (size_t l = 0; l + 1 < ch.size(); ++l) {
    const int64_t cin = ch[l], cout = ch[l + 1];
    GridTensor weight({n * cout, cin, k, k});
    GridTensor bias({n * cout});
    for (int64_t c = 0; c < n; ++c) {
      const auto& layer = per_cell[static_cast<size_t>(c)][l];
      std::copy(layer.weight.values().begin(), layer.weight.values().end(),
                weight.values().begin() + c * cout * cin * k * k);
      std::copy(layer.bias.values().begin(), layer.bias.values().end(), bias.values().begin() + c * cout);
    }
    h = conv2d(h, weight, bias, n);
    if (l + 2 < ch.size()) h = relu(h);
  }
  return h.reshaped({n, H, W});
}

GridTensor CellAggregator::forward(const GridTensor& reps, const GridTensor& context, Cell cell,
                                   std::span<const double> theta, std::span<const double> offsets) {
  const AggArchitecture arch = cfg_.architecture();
  reps_ = &reps;
  cell_ = cell;
  offsets_.assign(offsets.begin(), offsets.end());
  const GridTensor stack = build_stack(reps, context, cell.row, cell.col, offsets, cfg_, level_);
  const GridTensor out = net_.forward(stack, theta, arch);
  recorded_ = true;
  return out.reshaped({out.dim(1), out.dim(2)});
}

CellAggregator::Grads CellAggregator::backward(const GridTensor& grad_out, GridTensor* reps_grad,
                                               GridTensor* context_grad) const {
  if (!recorded_) throw std::logic_error("aggregation backward called without a recorded forward");
  auto ng = net_.backward(grad_out.reshaped({1, grad_out.dim(0), grad_out.dim(1)}));
  Grads grads{std::move(ng.theta), std::vector<double>(offsets_.size(), 0.0)};
  std::vector<int64_t> counts;
  if (cfg_.rep_channels() > 0) counts.push_back(cfg_.rep_channels());
  if (cfg_.ctx_input_channels() > 0) counts.push_back(cfg_.ctx_input_channels());
  auto parts = split_channels(ng.stack, counts);
  size_t part = 0;
  if (cfg_.rep_channels() > 0) {
    const GridTensor& g = parts[part++];
    if (reps_grad) {
      if (cfg_.deformable) {
        grads.offsets = gather_deformable_backward(*reps_, cell_.row, cell_.col, cfg_.scheme, offsets_, level_, g,
                                                   *reps_grad)
                            .offsets;
      } else {
        gather_fixed_backward(cell_.row, cell_.col, cfg_.scheme, level_, g, *reps_grad);
      }
    }
  }
  if (cfg_.ctx_input_channels() > 0 && context_grad) context_grad->add_(parts[part]);
  return grads;
}

}  // namespace sodar
