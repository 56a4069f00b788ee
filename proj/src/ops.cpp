#include "sodar/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace sodar {

void ConvSpec::validate() const {
  if (in_channels <= 0 || out_channels <= 0) throw std::invalid_argument("conv: channel counts must be positive");
  if (kernel <= 0 || kernel % 2 == 0) {
    throw std::invalid_argument("conv: kernel must be an odd positive int, got " + std::to_string(kernel));
  }
  if (groups <= 0 || in_channels % groups != 0 || out_channels % groups != 0) {
    throw std::invalid_argument("conv: groups=" + std::to_string(groups) + " must divide in_channels=" +
                                std::to_string(in_channels) + " and out_channels=" +
                                std::to_string(out_channels));
  }
}

ConvSpec conv_spec_of(const GridTensor& weight, int64_t groups) {
  if (weight.rank() != 4) {
    throw std::invalid_argument("conv: weight must be rank 4, got shape " + shape_to_string(weight.shape()));
  }
  if (weight.dim(2) != weight.dim(3)) {
    throw std::invalid_argument("conv: kernel must be square, got shape " + shape_to_string(weight.shape()));
  }
  ConvSpec spec{weight.dim(1) * groups, weight.dim(0), weight.dim(2), groups};
  spec.validate();
  return spec;
}

namespace {

void check_conv_input(const GridTensor& x, const ConvSpec& spec) {
  if (x.rank() != 3) throw std::invalid_argument("conv: input must be [C, H, W], got " + shape_to_string(x.shape()));
  if (x.dim(0) != spec.in_channels) {
    throw std::invalid_argument("conv: input channel dimension is " + std::to_string(x.dim(0)) +
                                " but weight expects " + std::to_string(spec.in_channels));
  }
}

// Zero-padded planes with row stride W + 2p and 2p trailing slack so every
// tap can be applied as one flat pass over H * (W + 2p) entries.
std::vector<double> pad_planes(const double* x, int64_t C, int64_t H, int64_t W, int64_t p) {
  const int64_t Wp = W + 2 * p, plane = (H + 2 * p) * Wp;
  std::vector<double> out(static_cast<size_t>(C * plane + 2 * p), 0.0);
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < H; ++y)
      std::copy(x + (c * H + y) * W, x + (c * H + y + 1) * W, out.begin() + c * plane + (y + p) * Wp + p);
  return out;
}

}  // namespace

GridTensor conv2d(const GridTensor& x, const GridTensor& weight, const GridTensor& bias, int64_t groups) {
  const ConvSpec spec = conv_spec_of(weight, groups);
  check_conv_input(x, spec);
  if (bias.size() != static_cast<size_t>(spec.out_channels)) {
    throw std::invalid_argument("conv: bias length " + std::to_string(bias.size()) + " but out_channels is " +
                                std::to_string(spec.out_channels));
  }
  const int64_t H = x.dim(1), W = x.dim(2), k = spec.kernel, p = spec.padding();
  const int64_t Wp = W + 2 * p, plane = (H + 2 * p) * Wp, n = H * Wp;
  const int64_t cin_g = spec.in_channels / groups, cout_g = spec.out_channels / groups;
  const std::vector<double> xp = pad_planes(x.data(), spec.in_channels, H, W, p);
  std::vector<double> acc(static_cast<size_t>(n));
  GridTensor out({spec.out_channels, H, W});
  const double* w = weight.data();
  for (int64_t co = 0; co < spec.out_channels; ++co) {
    std::fill(acc.begin(), acc.end(), bias[static_cast<size_t>(co)]);
    double* a = acc.data();
    const int64_t g = co / cout_g;
    for (int64_t cl = 0; cl < cin_g; ++cl) {
      const double* ic = xp.data() + (g * cin_g + cl) * plane;
      for (int64_t ky = 0; ky < k; ++ky)
        for (int64_t kx = 0; kx < k; ++kx) {
          const double wv = w[((co * cin_g + cl) * k + ky) * k + kx];
          const double* src = ic + ky * Wp + kx;
          for (int64_t q = 0; q < n; ++q) a[q] += wv * src[q];
        }
    }
    double* o = out.data() + co * H * W;
    for (int64_t y = 0; y < H; ++y) std::copy(a + y * Wp, a + y * Wp + W, o + y * W);
  }
  return out;
}

Conv2dGrads conv2d_backward(const GridTensor& x, const GridTensor& weight, const GridTensor& grad_out,
                            int64_t groups) {
  const ConvSpec spec = conv_spec_of(weight, groups);
  check_conv_input(x, spec);
  const int64_t H = x.dim(1), W = x.dim(2), k = spec.kernel, p = spec.padding();
  if (grad_out.shape() != Shape{spec.out_channels, H, W}) {
    throw std::invalid_argument("conv backward: upstream gradient shape " + shape_to_string(grad_out.shape()) +
                                " does not match output " + shape_to_string({spec.out_channels, H, W}));
  }
  const int64_t Wp = W + 2 * p, plane = (H + 2 * p) * Wp, n = H * Wp;
  const int64_t cin_g = spec.in_channels / groups, cout_g = spec.out_channels / groups;
  const std::vector<double> xp = pad_planes(x.data(), spec.in_channels, H, W, p);
  // Upstream gradient on the padded row stride; the extra columns stay zero.
  std::vector<double> gp(static_cast<size_t>(spec.out_channels * n), 0.0);
  for (int64_t co = 0; co < spec.out_channels; ++co)
    for (int64_t y = 0; y < H; ++y) {
      const double* src = grad_out.data() + (co * H + y) * W;
      std::copy(src, src + W, gp.begin() + co * n + y * Wp);
    }
  std::vector<double> dxp(xp.size(), 0.0);
  Conv2dGrads grads{GridTensor(x.shape()), GridTensor(weight.shape()), GridTensor(spec.bias_shape())};
  const double* w = weight.data();
  for (int64_t co = 0; co < spec.out_channels; ++co) {
    const double* go = gp.data() + co * n;
    double bsum = 0.0;
    for (int64_t q = 0; q < n; ++q) bsum += go[q];
    grads.bias[static_cast<size_t>(co)] = bsum;
    const int64_t g = co / cout_g;
    for (int64_t cl = 0; cl < cin_g; ++cl) {
      const int64_t ci = g * cin_g + cl;
      for (int64_t ky = 0; ky < k; ++ky)
        for (int64_t kx = 0; kx < k; ++kx) {
          const size_t widx = static_cast<size_t>(((co * cin_g + cl) * k + ky) * k + kx);
          const double wv = w[widx];
          const int64_t off = ci * plane + ky * Wp + kx;
          const double* src = xp.data() + off;
          double* dst = dxp.data() + off;
          double s[16] = {};
          int64_t q = 0;
          for (; q + 16 <= n; q += 16)
            for (int r = 0; r < 16; ++r) {
              s[r] += go[q + r] * src[q + r];
              dst[q + r] += wv * go[q + r];
            }
          for (; q < n; ++q) {
            s[0] += go[q] * src[q];
            dst[q] += wv * go[q];
          }
          for (int r = 8; r > 0; r /= 2)
            for (int j = 0; j < r; ++j) s[j] += s[j + r];
          grads.weight[widx] = s[0];
        }
    }
  }
  for (int64_t c = 0; c < spec.in_channels; ++c)
    for (int64_t y = 0; y < H; ++y) {
      const double* src = dxp.data() + c * plane + (y + p) * Wp + p;
      std::copy(src, src + W, grads.input.data() + (c * H + y) * W);
    }
  return grads;
}

GridTensor relu(const GridTensor& x) {
  GridTensor out(x.shape());
  for (size_t k = 0; k < x.size(); ++k) out[k] = x[k] > 0.0 ? x[k] : 0.0;
  return out;
}

GridTensor relu_backward(const GridTensor& x, const GridTensor& grad_out) {
  if (x.shape() != grad_out.shape()) throw std::invalid_argument("relu backward: shape mismatch");
  GridTensor out(x.shape());
  for (size_t k = 0; k < x.size(); ++k) out[k] = x[k] > 0.0 ? grad_out[k] : 0.0;
  return out;
}

double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

GridTensor sigmoid(const GridTensor& x) {
  GridTensor out(x.shape());
  for (size_t k = 0; k < x.size(); ++k) out[k] = sigmoid(x[k]);
  return out;
}

GridTensor sigmoid_backward(const GridTensor& y, const GridTensor& grad_out) {
  if (y.shape() != grad_out.shape()) throw std::invalid_argument("sigmoid backward: shape mismatch");
  GridTensor out(y.shape());
  for (size_t k = 0; k < y.size(); ++k) out[k] = grad_out[k] * y[k] * (1.0 - y[k]);
  return out;
}

GridTensor concat_channels(std::span<const GridTensor> xs) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  const int64_t H = xs[0].dim(1), W = xs[0].dim(2);
  int64_t channels = 0;
  for (size_t k = 0; k < xs.size(); ++k) {
    const auto& t = xs[k];
    if (t.rank() != 3 || t.dim(1) != H || t.dim(2) != W) {
      throw std::invalid_argument("concat: input " + std::to_string(k) + " has shape " +
                                  shape_to_string(t.shape()) + ", expected spatial dims [" +
                                  std::to_string(H) + ", " + std::to_string(W) + "]");
    }
    channels += t.dim(0);
  }
  GridTensor out({channels, H, W});
  double* dst = out.data();
  for (const auto& t : xs) dst = std::copy(t.data(), t.data() + t.size(), dst);
  return out;
}

std::vector<GridTensor> split_channels(const GridTensor& x, std::span<const int64_t> counts) {
  int64_t total = 0;
  for (int64_t c : counts) total += c;
  if (x.rank() != 3 || total != x.dim(0)) {
    throw std::invalid_argument("split: channel counts sum to " + std::to_string(total) + " but tensor is " +
                                shape_to_string(x.shape()));
  }
  const int64_t H = x.dim(1), W = x.dim(2);
  std::vector<GridTensor> parts;
  const double* src = x.data();
  for (int64_t c : counts) {
    std::vector<double> data(src, src + c * H * W);
    src += c * H * W;
    parts.emplace_back(Shape{c, H, W}, std::move(data));
  }
  return parts;
}

GridTensor avg_pool2(const GridTensor& x) {
  if (x.rank() != 3 || x.dim(1) % 2 || x.dim(2) % 2) {
    throw std::invalid_argument("avg_pool2: needs [C, even H, even W], got " + shape_to_string(x.shape()));
  }
  const int64_t C = x.dim(0), H = x.dim(1) / 2, W = x.dim(2) / 2;
  GridTensor out({C, H, W});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t xx = 0; xx < W; ++xx)
        out.at(c, y, xx) = 0.25 * (x.at(c, 2 * y, 2 * xx) + x.at(c, 2 * y, 2 * xx + 1) +
                                   x.at(c, 2 * y + 1, 2 * xx) + x.at(c, 2 * y + 1, 2 * xx + 1));
  return out;
}

GridTensor avg_pool2_backward(const GridTensor& grad_out) {
  const int64_t C = grad_out.dim(0), H = grad_out.dim(1), W = grad_out.dim(2);
  GridTensor out({C, 2 * H, 2 * W});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < 2 * H; ++y)
      for (int64_t xx = 0; xx < 2 * W; ++xx) out.at(c, y, xx) = 0.25 * grad_out.at(c, y / 2, xx / 2);
  return out;
}

namespace {

struct Tap {
  int64_t i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<Tap> bilinear_taps(int64_t in, int64_t out) {
  std::vector<Tap> taps(static_cast<size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int64_t i0 = static_cast<int64_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int64_t i1 = std::min(i0 + 1, in - 1);
    taps[static_cast<size_t>(d)] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

GridTensor resize_bilinear(const GridTensor& x, int64_t out_h, int64_t out_w) {
  if (x.rank() != 3) throw std::invalid_argument("resize: expected [C, H, W], got " + shape_to_string(x.shape()));
  const int64_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H == out_h && W == out_w) return x;
  const auto ty = bilinear_taps(H, out_h), tx = bilinear_taps(W, out_w);
  GridTensor out({C, out_h, out_w});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < out_h; ++y) {
      const Tap& a = ty[static_cast<size_t>(y)];
      for (int64_t xx = 0; xx < out_w; ++xx) {
        const Tap& b = tx[static_cast<size_t>(xx)];
        const double top = (1.0 - b.w1) * x.at(c, a.i0, b.i0) + b.w1 * x.at(c, a.i0, b.i1);
        const double bot = (1.0 - b.w1) * x.at(c, a.i1, b.i0) + b.w1 * x.at(c, a.i1, b.i1);
        out.at(c, y, xx) = (1.0 - a.w1) * top + a.w1 * bot;
      }
    }
  return out;
}

GridTensor resize_bilinear_backward(const GridTensor& grad_out, int64_t in_h, int64_t in_w) {
  const int64_t C = grad_out.dim(0), out_h = grad_out.dim(1), out_w = grad_out.dim(2);
  if (in_h == out_h && in_w == out_w) return grad_out;
  const auto ty = bilinear_taps(in_h, out_h), tx = bilinear_taps(in_w, out_w);
  GridTensor out({C, in_h, in_w});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < out_h; ++y) {
      const Tap& a = ty[static_cast<size_t>(y)];
      for (int64_t xx = 0; xx < out_w; ++xx) {
        const Tap& b = tx[static_cast<size_t>(xx)];
        const double g = grad_out.at(c, y, xx);
        out.at(c, a.i0, b.i0) += (1.0 - a.w1) * (1.0 - b.w1) * g;
        out.at(c, a.i0, b.i1) += (1.0 - a.w1) * b.w1 * g;
        out.at(c, a.i1, b.i0) += a.w1 * (1.0 - b.w1) * g;
        out.at(c, a.i1, b.i1) += a.w1 * b.w1 * g;
      }
    }
  return out;
}

GridTensor add(const GridTensor& a, const GridTensor& b) {
  GridTensor out = a;
  out.add_(b);
  return out;
}

GridTensor Conv2dNode::forward(const GridTensor& x, const GridTensor& weight, const GridTensor& bias) {
  input_ = x;
  weight_ = weight;
  return conv2d(x, weight, bias, groups_);
}

Conv2dGrads Conv2dNode::backward(const GridTensor& grad_out) const {
  if (!input_) throw std::logic_error("conv2d backward called without a recorded forward");
  return conv2d_backward(*input_, *weight_, grad_out, groups_);
}

GridTensor ReluNode::forward(const GridTensor& x) {
  input_ = x;
  return relu(x);
}

GridTensor ReluNode::backward(const GridTensor& grad_out) const {
  if (!input_) throw std::logic_error("relu backward called without a recorded forward");
  return relu_backward(*input_, grad_out);
}

GridTensor SigmoidNode::forward(const GridTensor& x) {
  output_ = sigmoid(x);
  return *output_;
}

GridTensor SigmoidNode::backward(const GridTensor& grad_out) const {
  if (!output_) throw std::logic_error("sigmoid backward called without a recorded forward");
  return sigmoid_backward(*output_, grad_out);
}

GridTensor ConcatNode::forward(std::span<const GridTensor> xs) {
  GridTensor out = concat_channels(xs);
  std::vector<int64_t> counts;
  for (const auto& t : xs) counts.push_back(t.dim(0));
  counts_ = std::move(counts);
  return out;
}

std::vector<GridTensor> ConcatNode::backward(const GridTensor& grad_out) const {
  if (!counts_) throw std::logic_error("concat backward called without a recorded forward");
  return split_channels(grad_out, *counts_);
}

}  // namespace sodar
