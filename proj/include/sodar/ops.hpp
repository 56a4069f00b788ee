#pragma once

#include <optional>
#include <span>
#include <vector>

#include "sodar/tensor.hpp"

namespace sodar {

// Stride-1 "same" convolution. Kernel must be odd; padding is kernel / 2 and
// samples outside the input are zero.
struct ConvSpec {
  int64_t in_channels = 1;
  int64_t out_channels = 1;
  int64_t kernel = 3;
  int64_t groups = 1;

  int64_t padding() const { return kernel / 2; }
  Shape weight_shape() const { return {out_channels, in_channels / groups, kernel, kernel}; }
  Shape bias_shape() const { return {out_channels}; }
  void validate() const;
};

ConvSpec conv_spec_of(const GridTensor& weight, int64_t groups = 1);

// x: [Cin, H, W], weight: [Cout, Cin / groups, k, k], bias: [Cout].
GridTensor conv2d(const GridTensor& x, const GridTensor& weight, const GridTensor& bias,
                  int64_t groups = 1);

struct Conv2dGrads {
  GridTensor input;
  GridTensor weight;
  GridTensor bias;
};
Conv2dGrads conv2d_backward(const GridTensor& x, const GridTensor& weight,
                            const GridTensor& grad_out, int64_t groups = 1);

GridTensor relu(const GridTensor& x);
GridTensor relu_backward(const GridTensor& x, const GridTensor& grad_out);

double sigmoid(double v);
GridTensor sigmoid(const GridTensor& x);
// Takes the forward output y = sigmoid(x).
GridTensor sigmoid_backward(const GridTensor& y, const GridTensor& grad_out);

// Stacks [Ci, H, W] tensors along the channel axis in argument order.
GridTensor concat_channels(std::span<const GridTensor> xs);
std::vector<GridTensor> split_channels(const GridTensor& x, std::span<const int64_t> counts);

// 2x2 average pooling with stride 2; H and W must be even.
GridTensor avg_pool2(const GridTensor& x);
GridTensor avg_pool2_backward(const GridTensor& grad_out);

// Bilinear resampling of [C, H, W] to [C, out_h, out_w] using half-pixel
// centres with edge clamping.
GridTensor resize_bilinear(const GridTensor& x, int64_t out_h, int64_t out_w);
GridTensor resize_bilinear_backward(const GridTensor& grad_out, int64_t in_h, int64_t in_w);

GridTensor add(const GridTensor& a, const GridTensor& b);

// Recorded nodes keep the inputs of their last forward call so that
// backward can be evaluated later. Calling backward first throws
// std::logic_error.

class Conv2dNode {
 public:
  Conv2dNode() = default;
  explicit Conv2dNode(int64_t groups) : groups_(groups) {}
  GridTensor forward(const GridTensor& x, const GridTensor& weight, const GridTensor& bias);
  Conv2dGrads backward(const GridTensor& grad_out) const;
  bool recorded() const { return input_.has_value(); }

 private:
  int64_t groups_ = 1;
  std::optional<GridTensor> input_;
  std::optional<GridTensor> weight_;
};

class ReluNode {
 public:
  GridTensor forward(const GridTensor& x);
  GridTensor backward(const GridTensor& grad_out) const;

 private:
  std::optional<GridTensor> input_;
};

class SigmoidNode {
 public:
  GridTensor forward(const GridTensor& x);
  GridTensor backward(const GridTensor& grad_out) const;

 private:
  std::optional<GridTensor> output_;
};

class ConcatNode {
 public:
  GridTensor forward(std::span<const GridTensor> xs);
  std::vector<GridTensor> backward(const GridTensor& grad_out) const;

 private:
  std::optional<std::vector<int64_t>> counts_;
};

}  // namespace sodar
