#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "invertfill/tensor.hpp"

// Tape-free reverse-mode differentiation over Tensor values. Every op records its
// parents and a closure that pushes the output gradient back into them; backward()
// walks the graph in reverse topological order.
namespace invertfill::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  // Gradient storage, zero-initialized on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;

  static Var constant(Tensor value);
  static Var parameter(Tensor value);
  static Var from_node(std::shared_ptr<Node> node);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& grad_buffer() { return node_->grad_buffer(); }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  std::size_t numel() const { return node_->value.numel(); }
  double item() const;

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  void zero_grad() { node_->grad = Tensor(); }

  const std::shared_ptr<Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Seeds d(root)/d(root) = 1 and accumulates gradients into every reachable leaf that
// requires them. root must hold exactly one element.
void backward(const Var& root);

bool grad_enabled() noexcept;

// While alive, ops on this thread record no graph (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

Var detach(const Var& a);

// Elementwise; operands must share a shape.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_scalar(const Var& a, double c);
Var scale(const Var& a, double c);
Var square(const Var& a);
Var abs(const Var& a);
// sqrt with derivative 0 at exactly 0.
Var sqrt(const Var& a);
Var tanh(const Var& a);
Var leaky_relu(const Var& a, double slope = 0.2, double gain = 1.0);
Var relu(const Var& a);
Var softplus(const Var& a);

// Reductions to a one-element tensor.
Var sum(const Var& a);
Var mean(const Var& a);

Var reshape(const Var& a, Shape shape);

// x [B,In], weight [Out,In], bias [Out] (optional). The effective weight is
// weight * weight_gain and the effective bias is bias * bias_gain.
Var linear(const Var& x, const Var& weight, const Var& bias, double weight_gain = 1.0, double bias_gain = 1.0);

// x [B,C,H,W], weight [O,C,k,k], bias [O] (optional).
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad, double weight_gain = 1.0);

// x [B,C,...] + bias[C] * gain.
Var add_channel_bias(const Var& x, const Var& bias, double gain = 1.0);
// x [B,C,H,W] * s [B,C] broadcast over space.
Var scale_channels(const Var& x, const Var& s);
// x * s where s holds one element.
Var scale_by(const Var& x, const Var& s);

// Weight demodulation coefficients for a style-modulated convolution:
// d[b,o] = 1 / sqrt(sum_c s[b,c]^2 * sum_k (gain * w[o,c,k])^2 + eps).
Var demodulation(const Var& styles, const Var& weight, double weight_gain, double eps = 1e-8);

Var upsample_nearest(const Var& x, int factor = 2);
// Area-averaging downsample by an integer factor.
Var area_downsample(const Var& x, int factor);
// Repeats a [1,...] tensor along the leading dimension.
Var broadcast_batch(const Var& x, int batch);
// Repeats a [D] tensor into [B,D].
Var broadcast_rows(const Var& row, int batch);
Var concat_channels(const Var& a, const Var& b);

// Per-row normalization of x [B,D]: (x - mean) / sqrt(var + eps), population variance.
Var row_instance_norm(const Var& x, double eps);

// Channel Gram matrices of x [B,C,H,W], normalized by C*H*W: [B,C,C].
Var gram(const Var& x);

// Mean absolute difference over all horizontally and vertically adjacent pixel pairs
// of x [B,C,H,W]; the pair count is B*C*(H*(W-1) + (H-1)*W).
Var total_variation(const Var& x);

}  // namespace invertfill::ag
