#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "derefl/nn/tensor.hpp"
#include "derefl/rng.hpp"

namespace derefl::nn {

struct Node;
using Var = std::shared_ptr<Node>;

// One value in a define-by-run graph. Creation order doubles as a topological
// order for the backward sweep.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::int64_t seq = 0;
  std::vector<Var> inputs;
  std::function<void(Node&)> backprop;

  void accumulate(const Tensor& g);
  void ensure_grad();
};

Var constant(Tensor value);
Var param(Tensor value);  // leaf with requires_grad
Var detach(const Var& v);

// While a guard is alive, ops produce constants: no graph, intermediates are
// freed as soon as they go out of scope.
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

// Reverse sweep from a scalar root; accumulates into every reachable
// requires_grad node.
void backward(const Var& loss);
void zero_grad(const std::vector<Var>& params);

// ---- elementwise / structural ops ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_all(const std::vector<Var>& terms);

Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var sigmoid(const Var& x);
Var dropout(const Var& x, double p, Rng& rng);  // inverted scaling

// per-channel y = x * scale[c] + shift[c] with constant coefficients
Var channel_affine(const Var& x, const Tensor& scale_c, const Tensor& shift_c);

// ---- spatial ops on CHW tensors ----
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var maxpool2(const Var& x);
Var upsample_nearest2(const Var& x);
Var concat_channels(const Var& a, const Var& b);
Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var pad_reflect(const Var& x, int top, int bottom, int left, int right);  // edge-inclusive mirror
Var crop2d(const Var& x, int top, int left, int out_h, int out_w);

// forward differences, zero at the last column / row
Var diff_x(const Var& x);
Var diff_y(const Var& x);

// ---- reductions (scalar results, mean over elements) ----
Var mse_loss(const Var& a, const Var& b);
Var l1_loss(const Var& a, const Var& b);
Var bce_with_logits(const Var& logits, double target);
Var mean_all(const Var& x);

inline double scalar_value(const Var& v) { return v->value.item(); }

}  // namespace derefl::nn
