#include "derefl/nn/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

#include <Eigen/Dense>

namespace derefl::nn {

namespace {

std::atomic<std::int64_t> g_seq{0};
thread_local int g_no_grad_depth = 0;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::MatrixXd;

Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backprop) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  bool needs = false;
  if (grad_enabled())
    for (const Var& in : inputs)
      if (in->requires_grad) { needs = true; break; }
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backprop = std::move(backprop);
  }
  return node;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  require(a->value.same_shape(b->value), Errc::shape_mismatch,
          std::string(op) + ": operand shapes differ");
}

void check_chw(const Var& x, const char* op) {
  require(x->value.ndim() == 3, Errc::shape_mismatch, std::string(op) + ": expected a CHW tensor");
}

}  // namespace

void Node::ensure_grad() {
  if (!grad.defined()) grad = Tensor::zeros(value.shape());
}

void Node::accumulate(const Tensor& g) {
  ensure_grad();
  grad.add_scaled(g, 1.0);
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  return node;
}

Var param(Tensor value) {
  Var node = constant(std::move(value));
  node->requires_grad = true;
  return node;
}

Var detach(const Var& v) { return constant(v->value); }

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

void backward(const Var& loss) {
  require(loss->value.size() == 1, Errc::shape_mismatch, "backward() root must be scalar");
  if (!loss->requires_grad) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{loss.get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (const Var& in : n->inputs)
      if (in->requires_grad) stack.push_back(in.get());
  }
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->seq > b->seq; });

  loss->ensure_grad();
  loss->grad.fill(1.0);
  for (Node* n : order)
    if (n->backprop && n->grad.defined()) n->backprop(*n);
}

void zero_grad(const std::vector<Var>& params) {
  for (const Var& p : params) p->grad = Tensor();
}

// ---------------------------------------------------------------------------
// elementwise

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out = a->value.clone();
  out.add_scaled(b->value, 1.0);
  return make_node(std::move(out), {a, b}, [](Node& n) {
    if (n.inputs[0]->requires_grad) n.inputs[0]->accumulate(n.grad);
    if (n.inputs[1]->requires_grad) n.inputs[1]->accumulate(n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a->value.clone();
  out.add_scaled(b->value, -1.0);
  return make_node(std::move(out), {a, b}, [](Node& n) {
    if (n.inputs[0]->requires_grad) n.inputs[0]->accumulate(n.grad);
    if (n.inputs[1]->requires_grad) {
      n.inputs[1]->ensure_grad();
      n.inputs[1]->grad.add_scaled(n.grad, -1.0);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a->value.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
  return make_node(std::move(out), {a, b}, [](Node& nn) {
    const std::int64_t m = nn.value.size();
    Node& a = *nn.inputs[0];
    Node& b = *nn.inputs[1];
    if (a.requires_grad) {
      a.ensure_grad();
      for (std::int64_t i = 0; i < m; ++i) a.grad[i] += nn.grad[i] * b.value[i];
    }
    if (b.requires_grad) {
      b.ensure_grad();
      for (std::int64_t i = 0; i < m; ++i) b.grad[i] += nn.grad[i] * a.value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a->value.clone();
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] *= s;
  return make_node(std::move(out), {a}, [s](Node& nn) {
    nn.inputs[0]->ensure_grad();
    nn.inputs[0]->grad.add_scaled(nn.grad, s);
  });
}

Var add_all(const std::vector<Var>& terms) {
  require(!terms.empty(), Errc::invalid_size, "add_all of nothing");
  Tensor out = terms[0]->value.clone();
  for (std::size_t i = 1; i < terms.size(); ++i) {
    check_same_shape(terms[0], terms[i], "add_all");
    out.add_scaled(terms[i]->value, 1.0);
  }
  return make_node(std::move(out), terms, [](Node& nn) {
    for (Var& in : nn.inputs)
      if (in->requires_grad) in->accumulate(nn.grad);
  });
}

Var relu(const Var& x) {
  Tensor out = x->value.clone();
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  return make_node(std::move(out), {x}, [](Node& nn) {
    Node& in = *nn.inputs[0];
    in.ensure_grad();
    const std::int64_t m = nn.value.size();
    for (std::int64_t i = 0; i < m; ++i)
      if (in.value[i] > 0.0) in.grad[i] += nn.grad[i];
  });
}

Var leaky_relu(const Var& x, double slope) {
  Tensor out = x->value.clone();
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = out[i] > 0.0 ? out[i] : slope * out[i];
  return make_node(std::move(out), {x}, [slope](Node& nn) {
    Node& in = *nn.inputs[0];
    in.ensure_grad();
    const std::int64_t m = nn.value.size();
    for (std::int64_t i = 0; i < m; ++i)
      in.grad[i] += nn.grad[i] * (in.value[i] > 0.0 ? 1.0 : slope);
  });
}

Var sigmoid(const Var& x) {
  Tensor out(x->value.shape());
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = 1.0 / (1.0 + std::exp(-x->value[i]));
  Tensor cached = out;  // shares storage
  return make_node(std::move(out), {x}, [cached](Node& nn) {
    Node& in = *nn.inputs[0];
    in.ensure_grad();
    const std::int64_t m = nn.value.size();
    for (std::int64_t i = 0; i < m; ++i)
      in.grad[i] += nn.grad[i] * cached[i] * (1.0 - cached[i]);
  });
}

Var dropout(const Var& x, double p, Rng& rng) {
  require(p >= 0.0 && p < 1.0, Errc::bad_config, "dropout p must be in [0,1)");
  if (p == 0.0) return x;
  const std::int64_t n = x->value.size();
  auto mask = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n));
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor out(x->value.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    (*mask)[i] = rng.uniform() < p ? 0.0 : keep_scale;
    out[i] = x->value[i] * (*mask)[i];
  }
  return make_node(std::move(out), {x}, [mask](Node& nn) {
    Node& in = *nn.inputs[0];
    in.ensure_grad();
    const std::int64_t m = nn.value.size();
    for (std::int64_t i = 0; i < m; ++i) in.grad[i] += nn.grad[i] * (*mask)[i];
  });
}

Var channel_affine(const Var& x, const Tensor& scale_c, const Tensor& shift_c) {
  check_chw(x, "channel_affine");
  const int c = x->value.dim(0);
  require(scale_c.size() == c && shift_c.size() == c, Errc::shape_mismatch,
          "channel_affine coefficient length != channels");
  const std::int64_t plane = static_cast<std::int64_t>(x->value.dim(1)) * x->value.dim(2);
  Tensor out(x->value.shape());
  for (int ch = 0; ch < c; ++ch)
    for (std::int64_t i = 0; i < plane; ++i)
      out[ch * plane + i] = x->value[ch * plane + i] * scale_c[ch] + shift_c[ch];
  return make_node(std::move(out), {x}, [scale_c, plane, c](Node& nn) {
    Node& in = *nn.inputs[0];
    in.ensure_grad();
    for (int ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i < plane; ++i)
        in.grad[ch * plane + i] += nn.grad[ch * plane + i] * scale_c[ch];
  });
}

// ---------------------------------------------------------------------------
// conv2d via im2col + GEMM

namespace {

void im2col(const Tensor& x, int kh, int kw, int stride, int pad, int oh, int ow, ColMat& cols) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const double* src = x.data();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      double* col = cols.data() + static_cast<std::ptrdiff_t>(oy * ow + ox) * cols.rows();
      std::ptrdiff_t k = 0;
      for (int ci = 0; ci < c; ++ci) {
        const double* plane = src + static_cast<std::ptrdiff_t>(ci) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
          const int y = oy * stride - pad + ky;
          for (int kx = 0; kx < kw; ++kx, ++k) {
            const int xx = ox * stride - pad + kx;
            col[k] = (y >= 0 && y < h && xx >= 0 && xx < w) ? plane[y * w + xx] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_accumulate(const ColMat& dcols, int c, int h, int w, int kh, int kw, int stride,
                       int pad, int oh, int ow, double* dst) {
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const double* col = dcols.data() + static_cast<std::ptrdiff_t>(oy * ow + ox) * dcols.rows();
      std::ptrdiff_t k = 0;
      for (int ci = 0; ci < c; ++ci) {
        double* plane = dst + static_cast<std::ptrdiff_t>(ci) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
          const int y = oy * stride - pad + ky;
          for (int kx = 0; kx < kw; ++kx, ++k) {
            const int xx = ox * stride - pad + kx;
            if (y >= 0 && y < h && xx >= 0 && xx < w) plane[y * w + xx] += col[k];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  check_chw(x, "conv2d");
  require(w->value.ndim() == 4, Errc::shape_mismatch, "conv2d: weight must be OIHW");
  const int c = x->value.dim(0), h = x->value.dim(1), ww = x->value.dim(2);
  const int o = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
  require(w->value.dim(1) == c, Errc::shape_mismatch,
          "conv2d: input has " + std::to_string(c) + " channels, weight expects " +
              std::to_string(w->value.dim(1)));
  require(b->value.size() == o, Errc::shape_mismatch, "conv2d: bias length != out channels");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (ww + 2 * pad - kw) / stride + 1;
  require(oh > 0 && ow > 0, Errc::shape_mismatch, "conv2d: kernel larger than padded input");

  const int K = c * kh * kw;
  const std::int64_t N = static_cast<std::int64_t>(oh) * ow;
  auto cols = std::make_shared<ColMat>(K, N);
  im2col(x->value, kh, kw, stride, pad, oh, ow, *cols);

  Tensor out({o, oh, ow});
  Eigen::Map<RowMat> ym(out.data(), o, N);
  Eigen::Map<const RowMat> wm(w->value.data(), o, K);
  ym.noalias() = wm * (*cols);
  ym.colwise() += Eigen::Map<const Eigen::VectorXd>(b->value.data(), o);

  auto grad_fn = [cols, c, h, ww, o, kh, kw, stride, pad, oh, ow, K, N](Node& nn) {
    Node& xi = *nn.inputs[0];
    Node& wi = *nn.inputs[1];
    Node& bi = *nn.inputs[2];
    Eigen::Map<const RowMat> dy(nn.grad.data(), o, N);
    if (wi.requires_grad) {
      wi.ensure_grad();
      Eigen::Map<RowMat> dw(wi.grad.data(), o, K);
      dw.noalias() += dy * cols->transpose();
    }
    if (bi.requires_grad) {
      bi.ensure_grad();
      Eigen::Map<Eigen::VectorXd> db(bi.grad.data(), o);
      db.noalias() += dy.rowwise().sum();
    }
    if (xi.requires_grad) {
      xi.ensure_grad();
      Eigen::Map<const RowMat> wm2(wi.value.data(), o, K);
      ColMat dcols = wm2.transpose() * dy;
      col2im_accumulate(dcols, c, h, ww, kh, kw, stride, pad, oh, ow, xi.grad.data());
    }
  };
  return make_node(std::move(out), {x, w, b}, std::move(grad_fn));
}

// ---------------------------------------------------------------------------
// spatial

Var maxpool2(const Var& x) {
  check_chw(x, "maxpool2");
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  require(h % 2 == 0 && w % 2 == 0, Errc::shape_mismatch, "maxpool2 needs even spatial dims");
  const int oh = h / 2, ow = w / 2;
  Tensor out({c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        std::int64_t best = -1;
        double bv = -1e300;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            std::int64_t idx = (static_cast<std::int64_t>(ci) * h + (2 * y + dy)) * w + 2 * xx + dx;
            if (x->value[idx] > bv) { bv = x->value[idx]; best = idx; }
          }
        std::int64_t oidx = (static_cast<std::int64_t>(ci) * oh + y) * ow + xx;
        out[oidx] = bv;
        (*argmax)[oidx] = best;
      }
  return make_node(std::move(out), {x}, [argmax](Node& nn) {
    Node& in = *nn.inputs[0];
    in.ensure_grad();
    const std::int64_t m = nn.value.size();
    for (std::int64_t i = 0; i < m; ++i) in.grad[(*argmax)[i]] += nn.grad[i];
  });
}

Var upsample_nearest2(const Var& x) {
  check_chw(x, "upsample_nearest2");
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx)
        out[(static_cast<std::int64_t>(ci) * 2 * h + y) * 2 * w + xx] =
            x->value[(static_cast<std::int64_t>(ci) * h + y / 2) * w + xx / 2];
  return make_node(std::move(out), {x}, [c, h, w](Node& nn) {
    Node& in = *nn.inputs[0];
    in.ensure_grad();
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx)
          in.grad[(static_cast<std::int64_t>(ci) * h + y / 2) * w + xx / 2] +=
              nn.grad[(static_cast<std::int64_t>(ci) * 2 * h + y) * 2 * w + xx];
  });
}

Var concat_channels(const Var& a, const Var& b) {
  check_chw(a, "concat_channels");
  check_chw(b, "concat_channels");
  require(a->value.dim(1) == b->value.dim(1) && a->value.dim(2) == b->value.dim(2),
          Errc::shape_mismatch, "concat_channels: spatial shapes differ");
  const int ca = a->value.dim(0), cb = b->value.dim(0);
  const int h = a->value.dim(1), w = a->value.dim(2);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  Tensor out({ca + cb, h, w});
  std::copy_n(a->value.data(), ca * plane, out.data());
  std::copy_n(b->value.data(), cb * plane, out.data() + ca * plane);
  return make_node(std::move(out), {a, b}, [ca, cb, plane](Node& nn) {
    Node& ai = *nn.inputs[0];
    Node& bi = *nn.inputs[1];
    if (ai.requires_grad) {
      ai.ensure_grad();
      for (std::int64_t i = 0; i < ca * plane; ++i) ai.grad[i] += nn.grad[i];
    }
    if (bi.requires_grad) {
      bi.ensure_grad();
      for (std::int64_t i = 0; i < cb * plane; ++i) bi.grad[i] += nn.grad[ca * plane + i];
    }
  });
}

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  check_chw(x, "instance_norm");
  const int c = x->value.dim(0);
  require(gamma->value.size() == c && beta->value.size() == c, Errc::shape_mismatch,
          "instance_norm: affine parameter length != channels");
  const std::int64_t plane = static_cast<std::int64_t>(x->value.dim(1)) * x->value.dim(2);

  auto mu = std::make_shared<std::vector<double>>(c);
  auto rstd = std::make_shared<std::vector<double>>(c);
  Tensor out(x->value.shape());
  for (int ci = 0; ci < c; ++ci) {
    const double* xp = x->value.data() + ci * plane;
    double m = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) m += xp[i];
    m /= static_cast<double>(plane);
    double v = 0.0;
    for (std::int64_t i = 0; i < plane; ++i) v += (xp[i] - m) * (xp[i] - m);
    v /= static_cast<double>(plane);
    const double rs = 1.0 / std::sqrt(v + eps);
    (*mu)[ci] = m;
    (*rstd)[ci] = rs;
    double* op = out.data() + ci * plane;
    const double g = gamma->value[ci], bb = beta->value[ci];
    for (std::int64_t i = 0; i < plane; ++i) op[i] = (xp[i] - m) * rs * g + bb;
  }

  return make_node(std::move(out), {x, gamma, beta}, [mu, rstd, c, plane](Node& nn) {
    Node& xi = *nn.inputs[0];
    Node& gi = *nn.inputs[1];
    Node& bi = *nn.inputs[2];
    for (int ci = 0; ci < c; ++ci) {
      const double* xp = xi.value.data() + ci * plane;
      const double* dyp = nn.grad.data() + ci * plane;
      const double m = (*mu)[ci], rs = (*rstd)[ci];
      const double g = gi.value[ci];

      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::int64_t i = 0; i < plane; ++i) {
        const double xhat = (xp[i] - m) * rs;
        sum_dy += dyp[i];
        sum_dy_xhat += dyp[i] * xhat;
      }
      if (gi.requires_grad) {
        gi.ensure_grad();
        gi.grad[ci] += sum_dy_xhat;
      }
      if (bi.requires_grad) {
        bi.ensure_grad();
        bi.grad[ci] += sum_dy;
      }
      if (xi.requires_grad) {
        xi.ensure_grad();
        double* dxp = xi.grad.data() + ci * plane;
        const double mean_dy = sum_dy / static_cast<double>(plane);
        const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(plane);
        for (std::int64_t i = 0; i < plane; ++i) {
          const double xhat = (xp[i] - m) * rs;
          dxp[i] += g * rs * (dyp[i] - mean_dy - xhat * mean_dy_xhat);
        }
      }
    }
  });
}

namespace {
// Edge-inclusive mirror for a single fold; callers guarantee pad <= extent.
inline int mirror(int i, int n) { return i < 0 ? -1 - i : (i >= n ? 2 * n - 1 - i : i); }
}  // namespace

Var pad_reflect(const Var& x, int top, int bottom, int left, int right) {
  check_chw(x, "pad_reflect");
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  require(top <= h && bottom <= h && left <= w && right <= w, Errc::shape_mismatch,
          "pad_reflect: pad exceeds source extent");
  const int oh = h + top + bottom, ow = w + left + right;
  Tensor out({c, oh, ow});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < oh; ++y) {
      const int sy = mirror(y - top, h);
      for (int xx = 0; xx < ow; ++xx)
        out[(static_cast<std::int64_t>(ci) * oh + y) * ow + xx] =
            x->value[(static_cast<std::int64_t>(ci) * h + sy) * w + mirror(xx - left, w)];
    }
  return make_node(std::move(out), {x}, [c, h, w, top, left, oh, ow](Node& nn) {
    Node& in = *nn.inputs[0];
    in.ensure_grad();
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < oh; ++y) {
        const int sy = mirror(y - top, h);
        for (int xx = 0; xx < ow; ++xx)
          in.grad[(static_cast<std::int64_t>(ci) * h + sy) * w + mirror(xx - left, w)] +=
              nn.grad[(static_cast<std::int64_t>(ci) * oh + y) * ow + xx];
      }
  });
}

Var crop2d(const Var& x, int top, int left, int out_h, int out_w) {
  check_chw(x, "crop2d");
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  require(top >= 0 && left >= 0 && top + out_h <= h && left + out_w <= w, Errc::shape_mismatch,
          "crop2d: window out of bounds");
  Tensor out({c, out_h, out_w});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < out_h; ++y)
      for (int xx = 0; xx < out_w; ++xx)
        out[(static_cast<std::int64_t>(ci) * out_h + y) * out_w + xx] =
            x->value[(static_cast<std::int64_t>(ci) * h + top + y) * w + left + xx];
  return make_node(std::move(out), {x}, [c, h, w, top, left, out_h, out_w](Node& nn) {
    Node& in = *nn.inputs[0];
    in.ensure_grad();
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < out_h; ++y)
        for (int xx = 0; xx < out_w; ++xx)
          in.grad[(static_cast<std::int64_t>(ci) * h + top + y) * w + left + xx] +=
              nn.grad[(static_cast<std::int64_t>(ci) * out_h + y) * out_w + xx];
  });
}

Var diff_x(const Var& x) {
  check_chw(x, "diff_x");
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  Tensor out({c, h, w});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx + 1 < w; ++xx) {
        std::int64_t i = (static_cast<std::int64_t>(ci) * h + y) * w + xx;
        out[i] = x->value[i + 1] - x->value[i];
      }
  return make_node(std::move(out), {x}, [c, h, w](Node& nn) {
    Node& in = *nn.inputs[0];
    in.ensure_grad();
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx + 1 < w; ++xx) {
          std::int64_t i = (static_cast<std::int64_t>(ci) * h + y) * w + xx;
          in.grad[i + 1] += nn.grad[i];
          in.grad[i] -= nn.grad[i];
        }
  });
}

Var diff_y(const Var& x) {
  check_chw(x, "diff_y");
  const int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
  Tensor out({c, h, w});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y + 1 < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        std::int64_t i = (static_cast<std::int64_t>(ci) * h + y) * w + xx;
        out[i] = x->value[i + w] - x->value[i];
      }
  return make_node(std::move(out), {x}, [c, h, w](Node& nn) {
    Node& in = *nn.inputs[0];
    in.ensure_grad();
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y + 1 < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          std::int64_t i = (static_cast<std::int64_t>(ci) * h + y) * w + xx;
          in.grad[i + w] += nn.grad[i];
          in.grad[i] -= nn.grad[i];
        }
  });
}

// ---------------------------------------------------------------------------
// reductions

Var mse_loss(const Var& a, const Var& b) {
  check_same_shape(a, b, "mse_loss");
  const std::int64_t n = a->value.size();
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = a->value[i] - b->value[i];
    s += d * d;
  }
  Tensor out = Tensor::scalar(s / static_cast<double>(n));
  return make_node(std::move(out), {a, b}, [n](Node& nn) {
    Node& ai = *nn.inputs[0];
    Node& bi = *nn.inputs[1];
    const double g = nn.grad[0] * 2.0 / static_cast<double>(n);
    if (ai.requires_grad) ai.ensure_grad();
    if (bi.requires_grad) bi.ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) {
      const double d = g * (ai.value[i] - bi.value[i]);
      if (ai.requires_grad) ai.grad[i] += d;
      if (bi.requires_grad) bi.grad[i] -= d;
    }
  });
}

Var l1_loss(const Var& a, const Var& b) {
  check_same_shape(a, b, "l1_loss");
  const std::int64_t n = a->value.size();
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += std::abs(a->value[i] - b->value[i]);
  Tensor out = Tensor::scalar(s / static_cast<double>(n));
  return make_node(std::move(out), {a, b}, [n](Node& nn) {
    Node& ai = *nn.inputs[0];
    Node& bi = *nn.inputs[1];
    const double g = nn.grad[0] / static_cast<double>(n);
    if (ai.requires_grad) ai.ensure_grad();
    if (bi.requires_grad) bi.ensure_grad();
    for (std::int64_t i = 0; i < n; ++i) {
      const double d = ai.value[i] - bi.value[i];
      const double sgn = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      if (ai.requires_grad) ai.grad[i] += g * sgn;
      if (bi.requires_grad) bi.grad[i] -= g * sgn;
    }
  });
}

Var bce_with_logits(const Var& logits, double target) {
  const std::int64_t n = logits->value.size();
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = logits->value[i];
    // softplus(x) - t*x, computed stably
    s += std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))) - target * x;
  }
  Tensor out = Tensor::scalar(s / static_cast<double>(n));
  return make_node(std::move(out), {logits}, [n, target](Node& nn) {
    Node& in = *nn.inputs[0];
    in.ensure_grad();
    const double g = nn.grad[0] / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      const double sig = 1.0 / (1.0 + std::exp(-in.value[i]));
      in.grad[i] += g * (sig - target);
    }
  });
}

Var mean_all(const Var& x) {
  const std::int64_t n = x->value.size();
  double s = 0.0;
  for (std::int64_t i = 0; i < n; ++i) s += x->value[i];
  Tensor out = Tensor::scalar(s / static_cast<double>(n));
  return make_node(std::move(out), {x}, [n](Node& nn) {
    Node& in = *nn.inputs[0];
    in.ensure_grad();
    const double g = nn.grad[0] / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) in.grad[i] += g;
  });
}

}  // namespace derefl::nn
