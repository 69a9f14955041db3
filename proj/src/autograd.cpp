#include "invertfill/autograd.hpp"

#include <cmath>
#include <unordered_set>

#include "invertfill/error.hpp"
#include "invertfill/kernels.hpp"

namespace invertfill::ag {

namespace {

thread_local bool t_grad_enabled = true;

using NodePtr = std::shared_ptr<Node>;

// Builds an op node. When no parent requires a gradient (or recording is off) the
// node is a plain constant and the closure is dropped.
Var make(Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  if (t_grad_enabled) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(fn);
  }
  return Var::from_node(std::move(node));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidInput(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                       shape_string(b.shape()));
  }
}

void require_rank(const Var& a, int rank, const char* op) {
  if (a.value().rank() != rank) {
    throw InvalidInput(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                       shape_string(a.shape()));
  }
}

// Elementwise unary op with derivative expressed through (input, output).
template <typename F, typename D>
Var unary(const Var& a, F f, D df) {
  Tensor out(a.shape());
  const auto& x = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(x[i]);
  return make(std::move(out), {a.node()}, [df](Node& self) {
    Node& p = *self.parents[0];
    Tensor& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * df(p.value[i], self.value[i]);
  });
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty() && !value.empty()) grad = Tensor(value.shape());
  return grad;
}

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return from_node(std::move(node));
}

Var Var::parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return from_node(std::move(node));
}

Var Var::from_node(std::shared_ptr<Node> node) {
  Var v;
  v.node_ = std::move(node);
  return v;
}

double Var::item() const {
  if (numel() != 1) throw InvalidInput("item() on tensor of shape " + shape_string(shape()));
  return value()[0];
}

bool grad_enabled() noexcept { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void backward(const Var& root) {
  if (!root.defined() || root.numel() != 1) throw InvalidInput("backward() needs a one-element root");
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, bool>> stack{{root.node().get(), false}};
  while (!stack.empty()) {
    auto [node, expanded] = stack.back();
    stack.pop_back();
    if (expanded) {
      order.push_back(node);
      continue;
    }
    if (!seen.insert(node).second) continue;
    stack.push_back({node, true});
    for (const auto& p : node->parents) {
      if (p->requires_grad && !seen.count(p.get())) stack.push_back({p.get(), false});
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  // Interior gradients are not needed after the sweep.
  for (Node* n : order) {
    if (n->backward) n->grad = Tensor();
  }
}

Var detach(const Var& a) { return Var::constant(a.value()); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      Tensor& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      const double sign = k == 0 ? 1.0 : -1.0;
      Tensor& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      auto& p = self.parents[k];
      if (!p->requires_grad) continue;
      const Tensor& other = self.parents[1 - k]->value;
      Tensor& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += other[i] * self.grad[i];
    }
  });
}

Var add_scalar(const Var& a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var scale(const Var& a, double c) {
  return unary(a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var abs(const Var& a) {
  return unary(a, [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var sqrt(const Var& a) {
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var leaky_relu(const Var& a, double slope, double gain) {
  return unary(a, [=](double x) { return (x >= 0.0 ? x : slope * x) * gain; },
               [=](double x, double) { return (x >= 0.0 ? 1.0 : slope) * gain; });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softplus(const Var& a) {
  return unary(
      a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return make(Tensor({1}, s), {a.node()}, [](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    const double go = self.grad[0];
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += go;
  });
}

Var mean(const Var& a) {
  if (a.numel() == 0) throw InvalidInput("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make(std::move(out), {a.node()}, [](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias, double weight_gain, double bias_gain) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const int batch = x.dim(0), in = x.dim(1), out = weight.dim(0);
  if (weight.dim(1) != in) {
    throw InvalidInput("linear: input width " + std::to_string(in) + " vs weight " + shape_string(weight.shape()));
  }
  if (bias.defined() && bias.numel() != static_cast<std::size_t>(out)) throw InvalidInput("linear: bias size");

  Tensor y({batch, out});
  kernels::linear_forward(batch, in, out, x.value().values(), weight.value().values(), y.values());
  if (weight_gain != 1.0) {
    for (auto& v : y.values()) v *= weight_gain;
  }
  if (bias.defined()) {
    for (int b = 0; b < batch; ++b)
      for (int o = 0; o < out; ++o) y.at(b, o) += bias.value()[o] * bias_gain;
  }

  std::vector<NodePtr> parents{x.node(), weight.node()};
  if (bias.defined()) parents.push_back(bias.node());
  return make(std::move(y), std::move(parents), [=](Node& self) {
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    const Tensor& gy = self.grad;
    if (xn.requires_grad) {
      Tensor& gx = xn.grad_buffer();
      for (int b = 0; b < batch; ++b)
        for (int o = 0; o < out; ++o) {
          const double go = gy[long(b) * out + o] * weight_gain;
          if (go == 0.0) continue;
          const double* wr = wn.value.data() + long(o) * in;
          double* gxr = gx.data() + long(b) * in;
          for (int i = 0; i < in; ++i) gxr[i] += go * wr[i];
        }
    }
    if (wn.requires_grad) {
      Tensor& gw = wn.grad_buffer();
      for (int b = 0; b < batch; ++b)
        for (int o = 0; o < out; ++o) {
          const double go = gy[long(b) * out + o] * weight_gain;
          if (go == 0.0) continue;
          const double* xr = xn.value.data() + long(b) * in;
          double* gwr = gw.data() + long(o) * in;
          for (int i = 0; i < in; ++i) gwr[i] += go * xr[i];
        }
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      Tensor& gb = self.parents[2]->grad_buffer();
      for (int b = 0; b < batch; ++b)
        for (int o = 0; o < out; ++o) gb[o] += gy[long(b) * out + o] * bias_gain;
    }
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad, double weight_gain) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  if (weight.dim(1) != x.dim(1) || weight.dim(2) != weight.dim(3)) {
    throw InvalidInput("conv2d: weight " + shape_string(weight.shape()) + " incompatible with input " +
                       shape_string(x.shape()));
  }
  kernels::ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0), weight.dim(2), stride, pad};
  if (g.out_height() < 1 || g.out_width() < 1) throw InvalidInput("conv2d: empty output");

  Tensor w_eff = weight.value();
  if (weight_gain != 1.0) {
    for (auto& v : w_eff.values()) v *= weight_gain;
  }
  Tensor y({g.batch, g.out_channels, g.out_height(), g.out_width()});
  kernels::conv2d_forward(g, x.value().values(), w_eff.values(), y.values());
  if (bias.defined()) {
    const long plane = long(g.out_height()) * g.out_width();
    for (int b = 0; b < g.batch; ++b)
      for (int o = 0; o < g.out_channels; ++o) {
        double* yp = y.data() + (long(b) * g.out_channels + o) * plane;
        const double bo = bias.value()[o];
        for (long i = 0; i < plane; ++i) yp[i] += bo;
      }
  }

  std::vector<NodePtr> parents{x.node(), weight.node()};
  if (bias.defined()) parents.push_back(bias.node());
  return make(std::move(y), std::move(parents), [g, weight_gain, w_eff = std::move(w_eff)](Node& self) {
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    if (xn.requires_grad) kernels::conv2d_backward_input(g, self.grad.values(), w_eff.values(), xn.grad_buffer().values());
    if (wn.requires_grad) {
      Tensor gw(wn.value.shape());
      kernels::conv2d_backward_weight(g, xn.value.values(), self.grad.values(), gw.values());
      Tensor& acc = wn.grad_buffer();
      for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += gw[i] * weight_gain;
    }
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      Tensor& gb = self.parents[2]->grad_buffer();
      const long plane = long(g.out_height()) * g.out_width();
      for (int b = 0; b < g.batch; ++b)
        for (int o = 0; o < g.out_channels; ++o) {
          const double* gp = self.grad.data() + (long(b) * g.out_channels + o) * plane;
          double s = 0.0;
          for (long i = 0; i < plane; ++i) s += gp[i];
          gb[o] += s;
        }
    }
  });
}

Var add_channel_bias(const Var& x, const Var& bias, double gain) {
  if (x.value().rank() < 2 || bias.numel() != static_cast<std::size_t>(x.dim(1))) {
    throw InvalidInput("add_channel_bias: bias " + shape_string(bias.shape()) + " vs input " + shape_string(x.shape()));
  }
  const int batch = x.dim(0), channels = x.dim(1);
  const long plane = static_cast<long>(x.numel() / (static_cast<std::size_t>(batch) * channels));
  Tensor y = x.value();
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c) {
      double* yp = y.data() + (long(b) * channels + c) * plane;
      const double bc = bias.value()[c] * gain;
      for (long i = 0; i < plane; ++i) yp[i] += bc;
    }
  return make(std::move(y), {x.node(), bias.node()}, [=](Node& self) {
    if (self.parents[0]->requires_grad) {
      Tensor& g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      Tensor& gb = self.parents[1]->grad_buffer();
      for (int b = 0; b < batch; ++b)
        for (int c = 0; c < channels; ++c) {
          const double* gp = self.grad.data() + (long(b) * channels + c) * plane;
          double s = 0.0;
          for (long i = 0; i < plane; ++i) s += gp[i];
          gb[c] += s * gain;
        }
    }
  });
}

Var scale_channels(const Var& x, const Var& s) {
  require_rank(x, 4, "scale_channels");
  const int batch = x.dim(0), channels = x.dim(1);
  if (s.shape() != Shape{batch, channels}) {
    throw InvalidInput("scale_channels: scales " + shape_string(s.shape()) + " vs input " + shape_string(x.shape()));
  }
  const long plane = long(x.dim(2)) * x.dim(3);
  Tensor y = x.value();
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c) {
      double* yp = y.data() + (long(b) * channels + c) * plane;
      const double sc = s.value().at(b, c);
      for (long i = 0; i < plane; ++i) yp[i] *= sc;
    }
  return make(std::move(y), {x.node(), s.node()}, [=](Node& self) {
    Node& xn = *self.parents[0];
    Node& sn = *self.parents[1];
    for (int b = 0; b < batch; ++b)
      for (int c = 0; c < channels; ++c) {
        const long off = (long(b) * channels + c) * plane;
        const double* gp = self.grad.data() + off;
        if (xn.requires_grad) {
          double* gx = xn.grad_buffer().data() + off;
          const double sc = sn.value.at(b, c);
          for (long i = 0; i < plane; ++i) gx[i] += gp[i] * sc;
        }
        if (sn.requires_grad) {
          const double* xp = xn.value.data() + off;
          double acc = 0.0;
          for (long i = 0; i < plane; ++i) acc += gp[i] * xp[i];
          sn.grad_buffer().at(b, c) += acc;
        }
      }
  });
}

Var scale_by(const Var& x, const Var& s) {
  if (s.numel() != 1) throw InvalidInput("scale_by: scale must hold one element");
  Tensor y = x.value();
  const double sv = s.value()[0];
  for (auto& v : y.values()) v *= sv;
  return make(std::move(y), {x.node(), s.node()}, [](Node& self) {
    Node& xn = *self.parents[0];
    Node& sn = *self.parents[1];
    if (xn.requires_grad) {
      Tensor& g = xn.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * sn.value[0];
    }
    if (sn.requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < self.grad.numel(); ++i) acc += self.grad[i] * xn.value[i];
      sn.grad_buffer()[0] += acc;
    }
  });
}

Var demodulation(const Var& styles, const Var& weight, double weight_gain, double eps) {
  require_rank(styles, 2, "demodulation");
  require_rank(weight, 4, "demodulation");
  const int batch = styles.dim(0), in = styles.dim(1), out = weight.dim(0);
  if (weight.dim(1) != in) throw InvalidInput("demodulation: style width does not match weight");
  const int taps = weight.dim(2) * weight.dim(3);
  const double g2 = weight_gain * weight_gain;

  // power[o,c] = gain^2 * sum_k w[o,c,k]^2
  Tensor power({out, in});
  for (int o = 0; o < out; ++o)
    for (int c = 0; c < in; ++c) {
      const double* wp = weight.value().data() + (long(o) * in + c) * taps;
      double s = 0.0;
      for (int k = 0; k < taps; ++k) s += wp[k] * wp[k];
      power.at(o, c) = s * g2;
    }
  Tensor d({batch, out});
  for (int b = 0; b < batch; ++b)
    for (int o = 0; o < out; ++o) {
      double q = eps;
      for (int c = 0; c < in; ++c) {
        const double sc = styles.value().at(b, c);
        q += sc * sc * power.at(o, c);
      }
      d.at(b, o) = 1.0 / std::sqrt(q);
    }
  return make(std::move(d), {styles.node(), weight.node()},
              [=, power = std::move(power)](Node& self) {
                Node& sn = *self.parents[0];
                Node& wn = *self.parents[1];
                Tensor gq({batch, out});
                for (int b = 0; b < batch; ++b)
                  for (int o = 0; o < out; ++o) {
                    const double dv = self.value.at(b, o);
                    gq.at(b, o) = -0.5 * dv * dv * dv * self.grad.at(b, o);
                  }
                if (sn.requires_grad) {
                  Tensor& gs = sn.grad_buffer();
                  for (int b = 0; b < batch; ++b)
                    for (int c = 0; c < in; ++c) {
                      double acc = 0.0;
                      for (int o = 0; o < out; ++o) acc += gq.at(b, o) * power.at(o, c);
                      gs.at(b, c) += 2.0 * sn.value.at(b, c) * acc;
                    }
                }
                if (wn.requires_grad) {
                  Tensor& gw = wn.grad_buffer();
                  for (int o = 0; o < out; ++o)
                    for (int c = 0; c < in; ++c) {
                      double acc = 0.0;
                      for (int b = 0; b < batch; ++b) {
                        const double sc = sn.value.at(b, c);
                        acc += gq.at(b, o) * sc * sc;
                      }
                      const double coef = 2.0 * g2 * acc;
                      const long off = (long(o) * in + c) * taps;
                      for (int k = 0; k < taps; ++k) gw[off + k] += coef * wn.value[off + k];
                    }
                }
              });
}

Var upsample_nearest(const Var& x, int factor) {
  require_rank(x, 4, "upsample_nearest");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int oh = h * factor, ow = w * factor;
  Tensor y({b, c, oh, ow});
  const long planes = long(b) * c;
  for (long p = 0; p < planes; ++p) {
    const double* xp = x.value().data() + p * h * w;
    double* yp = y.data() + p * oh * ow;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) yp[long(i) * ow + j] = xp[long(i / factor) * w + j / factor];
  }
  return make(std::move(y), {x.node()}, [=](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (long p = 0; p < planes; ++p) {
      double* gp = g.data() + p * h * w;
      const double* gy = self.grad.data() + p * oh * ow;
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) gp[long(i / factor) * w + j / factor] += gy[long(i) * ow + j];
    }
  });
}

Var area_downsample(const Var& x, int factor) {
  require_rank(x, 4, "area_downsample");
  const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (factor < 1 || h % factor || w % factor) {
    throw InvalidInput("area_downsample: factor " + std::to_string(factor) + " does not divide " + shape_string(x.shape()));
  }
  if (factor == 1) return x;
  const int oh = h / factor, ow = w / factor;
  const double inv = 1.0 / (double(factor) * factor);
  Tensor y({b, c, oh, ow});
  const long planes = long(b) * c;
  for (long p = 0; p < planes; ++p) {
    const double* xp = x.value().data() + p * h * w;
    double* yp = y.data() + p * oh * ow;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) yp[long(i / factor) * ow + j / factor] += xp[long(i) * w + j] * inv;
  }
  return make(std::move(y), {x.node()}, [=](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (long p = 0; p < planes; ++p) {
      double* gp = g.data() + p * h * w;
      const double* gy = self.grad.data() + p * oh * ow;
      for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) gp[long(i) * w + j] += gy[long(i / factor) * ow + j / factor] * inv;
    }
  });
}

Var broadcast_batch(const Var& x, int batch) {
  if (x.value().rank() < 1 || x.dim(0) != 1) throw InvalidInput("broadcast_batch: leading dim must be 1");
  Shape s = x.shape();
  s[0] = batch;
  Tensor y(s);
  const std::size_t n = x.numel();
  for (int b = 0; b < batch; ++b) std::copy(x.value().data(), x.value().data() + n, y.data() + b * n);
  return make(std::move(y), {x.node()}, [=](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (int b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[b * n + i];
  });
}

Var broadcast_rows(const Var& row, int batch) {
  return reshape(broadcast_batch(reshape(row, {1, static_cast<int>(row.numel())}), batch),
                 {batch, static_cast<int>(row.numel())});
}

Var concat_channels(const Var& a, const Var& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw InvalidInput("concat_channels: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const int batch = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const long plane = long(a.dim(2)) * a.dim(3);
  Tensor y({batch, ca + cb, a.dim(2), a.dim(3)});
  for (int n = 0; n < batch; ++n) {
    std::copy_n(a.value().data() + n * ca * plane, ca * plane, y.data() + n * (ca + cb) * plane);
    std::copy_n(b.value().data() + n * cb * plane, cb * plane, y.data() + (n * (ca + cb) + ca) * plane);
  }
  return make(std::move(y), {a.node(), b.node()}, [=](Node& self) {
    for (int k = 0; k < 2; ++k) {
      Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      const int cp = k == 0 ? ca : cb;
      const int offset = k == 0 ? 0 : ca;
      Tensor& g = p.grad_buffer();
      for (int n = 0; n < batch; ++n) {
        const double* src = self.grad.data() + (n * (ca + cb) + offset) * plane;
        double* dst = g.data() + n * cp * plane;
        for (long i = 0; i < cp * plane; ++i) dst[i] += src[i];
      }
    }
  });
}

Var row_instance_norm(const Var& x, double eps) {
  require_rank(x, 2, "row_instance_norm");
  const int batch = x.dim(0), d = x.dim(1);
  Tensor y({batch, d});
  std::vector<double> inv_std(batch);
  for (int b = 0; b < batch; ++b) {
    const double* xr = x.value().data() + long(b) * d;
    double m = 0.0;
    for (int i = 0; i < d; ++i) m += xr[i];
    m /= d;
    // Second pass removes the rounding error of the first; constant rows come out exactly zero.
    double residual = 0.0;
    for (int i = 0; i < d; ++i) residual += xr[i] - m;
    m += residual / d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) var += (xr[i] - m) * (xr[i] - m);
    var /= d;
    inv_std[b] = 1.0 / std::sqrt(var + eps);
    for (int i = 0; i < d; ++i) y.at(b, i) = (xr[i] - m) * inv_std[b];
  }
  return make(std::move(y), {x.node()}, [=](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (int b = 0; b < batch; ++b) {
      const double* gy = self.grad.data() + long(b) * d;
      const double* yr = self.value.data() + long(b) * d;
      double mg = 0.0, mgy = 0.0;
      for (int i = 0; i < d; ++i) {
        mg += gy[i];
        mgy += gy[i] * yr[i];
      }
      mg /= d;
      mgy /= d;
      for (int i = 0; i < d; ++i) g.at(b, i) += inv_std[b] * (gy[i] - mg - yr[i] * mgy);
    }
  });
}

Var gram(const Var& x) {
  require_rank(x, 4, "gram");
  const int batch = x.dim(0), channels = x.dim(1), pixels = x.dim(2) * x.dim(3);
  Tensor y({batch, channels, channels});
  kernels::gram_forward(batch, channels, pixels, x.value().values(), y.values());
  return make(std::move(y), {x.node()}, [=](Node& self) {
    Node& xn = *self.parents[0];
    kernels::gram_backward(batch, channels, pixels, xn.value.values(), self.grad.values(), xn.grad_buffer().values());
  });
}

Var total_variation(const Var& x) {
  require_rank(x, 4, "total_variation");
  const int n = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const double pairs = static_cast<double>(n) * (h * (w - 1) + (h - 1) * w);
  if (pairs == 0) return make(Tensor({1}), {x.node()}, [](Node&) {});
  const auto& v = x.value();
  double total = 0.0;
  for (int p = 0; p < n; ++p) {
    const double* img = v.data() + static_cast<std::size_t>(p) * h * w;
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        if (j + 1 < w) total += std::abs(img[i * w + j + 1] - img[i * w + j]);
        if (i + 1 < h) total += std::abs(img[(i + 1) * w + j] - img[i * w + j]);
      }
    }
  }
  Tensor out({1});
  out[0] = total / pairs;
  return make(std::move(out), {x.node()}, [=](Node& self) {
    Node& xn = *self.parents[0];
    Tensor& g = xn.grad_buffer();
    const double c = self.grad[0] / pairs;
    auto sign = [](double d) { return static_cast<double>((d > 0) - (d < 0)); };
    for (int p = 0; p < n; ++p) {
      const std::size_t base = static_cast<std::size_t>(p) * h * w;
      const double* img = xn.value.data() + base;
      double* gi = g.data() + base;
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
          const int k = i * w + j;
          if (j + 1 < w) {
            const double s = c * sign(img[k + 1] - img[k]);
            gi[k + 1] += s;
            gi[k] -= s;
          }
          if (i + 1 < h) {
            const double s = c * sign(img[k + w] - img[k]);
            gi[k + w] += s;
            gi[k] -= s;
          }
        }
      }
    }
  });
}

}  // namespace invertfill::ag
