#include "invertfill/layers.hpp"

#include <algorithm>
#include <cmath>

namespace invertfill::layers {

Tensor InitContext::normal(const std::string& name, Shape shape, double stddev) const {
  Rng rng(mix_seed(seed, fnv1a(name)));
  return random_normal(std::move(shape), rng, stddev);
}

Linear Linear::create(const InitContext& ctx, const std::string& name, int in, int out, double lr_mul,
                      double bias_init) {
  Linear l;
  l.weight = ctx.params.add(name + ".weight", ctx.normal(name + ".weight", {out, in}, 1.0 / lr_mul));
  l.bias = ctx.params.add(name + ".bias", Tensor({out}, bias_init / lr_mul));
  l.weight_gain = lr_mul / std::sqrt(static_cast<double>(in));
  l.bias_gain = lr_mul;
  return l;
}

Linear Linear::create_zero(const InitContext& ctx, const std::string& name, int in, int out, double bias_init) {
  Linear l;
  l.weight = ctx.params.add(name + ".weight", Tensor({out, in}));
  l.bias = ctx.params.add(name + ".bias", Tensor({out}, bias_init));
  l.weight_gain = 1.0 / std::sqrt(static_cast<double>(in));
  l.bias_gain = 1.0;
  return l;
}

ag::Var Linear::operator()(const ag::Var& x) const { return ag::linear(x, weight, bias, weight_gain, bias_gain); }

Conv Conv::create(const InitContext& ctx, const std::string& name, int in, int out, int kernel, int stride,
                  bool with_bias) {
  Conv c;
  c.weight = ctx.params.add(name + ".weight", ctx.normal(name + ".weight", {out, in, kernel, kernel}, 1.0));
  if (with_bias) c.bias = ctx.params.add(name + ".bias", Tensor({out}));
  c.stride = stride;
  c.pad = kernel / 2;
  c.weight_gain = 1.0 / std::sqrt(static_cast<double>(in) * kernel * kernel);
  return c;
}

ag::Var Conv::operator()(const ag::Var& x) const { return ag::conv2d(x, weight, bias, stride, pad, weight_gain); }

ModulatedConv ModulatedConv::create(const InitContext& ctx, const std::string& name, int style_dim, int in, int out,
                                    int kernel, bool demodulate, bool activate, bool noise) {
  ModulatedConv m;
  m.affine = Linear::create(ctx, name + ".affine", style_dim, in, 1.0, 1.0);
  m.weight = ctx.params.add(name + ".weight", ctx.normal(name + ".weight", {out, in, kernel, kernel}, 1.0));
  m.bias = ctx.params.add(name + ".bias", Tensor({out}));
  if (noise) m.noise_strength = ctx.params.add(name + ".noise_strength", Tensor({1}));
  m.kernel = kernel;
  m.demodulate = demodulate;
  m.activate = activate;
  return m;
}

ag::Var ModulatedConv::operator()(const ag::Var& x, const ag::Var& style, const Tensor& noise) const {
  const int in = weight.dim(1);
  const double gain = 1.0 / std::sqrt(static_cast<double>(in) * kernel * kernel);
  ag::Var s = affine(style);
  ag::Var y = ag::conv2d(ag::scale_channels(x, s), weight, ag::Var(), 1, kernel / 2, gain);
  if (demodulate) y = ag::scale_channels(y, ag::demodulation(s, weight, gain));
  if (noise_strength.defined() && !noise.empty()) {
    const int b = y.dim(0), c = y.dim(1);
    const long plane = long(y.dim(2)) * y.dim(3);
    Tensor spread(y.shape());
    for (int n = 0; n < b; ++n)
      for (int ch = 0; ch < c; ++ch)
        std::copy_n(noise.data() + n * plane, plane, spread.data() + (long(n) * c + ch) * plane);
    y = ag::add(y, ag::scale_by(ag::Var::constant(std::move(spread)), noise_strength));
  }
  y = ag::add_channel_bias(y, bias);
  return activate ? lrelu(y) : y;
}

}  // namespace invertfill::layers
