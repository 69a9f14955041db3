#pragma once

#include <cstdint>
#include <string>

#include "invertfill/nn.hpp"

// Building blocks with equalized learning rate: weights are stored at unit scale
// and multiplied by lr_mul / sqrt(fan_in) at run time.
namespace invertfill::layers {

struct InitContext {
  ParameterSet& params;
  std::uint64_t seed;

  Tensor normal(const std::string& name, Shape shape, double stddev) const;
};

struct Linear {
  ag::Var weight;
  ag::Var bias;
  double weight_gain = 1.0;
  double bias_gain = 1.0;

  static Linear create(const InitContext& ctx, const std::string& name, int in, int out, double lr_mul = 1.0,
                       double bias_init = 0.0);
  // Zero weights; output is the constant bias_init.
  static Linear create_zero(const InitContext& ctx, const std::string& name, int in, int out,
                            double bias_init = 0.0);
  ag::Var operator()(const ag::Var& x) const;
};

struct Conv {
  ag::Var weight;
  ag::Var bias;
  int stride = 1;
  int pad = 1;
  double weight_gain = 1.0;

  static Conv create(const InitContext& ctx, const std::string& name, int in, int out, int kernel, int stride = 1,
                     bool with_bias = true);
  ag::Var operator()(const ag::Var& x) const;
};

inline constexpr double kLeakySlope = 0.2;
// Gain that keeps activations at unit variance after a leaky ReLU.
inline const double kActivationGain = 1.4142135623730951;

inline ag::Var lrelu(const ag::Var& x) { return ag::leaky_relu(x, kLeakySlope, kActivationGain); }

// Style-modulated convolution. An affine map turns a style row into per-input-channel
// scales; optional demodulation renormalizes each output channel.
struct ModulatedConv {
  Linear affine;
  ag::Var weight;
  ag::Var bias;
  ag::Var noise_strength;  // undefined unless noise is enabled
  int kernel = 3;
  bool demodulate = true;
  bool activate = true;

  static ModulatedConv create(const InitContext& ctx, const std::string& name, int style_dim, int in, int out,
                              int kernel, bool demodulate, bool activate, bool noise);
  // x [B,in,H,W], style [B,style_dim]; noise is [B,1,H,W] or empty.
  ag::Var operator()(const ag::Var& x, const ag::Var& style, const Tensor& noise) const;
};

}  // namespace invertfill::layers
