#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "invertfill/autograd.hpp"
#include "invertfill/generator.hpp"

namespace invertfill {

// Frozen network exposing intermediate activations. Gradients flow to the input only.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  // images [B, 3, H, W] in [-1, 1]; one activation map per tap point.
  virtual std::vector<ag::Var> features(const ag::Var& images) const = 0;
  virtual int num_taps() const = 0;
  virtual std::string name() const = 0;
};

// Plain convolution stack; each stage is conv(3x3, pad 1) + ReLU with a tap after it.
class ConvFeatureExtractor final : public FeatureExtractor {
 public:
  struct Stage {
    Tensor weight;  // [out, in, k, k]
    Tensor bias;    // [out]
    int stride = 1;
  };

  static constexpr std::uint64_t kDefaultSeed = 0x1f7e5eedULL;

  explicit ConvFeatureExtractor(std::vector<Stage> stages);
  // He-initialized stages with the given widths; first stage stride 1, the rest stride 2.
  static ConvFeatureExtractor seeded(std::uint64_t seed = kDefaultSeed, std::vector<int> widths = {8, 16, 32, 64});

  std::vector<ag::Var> features(const ag::Var& images) const override;
  int num_taps() const override { return static_cast<int>(stages_.size()); }
  std::string name() const override;
  const std::vector<Stage>& stages() const noexcept { return stages_; }

 private:
  std::vector<Stage> stages_;
  std::uint64_t seed_ = 0;
  bool seeded_ = false;
};

enum class Region { Valid, Hole };

// Mean |a - b| over the channels of pixels selected by (1 - M) or M. mask is
// [B, 1, H, W]. An empty selection yields 0.
ag::Var l1_region(const ag::Var& a, const ag::Var& b, const Tensor& mask, Region select);
// Sum over taps of mean |phi(a) - phi(b)|.
ag::Var perceptual_loss(const FeatureExtractor& extractor, const ag::Var& a, const ag::Var& b);
// Sum over taps of mean |gram(phi(a)) - gram(phi(b))|.
ag::Var style_loss(const FeatureExtractor& extractor, const ag::Var& a, const ag::Var& b);
ag::Var tv_loss(const ag::Var& image);

struct LossWeights {
  double valid = 1.0;
  double hole = 1.0;
  double perceptual = 1.0;
  double style = 1.0;
  double tv = 1.0;
  double msr = 1.0;
  double fid = 0.1;

  void validate() const;
};

struct InpaintingTerms {
  ag::Var valid, hole, perceptual, style, tv;
  ag::Var total;  // weighted sum
};

// Terms between the target I and the output O_G; the TV term acts on O_G - I.
InpaintingTerms inpainting_terms(const Tensor& target, const ag::Var& output, const Tensor& mask,
                                 const FeatureExtractor& extractor, const LossWeights& weights);
ag::Var inpainting_loss(const Tensor& target, const ag::Var& output, const Tensor& mask,
                        const FeatureExtractor& extractor, const LossWeights& weights);

// Sum over the given reconstructions of perceptual + style + mean-squared error against
// the target area-downsampled to each reconstruction's size.
ag::Var msr_loss(const Tensor& target, std::span<const ag::Var> recon, const FeatureExtractor& extractor);

// sqrt(mean((w*_l - mean_latent)^2)) over every entry of every row of every sample.
ag::Var fidelity_loss(const StyleCode& styles, const Tensor& mean_latent);

struct LossParts {
  InpaintingTerms ipt;
  ag::Var msr;
  ag::Var fid;
  ag::Var total;
};

// total = ipt + lambda_msr * msr + lambda_fid * fid. Throws TrainingFault naming the
// first non-finite term.
LossParts total_loss(LossParts parts, const LossWeights& weights);

}  // namespace invertfill
