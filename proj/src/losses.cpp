#include "invertfill/losses.hpp"

#include <cmath>
#include <sstream>

#include "invertfill/error.hpp"
#include "invertfill/nn.hpp"

namespace invertfill {

ConvFeatureExtractor::ConvFeatureExtractor(std::vector<Stage> stages) : stages_(std::move(stages)) {
  if (stages_.empty()) throw InvalidInput("feature extractor needs at least one stage");
  int in = 3;
  for (const auto& st : stages_) {
    if (st.weight.rank() != 4 || st.weight.dim(1) != in || st.weight.dim(2) != st.weight.dim(3) ||
        st.bias.numel() != static_cast<std::size_t>(st.weight.dim(0)) || st.stride < 1) {
      throw InvalidInput("feature extractor stage has weight " + shape_string(st.weight.shape()) +
                         " after " + std::to_string(in) + " channels");
    }
    in = st.weight.dim(0);
  }
}

ConvFeatureExtractor ConvFeatureExtractor::seeded(std::uint64_t seed, std::vector<int> widths) {
  std::vector<Stage> stages;
  int in = 3;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    Rng rng(mix_seed(seed, i));
    Stage st;
    st.weight = random_normal({widths[i], in, 3, 3}, rng, std::sqrt(2.0 / (in * 9)));
    st.bias = Tensor({widths[i]});
    st.stride = i == 0 ? 1 : 2;
    stages.push_back(std::move(st));
    in = widths[i];
  }
  ConvFeatureExtractor fx(std::move(stages));
  fx.seed_ = seed;
  fx.seeded_ = true;
  return fx;
}

std::string ConvFeatureExtractor::name() const {
  std::ostringstream os;
  os << "conv" << stages_.size();
  if (seeded_) os << "-seed" << seed_;
  return os.str();
}

std::vector<ag::Var> ConvFeatureExtractor::features(const ag::Var& images) const {
  if (images.value().rank() != 4 || images.dim(1) != 3) {
    throw InvalidInput("feature extractor expects [B,3,H,W], got " + shape_string(images.shape()));
  }
  std::vector<ag::Var> taps;
  ag::Var x = images;
  for (const auto& st : stages_) {
    const int k = st.weight.dim(2);
    x = ag::relu(ag::conv2d(x, ag::Var::constant(st.weight), ag::Var::constant(st.bias), st.stride, k / 2));
    taps.push_back(x);
  }
  return taps;
}

namespace {

void require_match(const ag::Var& a, const ag::Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidInput(std::string(op) + ": shapes differ " + shape_string(a.shape()) + " vs " +
                       shape_string(b.shape()));
  }
}

ag::Var zero_scalar() { return ag::Var::constant(Tensor({1})); }

}  // namespace

ag::Var l1_region(const ag::Var& a, const ag::Var& b, const Tensor& mask, Region select) {
  require_match(a, b, "l1_region");
  if (a.value().rank() != 4) throw InvalidInput("l1_region expects [B,C,H,W] images");
  const int batch = a.dim(0), channels = a.dim(1), h = a.dim(2), w = a.dim(3);
  if (mask.shape() != Shape{batch, 1, h, w}) {
    throw InvalidInput("l1_region: mask " + shape_string(mask.shape()) + " does not match " +
                       shape_string(a.shape()));
  }
  Tensor selector(a.shape());
  double count = 0.0;
  for (int n = 0; n < batch; ++n) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double m = mask.at(n, 0, y, x);
        const double s = select == Region::Hole ? m : 1.0 - m;
        for (int c = 0; c < channels; ++c) selector.at(n, c, y, x) = s;
        count += s * channels;
      }
    }
  }
  if (count == 0.0) return zero_scalar();
  return ag::scale(ag::sum(ag::mul(ag::abs(ag::sub(a, b)), ag::Var::constant(std::move(selector)))), 1.0 / count);
}

ag::Var perceptual_loss(const FeatureExtractor& extractor, const ag::Var& a, const ag::Var& b) {
  require_match(a, b, "perceptual_loss");
  const auto fa = extractor.features(a);
  const auto fb = extractor.features(b);
  ag::Var total = zero_scalar();
  for (std::size_t i = 0; i < fa.size(); ++i) total = ag::add(total, ag::mean(ag::abs(ag::sub(fa[i], fb[i]))));
  return total;
}

ag::Var style_loss(const FeatureExtractor& extractor, const ag::Var& a, const ag::Var& b) {
  require_match(a, b, "style_loss");
  const auto fa = extractor.features(a);
  const auto fb = extractor.features(b);
  ag::Var total = zero_scalar();
  for (std::size_t i = 0; i < fa.size(); ++i) {
    total = ag::add(total, ag::mean(ag::abs(ag::sub(ag::gram(fa[i]), ag::gram(fb[i])))));
  }
  return total;
}

ag::Var tv_loss(const ag::Var& image) { return ag::total_variation(image); }

void LossWeights::validate() const {
  for (double v : {valid, hole, perceptual, style, tv, msr, fid}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidInput("loss weights must be finite and nonnegative");
  }
}

InpaintingTerms inpainting_terms(const Tensor& target, const ag::Var& output, const Tensor& mask,
                                 const FeatureExtractor& extractor, const LossWeights& weights) {
  weights.validate();
  const ag::Var truth = ag::Var::constant(target);
  require_match(truth, output, "inpainting_loss");
  InpaintingTerms t;
  t.valid = l1_region(output, truth, mask, Region::Valid);
  t.hole = l1_region(output, truth, mask, Region::Hole);
  t.perceptual = perceptual_loss(extractor, output, truth);
  t.style = style_loss(extractor, output, truth);
  t.tv = tv_loss(ag::sub(output, truth));
  t.total = ag::add(ag::add(ag::add(ag::add(ag::scale(t.valid, weights.valid), ag::scale(t.hole, weights.hole)),
                                    ag::scale(t.perceptual, weights.perceptual)),
                            ag::scale(t.style, weights.style)),
                    ag::scale(t.tv, weights.tv));
  return t;
}

ag::Var inpainting_loss(const Tensor& target, const ag::Var& output, const Tensor& mask,
                        const FeatureExtractor& extractor, const LossWeights& weights) {
  return inpainting_terms(target, output, mask, extractor, weights).total;
}

ag::Var msr_loss(const Tensor& target, std::span<const ag::Var> recon, const FeatureExtractor& extractor) {
  if (target.rank() != 4) throw InvalidInput("msr_loss expects a [B,C,S,S] target");
  const int s = target.dim(2);
  const ag::Var truth = ag::Var::constant(target);
  ag::Var total = zero_scalar();
  for (const auto& r : recon) {
    if (r.value().rank() != 4 || r.dim(0) != target.dim(0) || r.dim(1) != target.dim(1) || r.dim(2) < 1 ||
        s % r.dim(2) != 0 || r.dim(2) != r.dim(3)) {
      throw InvalidInput("msr_loss: reconstruction " + shape_string(r.shape()) + " incompatible with target " +
                         shape_string(target.shape()));
    }
    const int factor = s / r.dim(2);
    const ag::Var down = factor == 1 ? truth : ag::area_downsample(truth, factor);
    const ag::Var mse = ag::mean(ag::square(ag::sub(r, down)));
    total = ag::add(total, ag::add(ag::add(perceptual_loss(extractor, r, down), style_loss(extractor, r, down)), mse));
  }
  return total;
}

ag::Var fidelity_loss(const StyleCode& styles, const Tensor& mean_latent) {
  if (styles.layers.empty()) throw InvalidInput("fidelity_loss: empty style code");
  const int batch = styles.batch();
  const int d = styles.layers.front().dim(1);
  if (mean_latent.numel() != static_cast<std::size_t>(d)) {
    throw InvalidInput("fidelity_loss: mean latent has " + std::to_string(mean_latent.numel()) +
                       " entries, style rows have " + std::to_string(d));
  }
  const ag::Var mean_rows = ag::broadcast_rows(ag::Var::constant(mean_latent.reshaped({1, d})), batch);
  ag::Var total = zero_scalar();
  for (const auto& row : styles.layers) total = ag::add(total, ag::sum(ag::square(ag::sub(row, mean_rows))));
  const double count = static_cast<double>(batch) * d * styles.num_layers();
  return ag::sqrt(ag::scale(total, 1.0 / count));
}

LossParts total_loss(LossParts parts, const LossWeights& weights) {
  weights.validate();
  const std::pair<const char*, const ag::Var*> terms[] = {
      {"L_valid", &parts.ipt.valid}, {"L_hole", &parts.ipt.hole}, {"L_perc", &parts.ipt.perceptual},
      {"L_style", &parts.ipt.style}, {"L_tv", &parts.ipt.tv},     {"L_ipt", &parts.ipt.total},
      {"L_msr", &parts.msr},         {"L_fid", &parts.fid}};
  for (const auto& [name, v] : terms) {
    if (!v->defined()) continue;
    if (!v->value().all_finite()) throw TrainingFault(name, std::string("non-finite loss term ") + name);
  }
  if (!parts.ipt.total.defined()) throw InvalidInput("total_loss needs the inpainting term");
  ag::Var total = parts.ipt.total;
  if (parts.msr.defined()) total = ag::add(total, ag::scale(parts.msr, weights.msr));
  if (parts.fid.defined()) total = ag::add(total, ag::scale(parts.fid, weights.fid));
  if (!total.value().all_finite()) throw TrainingFault("L_total", "non-finite total loss");
  parts.total = total;
  return parts;
}

}  // namespace invertfill
