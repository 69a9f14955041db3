#include "invertfill/encoder.hpp"

#include <cmath>

#include "invertfill/error.hpp"

namespace invertfill {

namespace {

int log2_exact(int v) {
  int r = 0;
  while ((1 << r) < v) ++r;
  return r;
}

const char* const kScaleNames[kNumScales] = {"coarse", "middle", "fine"};

}  // namespace

int style_scale_of_layer(int layer, int num_layers) {
  if (num_layers < 3) throw InvalidInput("need at least 3 style layers, got " + std::to_string(num_layers));
  if (layer < 1 || layer > num_layers) {
    throw InvalidInput("style layer " + std::to_string(layer) + " outside 1.." + std::to_string(num_layers));
  }
  int coarse_end, middle_end;
  if (num_layers == 14) {
    coarse_end = 3;
    middle_end = 7;
  } else {
    coarse_end = std::max(1, 3 * num_layers / 18);
    middle_end = std::min(num_layers - 1, std::max(coarse_end + 1, 7 * num_layers / 18));
  }
  if (layer <= coarse_end) return 1;
  if (layer <= middle_end) return 2;
  return 3;
}

std::vector<int> style_scale_assignment(int num_layers) {
  std::vector<int> out;
  for (int l = 1; l <= num_layers; ++l) out.push_back(style_scale_of_layer(l, num_layers));
  return out;
}

Tensor instance_normalize(const Tensor& v, double eps) {
  const int d = static_cast<int>(v.numel());
  if (d == 0) return v;
  ag::NoGradGuard guard;
  auto out = ag::row_instance_norm(ag::Var::constant(v.reshaped({1, d})), eps);
  return out.value().reshaped(v.shape());
}

ag::Var premodulate_with(const ag::Var& w_row, const ag::Var& gamma, const ag::Var& beta, double eps) {
  return ag::add(ag::mul(gamma, ag::row_instance_norm(w_row, eps)), beta);
}

nlohmann::json EncoderConfig::to_json() const {
  return {{"resolution", resolution},     {"widths", widths},
          {"fpn_channels", fpn_channels}, {"head_channels", head_channels},
          {"premod_hidden", premod_hidden}, {"use_premod", use_premod},
          {"epsilon", epsilon},           {"seed", seed}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  try {
    c.resolution = j.at("resolution");
    c.widths = j.at("widths").get<std::array<int, 4>>();
    c.fpn_channels = j.at("fpn_channels");
    c.head_channels = j.at("head_channels");
    c.premod_hidden = j.at("premod_hidden");
    c.use_premod = j.at("use_premod");
    c.epsilon = j.at("epsilon");
    c.seed = j.value("seed", std::uint64_t{2});
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointMismatch(std::string("encoder header incomplete: ") + e.what());
  }
  return c;
}

nlohmann::json encoder_header(const EncoderConfig& config) {
  nlohmann::json h = config.to_json();
  h.erase("seed");
  h["kind"] = "encoder";
  h["style_dim"] = kStyleDim;
  return h;
}

ag::Var Encoder::Head::operator()(const ag::Var& x) const {
  ag::Var h = x;
  for (const auto& c : convs) h = layers::lrelu(c(h));
  return out(ag::reshape(h, {h.dim(0), h.dim(1)}));
}

Encoder::Encoder(EncoderConfig config) : config_(config), params_(std::make_unique<ParameterSet>()) {
  const int s = config_.resolution;
  const int L = num_style_layers(s);
  if (config_.epsilon <= 0.0) throw InvalidInput("instance-norm epsilon must be positive");
  layers::InitContext ctx{*params_, config_.seed};
  const auto& w = config_.widths;
  const int f = config_.fpn_channels, hc = config_.head_channels;

  stem_ = layers::Conv::create(ctx, "backbone.stem", 3, w[0], 3);
  for (int i = 0; i < 4; ++i) {
    const std::string p = "backbone.stage" + std::to_string(i + 1);
    if (i > 0) down_[i - 1] = layers::Conv::create(ctx, p + ".down", w[i - 1], w[i], 3, 2);
    res_a_[i] = layers::Conv::create(ctx, p + ".res_a", w[i], w[i], 3);
    res_b_[i] = layers::Conv::create(ctx, p + ".res_b", w[i], w[i], 3);
    lateral_[i] = layers::Conv::create(ctx, "fpn.lateral" + std::to_string(i + 1), w[i], f, 1);
  }
  // Pyramid levels, coarse to fine, sit at s/4, s/2 and s.
  const int level_res[kNumScales] = {s / 4, s / 2, s};
  for (int r = 0; r < kNumScales; ++r) {
    const std::string name = kScaleNames[r];
    smooth_[r] = layers::Conv::create(ctx, "fpn.smooth_" + name, f, f, 3);
    rgb_head_[r] = layers::Conv::create(ctx, "rgb_head_" + name, f, 3, 1);
    const int steps = log2_exact(level_res[r]);
    for (int k = 0; k < steps; ++k) {
      map2style_[r].convs.push_back(layers::Conv::create(ctx, "map2style_" + name + ".conv" + std::to_string(k),
                                                         k == 0 ? f : hc, hc, 3, 2));
      map2structure_[r].convs.push_back(layers::Conv::create(
          ctx, "map2structure_" + name + ".conv" + std::to_string(k), k == 0 ? 3 : hc, hc, 3, 2));
    }
    map2style_[r].out = layers::Linear::create(ctx, "map2style_" + name + ".out", hc, kStyleDim);
    map2structure_[r].out = layers::Linear::create(ctx, "map2structure_" + name + ".out", hc, kStyleDim);
  }
  for (int l = 1; l <= L; ++l) {
    const std::string p = "premod.layer" + std::to_string(l);
    PreMod pm;
    pm.gamma_hidden = layers::Linear::create(ctx, p + ".gamma.fc0", kStyleDim, config_.premod_hidden);
    pm.gamma_out = layers::Linear::create_zero(ctx, p + ".gamma.fc1", config_.premod_hidden, kStyleDim);
    pm.beta_hidden = layers::Linear::create(ctx, p + ".beta.fc0", kStyleDim, config_.premod_hidden);
    pm.beta_out = layers::Linear::create_zero(ctx, p + ".beta.fc1", config_.premod_hidden, kStyleDim);
    premod_.push_back(std::move(pm));
  }
}

Encoder Encoder::clone() const {
  Encoder e(config_);
  e.params_->load_state(params_->state());
  for (const auto& [name, v] : *params_) {
    ag::Var handle = e.params_->at(name);
    handle.set_requires_grad(v.requires_grad());
  }
  return e;
}

EncoderOutput Encoder::encode(const Tensor& corrupted) const {
  const int s = config_.resolution;
  if (corrupted.rank() != 4 || corrupted.dim(1) != 3 || corrupted.dim(2) != s || corrupted.dim(3) != s) {
    throw InvalidInput("encoder expects [B,3," + std::to_string(s) + "," + std::to_string(s) + "], got " +
                       shape_string(corrupted.shape()));
  }
  std::array<ag::Var, 4> c;
  ag::Var x = layers::lrelu(stem_(ag::Var::constant(corrupted)));
  for (int i = 0; i < 4; ++i) {
    if (i > 0) x = layers::lrelu(down_[i - 1](x));
    ag::Var y = res_b_[i](layers::lrelu(res_a_[i](x)));
    x = ag::scale(ag::add(x, y), std::sqrt(0.5));
    c[i] = x;
  }
  ag::Var p = lateral_[3](c[3]);
  std::array<ag::Var, kNumScales> levels;
  for (int i = 2; i >= 0; --i) {
    p = ag::add(lateral_[i](c[i]), ag::upsample_nearest(p));
    levels[i] = p;  // levels[0] is at s, levels[2] at s/4
  }
  EncoderOutput out;
  for (int r = 0; r < kNumScales; ++r) {
    ag::Var feat = layers::lrelu(smooth_[r](levels[2 - r]));
    out.recon[r] = ag::tanh(rgb_head_[r](feat));
    out.w_prime[r] = map2style_[r](feat);
  }
  return out;
}

StructureVectors Encoder::map2structure(const std::array<ag::Var, kNumScales>& recon) const {
  const int s = config_.resolution;
  const int expected[kNumScales] = {s / 4, s / 2, s};
  StructureVectors out;
  for (int r = 0; r < kNumScales; ++r) {
    if (recon[r].value().rank() != 4 || recon[r].dim(1) != 3 || recon[r].dim(2) != expected[r] ||
        recon[r].dim(3) != expected[r]) {
      throw InvalidInput("map2structure: reconstruction " + std::to_string(r + 1) + " has shape " +
                         shape_string(recon[r].shape()));
    }
    out[r] = map2structure_[r](recon[r]);
  }
  return out;
}

void Encoder::check_layer(int layer) const {
  if (layer < 1 || layer > num_layers()) {
    throw InvalidInput("style layer " + std::to_string(layer) + " outside 1.." + std::to_string(num_layers()));
  }
}

ag::Var Encoder::gamma(const ag::Var& structure, int layer) const {
  check_layer(layer);
  const PreMod& pm = premod_[layer - 1];
  return ag::add_scalar(pm.gamma_out(layers::lrelu(pm.gamma_hidden(structure))), 1.0);
}

ag::Var Encoder::beta(const ag::Var& structure, int layer) const {
  check_layer(layer);
  const PreMod& pm = premod_[layer - 1];
  return pm.beta_out(layers::lrelu(pm.beta_hidden(structure)));
}

ag::Var Encoder::premodulate(const ag::Var& w_prime_row, const ag::Var& structure, int layer) const {
  return premodulate_with(w_prime_row, gamma(structure, layer), beta(structure, layer), config_.epsilon);
}

Inversion Encoder::invert(const Tensor& corrupted) const {
  Inversion inv;
  inv.encoded = encode(corrupted);
  inv.styles.resolution = config_.resolution;
  const int L = num_layers();
  if (config_.use_premod) {
    inv.structure = map2structure(inv.encoded.recon);
    for (int l = 1; l <= L; ++l) {
      const int r = style_scale_of_layer(l, L) - 1;
      inv.styles.layers.push_back(premodulate(inv.encoded.w_prime[r], inv.structure[r], l));
    }
  } else {
    for (int l = 1; l <= L; ++l) inv.styles.layers.push_back(inv.encoded.w_prime[style_scale_of_layer(l, L) - 1]);
  }
  return inv;
}

Archive Encoder::to_archive() const {
  Archive a;
  a.header = encoder_header(config_);
  a.header["seed"] = config_.seed;
  a.tensors = params_->state();
  return a;
}

Encoder Encoder::from_archive(const Archive& archive) {
  expect_header(archive, {{"kind", "encoder"}, {"style_dim", kStyleDim}});
  Encoder e(EncoderConfig::from_json(archive.header));
  e.params_->load_state(archive.tensors);
  return e;
}

void Encoder::load_archive_weights(const Archive& archive) {
  expect_header(archive, encoder_header(config_));
  params_->load_state(archive.tensors);
}

void Encoder::save(const std::filesystem::path& path) const { save_archive(path, to_archive()); }

Encoder Encoder::load(const std::filesystem::path& path) { return from_archive(load_archive(path)); }

}  // namespace invertfill
