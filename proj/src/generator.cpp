#include "invertfill/generator.hpp"

#include <cmath>

#include "invertfill/error.hpp"
#include "invertfill/imaging.hpp"

namespace invertfill {

namespace {

int log2_exact(int v) {
  int r = 0;
  while ((1 << r) < v) ++r;
  return r;
}

Tensor normalize_latents(const Tensor& z) {
  Tensor out = z;
  const int b = z.dim(0), d = z.dim(1);
  for (int n = 0; n < b; ++n) {
    double ms = 0.0;
    for (int i = 0; i < d; ++i) ms += z.at(n, i) * z.at(n, i);
    const double inv = 1.0 / std::sqrt(ms / d + 1e-8);
    for (int i = 0; i < d; ++i) out.at(n, i) *= inv;
  }
  return out;
}

Tensor noise_map(int batch, int res, std::uint64_t seed, int layer) {
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(layer)));
  return random_normal({batch, 1, res, res}, rng);
}

}  // namespace

int num_style_layers(int resolution) {
  if (resolution < 8 || !is_power_of_two(resolution)) {
    throw InvalidInput("generator resolution must be a power of two >= 8, got " + std::to_string(resolution));
  }
  return 2 * log2_exact(resolution) - 2;
}

int GeneratorConfig::channels_at(int res) const {
  const double c = channel_base * 4096.0 / res;
  return std::max(1, std::min(static_cast<int>(c), channel_max));
}

nlohmann::json GeneratorConfig::to_json() const {
  return {{"resolution", resolution},     {"mapping_layers", mapping_layers},
          {"mapping_lr_mul", mapping_lr_mul}, {"channel_base", channel_base},
          {"channel_max", channel_max},   {"rgb_branch", rgb_branch},
          {"branch_mask_channel", branch_mask_channel}, {"noise", noise},
          {"seed", seed}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  try {
    c.resolution = j.at("resolution");
    c.mapping_layers = j.at("mapping_layers");
    c.mapping_lr_mul = j.at("mapping_lr_mul");
    c.channel_base = j.at("channel_base");
    c.channel_max = j.at("channel_max");
    c.rgb_branch = j.at("rgb_branch");
    c.branch_mask_channel = j.at("branch_mask_channel");
    c.noise = j.at("noise");
    c.seed = j.value("seed", std::uint64_t{1});
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointMismatch(std::string("generator header incomplete: ") + e.what());
  }
  return c;
}

nlohmann::json generator_header(const GeneratorConfig& config) {
  nlohmann::json h = config.to_json();
  h.erase("seed");
  h["kind"] = "generator";
  h["style_dim"] = kStyleDim;
  return h;
}

int StyleCode::batch() const {
  if (layers.empty()) throw InvalidInput("empty style code");
  return layers.front().dim(0);
}

StyleCode StyleCode::repeat(const ag::Var& w, int resolution) {
  StyleCode code;
  code.resolution = resolution;
  code.layers.assign(num_style_layers(resolution), w);
  return code;
}

Tensor StyleCode::sample_matrix(int index) const {
  Tensor m({num_layers(), kStyleDim});
  for (int l = 0; l < num_layers(); ++l)
    for (int i = 0; i < kStyleDim; ++i) m.at(l, i) = layers[l].value().at(index, i);
  return m;
}

Generator::Generator(GeneratorConfig config) : config_(config), params_(std::make_unique<ParameterSet>()) {
  const int s = config_.resolution;
  num_style_layers(s);
  if (config_.mapping_layers < 1) throw InvalidInput("mapping network needs at least one layer");
  layers::InitContext ctx{*params_, config_.seed};

  for (int i = 0; i < config_.mapping_layers; ++i) {
    mapping_.push_back(layers::Linear::create(ctx, "mapping.fc" + std::to_string(i), kStyleDim, kStyleDim,
                                              config_.mapping_lr_mul));
  }

  const int c4 = config_.channels_at(4);
  const_input_ = params_->add("synthesis.const", ctx.normal("synthesis.const", {1, c4, 4, 4}, 1.0));
  for (int res = 4; res <= s; res *= 2) {
    const std::string p = "synthesis.b" + std::to_string(res);
    const int out = config_.channels_at(res);
    const int in = res == 4 ? c4 : config_.channels_at(res / 2);
    Block b;
    b.res = res;
    if (res > 4) b.conv0 = layers::ModulatedConv::create(ctx, p + ".conv0", kStyleDim, in, out, 3, true, true, config_.noise);
    b.conv1 = layers::ModulatedConv::create(ctx, p + ".conv1", kStyleDim, res == 4 ? in : out, out, 3, true, true,
                                            config_.noise);
    b.torgb = layers::ModulatedConv::create(ctx, p + ".torgb", kStyleDim, out, 3, 1, false, false, false);
    blocks_.push_back(std::move(b));
  }

  if (config_.rgb_branch) {
    auto branch_ch = [&](int res) { return res == 4 ? c4 : config_.channels_at(res / 2); };
    const int in = config_.branch_mask_channel ? 4 : 3;
    branch_stem_ = layers::Conv::create(ctx, "branch.stem", in, branch_ch(s), 3);
    for (int res = s / 2; res >= 4; res /= 2) {
      branch_down_.emplace(res, layers::Conv::create(ctx, "branch.down" + std::to_string(res), branch_ch(res * 2),
                                                     branch_ch(res), 3, 2));
    }
  }
}

Generator Generator::clone() const {
  Generator g(config_);
  g.params_->load_state(params_->state());
  for (const auto& [name, v] : *params_) {
    ag::Var handle = g.params_->at(name);
    handle.set_requires_grad(v.requires_grad());
  }
  return g;
}

ag::Var Generator::map_latent(const ag::Var& z) const {
  if (z.value().rank() != 2 || z.dim(1) != kStyleDim) {
    throw InvalidInput("map_latent expects z of shape [B,512], got " + shape_string(z.shape()));
  }
  ag::Var x = ag::Var::constant(normalize_latents(z.value()));
  for (const auto& fc : mapping_) x = layers::lrelu(fc(x));
  return x;
}

Tensor Generator::map_latent(const Tensor& z) const {
  ag::NoGradGuard guard;
  return map_latent(ag::Var::constant(z)).value();
}

void Generator::check_styles(const StyleCode& styles) const {
  if (styles.resolution != config_.resolution) {
    throw InvalidInput("style code is for resolution " + std::to_string(styles.resolution) + ", generator is " +
                       std::to_string(config_.resolution));
  }
  if (styles.num_layers() != num_layers()) {
    throw InvalidInput("style code has " + std::to_string(styles.num_layers()) + " rows, expected " +
                       std::to_string(num_layers()));
  }
  const int b = styles.batch();
  for (const auto& row : styles.layers) {
    if (row.shape() != Shape{b, kStyleDim}) throw InvalidInput("style row shape " + shape_string(row.shape()));
  }
}

std::map<int, ag::Var> Generator::branch_features(const Tensor& corrupted, const Tensor& mask) const {
  if (!config_.rgb_branch) throw InvalidInput("generator has no RGB branch");
  const int s = config_.resolution;
  if (corrupted.rank() != 4 || corrupted.dim(1) != 3 || corrupted.dim(2) != s || corrupted.dim(3) != s) {
    throw InvalidInput("corrupted batch must be [B,3," + std::to_string(s) + "," + std::to_string(s) + "], got " +
                       shape_string(corrupted.shape()));
  }
  ag::Var x = ag::Var::constant(corrupted);
  if (config_.branch_mask_channel) {
    if (mask.shape() != Shape{corrupted.dim(0), 1, s, s}) {
      throw InvalidInput("branch mask must be [B,1,S,S], got " + shape_string(mask.shape()));
    }
    x = ag::concat_channels(x, ag::Var::constant(mask));
  }
  std::map<int, ag::Var> out;
  x = layers::lrelu(branch_stem_(x));
  out[s] = x;
  for (int res = s / 2; res >= 4; res /= 2) {
    x = layers::lrelu(branch_down_.at(res)(x));
    out[res] = x;
  }
  return out;
}

ag::Var Generator::run(const StyleCode& styles, const std::map<int, ag::Var>* features, std::uint64_t noise_seed) const {
  check_styles(styles);
  const int batch = styles.batch();
  const auto& w = styles.layers;
  auto noise = [&](int res, int layer) { return config_.noise ? noise_map(batch, res, noise_seed, layer) : Tensor(); };

  ag::Var x = ag::broadcast_batch(const_input_, batch);
  if (features) x = ag::add(x, features->at(4));
  x = blocks_[0].conv1(x, w[0], noise(4, 0));
  ag::Var rgb = blocks_[0].torgb(x, w[1], Tensor());

  for (std::size_t i = 1; i < blocks_.size(); ++i) {
    const Block& b = blocks_[i];
    const int idx = 2 * static_cast<int>(i);
    x = ag::upsample_nearest(x);
    if (features) x = ag::add(x, features->at(b.res));
    x = b.conv0(x, w[idx - 1], noise(b.res, idx - 1));
    x = b.conv1(x, w[idx], noise(b.res, idx));
    rgb = ag::add(ag::upsample_nearest(rgb), b.torgb(x, w[idx + 1], Tensor()));
  }
  return ag::tanh(rgb);
}

ag::Var Generator::synthesize(const StyleCode& styles, const Tensor& corrupted, const Tensor& mask,
                              std::uint64_t noise_seed) const {
  if (!config_.rgb_branch) return run(styles, nullptr, noise_seed);
  check_styles(styles);
  if (corrupted.rank() != 4 || corrupted.dim(0) != styles.batch()) {
    throw InvalidInput("corrupted batch does not match style batch");
  }
  const auto features = branch_features(corrupted, mask);
  return run(styles, &features, noise_seed);
}

ag::Var Generator::synthesize_w_plus(const StyleCode& styles, std::uint64_t noise_seed) const {
  return run(styles, nullptr, noise_seed);
}

void Generator::zero_rgb_branch() {
  for (auto& v : params_->with_prefix("branch.")) v.mutable_value().fill(0.0);
}

bool Generator::is_trunk_parameter(const std::string& name) {
  return name.rfind("mapping.", 0) == 0 || name.rfind("synthesis.", 0) == 0;
}

void Generator::set_trunk_trainable(bool trainable) {
  params_->set_trainable("mapping.", trainable);
  params_->set_trainable("synthesis.", trainable);
}

void Generator::set_branch_trainable(bool trainable) { params_->set_trainable("branch.", trainable); }

Archive Generator::to_archive() const {
  Archive a;
  a.header = generator_header(config_);
  a.header["seed"] = config_.seed;
  a.tensors = params_->state();
  return a;
}

Generator Generator::from_archive(const Archive& archive) {
  expect_header(archive, {{"kind", "generator"}, {"style_dim", kStyleDim}});
  Generator g(GeneratorConfig::from_json(archive.header));
  g.params_->load_state(archive.tensors);
  return g;
}

void Generator::load_archive_weights(const Archive& archive) {
  expect_header(archive, generator_header(config_));
  params_->load_state(archive.tensors);
}

void Generator::save(const std::filesystem::path& path) const { save_archive(path, to_archive()); }

Generator Generator::load(const std::filesystem::path& path) { return from_archive(load_archive(path)); }

}  // namespace invertfill
