#include "invertfill/discriminator.hpp"

#include "invertfill/error.hpp"
#include "invertfill/imaging.hpp"

namespace invertfill {

int DiscriminatorConfig::channels_at(int res) const {
  return std::max(1, std::min(static_cast<int>(channel_base * 4096.0 / res), channel_max));
}

nlohmann::json DiscriminatorConfig::to_json() const {
  return {{"kind", "discriminator"},
          {"resolution", resolution},
          {"channel_base", channel_base},
          {"channel_max", channel_max}};
}

DiscriminatorConfig DiscriminatorConfig::from_json(const nlohmann::json& j) {
  DiscriminatorConfig c;
  try {
    c.resolution = j.at("resolution");
    c.channel_base = j.at("channel_base");
    c.channel_max = j.at("channel_max");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointMismatch(std::string("discriminator header incomplete: ") + e.what());
  }
  return c;
}

Discriminator::Discriminator(DiscriminatorConfig config)
    : config_(config), params_(std::make_unique<ParameterSet>()) {
  const int s = config_.resolution;
  if (s < 8 || !is_power_of_two(s)) throw InvalidInput("discriminator resolution must be a power of two >= 8");
  layers::InitContext ctx{*params_, config_.seed};
  from_rgb_ = layers::Conv::create(ctx, "from_rgb", 3, config_.channels_at(s), 1);
  for (int res = s; res > 4; res /= 2) {
    const std::string p = "b" + std::to_string(res);
    Block b;
    b.conv = layers::Conv::create(ctx, p + ".conv", config_.channels_at(res), config_.channels_at(res), 3);
    b.down = layers::Conv::create(ctx, p + ".down", config_.channels_at(res), config_.channels_at(res / 2), 3, 2);
    blocks_.push_back(std::move(b));
  }
  const int c4 = config_.channels_at(4);
  final_conv_ = layers::Conv::create(ctx, "b4.conv", c4, c4, 3);
  fc_ = layers::Linear::create(ctx, "b4.fc", c4 * 16, c4);
  out_ = layers::Linear::create(ctx, "b4.out", c4, 1);
}

ag::Var Discriminator::operator()(const ag::Var& images) const {
  const int s = config_.resolution;
  if (images.value().rank() != 4 || images.dim(1) != 3 || images.dim(2) != s || images.dim(3) != s) {
    throw InvalidInput("discriminator expects [B,3," + std::to_string(s) + "," + std::to_string(s) + "], got " +
                       shape_string(images.shape()));
  }
  ag::Var x = layers::lrelu(from_rgb_(images));
  for (const auto& b : blocks_) x = layers::lrelu(b.down(layers::lrelu(b.conv(x))));
  x = layers::lrelu(final_conv_(x));
  x = ag::reshape(x, {x.dim(0), x.dim(1) * 16});
  return out_(layers::lrelu(fc_(x)));
}

Archive Discriminator::to_archive() const {
  Archive a;
  a.header = config_.to_json();
  a.tensors = params_->state();
  return a;
}

void Discriminator::load_archive_weights(const Archive& archive) {
  expect_header(archive, config_.to_json());
  params_->load_state(archive.tensors);
}

}  // namespace invertfill
