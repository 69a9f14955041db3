#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <json.hpp>

#include "invertfill/checkpoint.hpp"
#include "invertfill/layers.hpp"

namespace invertfill {

struct DiscriminatorConfig {
  int resolution = 64;
  double channel_base = 0.5;
  int channel_max = 128;
  std::uint64_t seed = 3;

  int channels_at(int res) const;
  nlohmann::json to_json() const;
  static DiscriminatorConfig from_json(const nlohmann::json& j);
};

// Convolutional critic for generator pretraining: from-RGB, one strided block per
// resolution down to 4x4, then two dense layers to a single logit per image.
class Discriminator {
 public:
  explicit Discriminator(DiscriminatorConfig config);
  Discriminator(Discriminator&&) = default;
  Discriminator& operator=(Discriminator&&) = default;

  const DiscriminatorConfig& config() const noexcept { return config_; }
  ParameterSet& parameters() noexcept { return *params_; }
  const ParameterSet& parameters() const noexcept { return *params_; }

  // images [B,3,S,S] -> logits [B,1].
  ag::Var operator()(const ag::Var& images) const;

  Archive to_archive() const;
  void load_archive_weights(const Archive& archive);

 private:
  struct Block {
    layers::Conv conv, down;
  };
  DiscriminatorConfig config_;
  std::unique_ptr<ParameterSet> params_;
  layers::Conv from_rgb_;
  std::vector<Block> blocks_;
  layers::Conv final_conv_;
  layers::Linear fc_, out_;
};

}  // namespace invertfill
