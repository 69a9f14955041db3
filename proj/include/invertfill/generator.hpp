#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include <json.hpp>

#include "invertfill/checkpoint.hpp"
#include "invertfill/layers.hpp"

namespace invertfill {

inline constexpr int kStyleDim = 512;

// Number of style-modulation layers of a generator at this resolution: 2*log2(s) - 2.
int num_style_layers(int resolution);

struct GeneratorConfig {
  int resolution = 64;
  int mapping_layers = 8;
  double mapping_lr_mul = 0.01;
  // Channels at resolution r: min(channel_base * 4096 / r, channel_max), at least 1.
  double channel_base = 4.0;
  int channel_max = 512;
  bool rgb_branch = true;
  // The RGB branch sees [I_m, M] (4 channels) instead of I_m alone.
  bool branch_mask_channel = true;
  bool noise = false;
  std::uint64_t seed = 1;

  int channels_at(int res) const;
  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json& j);
};

// Per-layer style rows w*_l, each [B, 512].
struct StyleCode {
  int resolution = 0;
  std::vector<ag::Var> layers;

  int batch() const;
  int num_layers() const noexcept { return static_cast<int>(layers.size()); }
  // Same w for every layer (the W+ embedding of a single latent).
  static StyleCode repeat(const ag::Var& w, int resolution);
  // Row matrix [L, 512] of one sample.
  Tensor sample_matrix(int index) const;
};

// Style-based synthesis network with a mapping network and an optional RGB branch
// that injects the corrupted image into the trunk by feature addition.
class Generator {
 public:
  explicit Generator(GeneratorConfig config);
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;
  Generator(Generator&&) = default;
  Generator& operator=(Generator&&) = default;

  // Independent deep copy.
  Generator clone() const;

  const GeneratorConfig& config() const noexcept { return config_; }
  int resolution() const noexcept { return config_.resolution; }
  int num_layers() const noexcept { return num_style_layers(config_.resolution); }
  ParameterSet& parameters() noexcept { return *params_; }
  const ParameterSet& parameters() const noexcept { return *params_; }

  // z [B, 512] -> w [B, 512].
  ag::Var map_latent(const ag::Var& z) const;
  Tensor map_latent(const Tensor& z) const;

  // O_G = G(styles, I_m). corrupted is [B,3,S,S], mask [B,1,S,S] (mask may be empty
  // when the branch does not use it). Without an RGB branch this equals synthesize_w_plus.
  ag::Var synthesize(const StyleCode& styles, const Tensor& corrupted, const Tensor& mask,
                     std::uint64_t noise_seed = 0) const;
  ag::Var synthesize_w_plus(const StyleCode& styles, std::uint64_t noise_seed = 0) const;

  // Feature maps the RGB branch adds to the trunk, keyed by resolution.
  std::map<int, ag::Var> branch_features(const Tensor& corrupted, const Tensor& mask) const;

  bool has_rgb_branch() const noexcept { return config_.rgb_branch; }
  void zero_rgb_branch();
  void set_trunk_trainable(bool trainable);
  void set_branch_trainable(bool trainable);
  static bool is_trunk_parameter(const std::string& name);

  Archive to_archive() const;
  // Builds a generator from the header, then loads the tensors.
  static Generator from_archive(const Archive& archive);
  // Loads weights, rejecting archives whose header disagrees with this generator.
  void load_archive_weights(const Archive& archive);
  void save(const std::filesystem::path& path) const;
  static Generator load(const std::filesystem::path& path);

 private:
  struct Block {
    int res = 0;
    layers::ModulatedConv conv0;  // unused at 4x4
    layers::ModulatedConv conv1;
    layers::ModulatedConv torgb;
  };

  ag::Var run(const StyleCode& styles, const std::map<int, ag::Var>* features, std::uint64_t noise_seed) const;
  void check_styles(const StyleCode& styles) const;

  GeneratorConfig config_;
  std::unique_ptr<ParameterSet> params_;
  std::vector<layers::Linear> mapping_;
  ag::Var const_input_;
  std::vector<Block> blocks_;
  layers::Conv branch_stem_;
  std::map<int, layers::Conv> branch_down_;
};

nlohmann::json generator_header(const GeneratorConfig& config);

}  // namespace invertfill
