#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "invertfill/encoder.hpp"
#include "invertfill/generator.hpp"
#include "invertfill/imaging.hpp"
#include "invertfill/losses.hpp"

namespace invertfill {

enum class Profile { Tiny, Full };
std::string_view to_string(Profile p) noexcept;

// Declarative run configuration. Text form is one `key = value` per line; `#` starts
// a comment. `profile` selects the defaults the remaining keys override.
struct RunConfig {
  Profile profile = Profile::Tiny;
  int resolution = 64;

  // generator
  int mapping_layers = 4;
  double mapping_lr_mul = 0.01;
  double gen_channel_base = 0.25;
  int gen_channel_max = 128;
  bool branch_mask_channel = true;
  bool gen_noise = false;

  // discriminator
  double disc_channel_base = 0.25;
  int disc_channel_max = 128;

  // encoder
  std::array<int, 4> enc_widths{16, 32, 64, 64};
  int enc_fpn_channels = 32;
  int enc_head_channels = 64;
  int premod_hidden = 512;
  double in_epsilon = 1e-5;

  // ablation switches
  bool use_fw_plus = true;
  bool use_premod = true;
  bool use_sml = true;

  // soft-update mean latent
  double sml_tau = 0.99;
  double sml_tolerance = 1e-3;
  int sml_samples = 1000;

  LossWeights loss;

  // optimization
  double gen_lr = 2e-3;
  double disc_lr = 2e-3;
  double enc_lr = 1e-4;
  double r1_gamma = 1.0;
  int r1_interval = 4;
  int gen_batch = 8;
  int batch_size = 8;
  long gen_steps = 2000;
  long enc_steps = 1000;
  double train_mask_min = 0.1;
  double train_mask_max = 0.9;
  int log_every = 50;
  int checkpoint_every = 250;

  // data
  std::string dataset_dir;  // empty: procedural toy images
  int toy_count = 500;
  int eval_count = 64;
  std::string eval_level = "Extreme";
  std::string mask_kind = "freeform";

  // seeds
  std::uint64_t seed = 1;
  std::uint64_t data_seed = 7;
  std::uint64_t eval_seed = 9001;

  // paths
  std::string out_dir = "runs/default";
  std::string gen_checkpoint;
  std::string enc_checkpoint;

  static RunConfig defaults(Profile profile);
  // Throws ConfigError on unknown keys, malformed values or failed validation.
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  void validate() const;
  std::string to_text() const;

  GeneratorConfig generator_config() const;
  EncoderConfig encoder_config() const;
  Difficulty eval_difficulty() const;
  MaskKind eval_mask_kind() const;

  // Hash of every field that affects model weights or training dynamics (step counts,
  // logging cadence and paths excluded), as 16 hex digits.
  std::string fingerprint() const;
};

}  // namespace invertfill
