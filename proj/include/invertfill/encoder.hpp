#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "invertfill/checkpoint.hpp"
#include "invertfill/generator.hpp"
#include "invertfill/layers.hpp"

namespace invertfill {

inline constexpr int kNumScales = 3;

// Scale index r(l) in {1, 2, 3} (coarse, middle, fine) for style layer l in {1..L}.
// Layers split into three contiguous groups: for L = 14 at 3 and 7; otherwise at
// floor(3L/18) and floor(7L/18), widened so that no group is empty.
int style_scale_of_layer(int layer, int num_layers);
std::vector<int> style_scale_assignment(int num_layers);

// (v - mean(v)) / sqrt(var(v) + eps) over the entries of a vector (population variance).
Tensor instance_normalize(const Tensor& v, double eps);
// gamma * IN(w_row) + beta on [B, D] rows.
ag::Var premodulate_with(const ag::Var& w_row, const ag::Var& gamma, const ag::Var& beta, double eps);

struct EncoderConfig {
  int resolution = 64;
  std::array<int, 4> widths{64, 128, 256, 512};
  int fpn_channels = 256;
  int head_channels = 256;
  int premod_hidden = 512;
  bool use_premod = true;
  double epsilon = 1e-5;
  std::uint64_t seed = 2;

  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
};

struct EncoderOutput {
  std::array<ag::Var, kNumScales> w_prime;  // [B, 512] each; coarse, middle, fine
  std::array<ag::Var, kNumScales> recon;    // [B, 3, s/4 | s/2 | s]
};

using StructureVectors = std::array<ag::Var, kNumScales>;

struct Inversion {
  StyleCode styles;
  EncoderOutput encoded;
  StructureVectors structure;
};

// Feature-pyramid encoder with three RGB heads, three map2style heads producing w',
// three map2structure heads producing S_r and per-layer pre-modulation networks.
class Encoder {
 public:
  explicit Encoder(EncoderConfig config);
  Encoder(const Encoder&) = delete;
  Encoder& operator=(const Encoder&) = delete;
  Encoder(Encoder&&) = default;
  Encoder& operator=(Encoder&&) = default;

  Encoder clone() const;

  const EncoderConfig& config() const noexcept { return config_; }
  int num_layers() const noexcept { return num_style_layers(config_.resolution); }
  ParameterSet& parameters() noexcept { return *params_; }
  const ParameterSet& parameters() const noexcept { return *params_; }

  // corrupted: [B, 3, s, s].
  EncoderOutput encode(const Tensor& corrupted) const;
  StructureVectors map2structure(const std::array<ag::Var, kNumScales>& recon) const;
  // Affine parameters predicted from a structure vector for layer l (1-based).
  ag::Var gamma(const ag::Var& structure, int layer) const;
  ag::Var beta(const ag::Var& structure, int layer) const;
  // w*_l = gamma_l(S_r) * IN(w'_r) + beta_l(S_r).
  ag::Var premodulate(const ag::Var& w_prime_row, const ag::Var& structure, int layer) const;

  // encode -> map2structure -> premodulate for every layer. With use_premod off the
  // rows are w'_{r(l)} unchanged.
  Inversion invert(const Tensor& corrupted) const;

  Archive to_archive() const;
  static Encoder from_archive(const Archive& archive);
  void load_archive_weights(const Archive& archive);
  void save(const std::filesystem::path& path) const;
  static Encoder load(const std::filesystem::path& path);

 private:
  struct Head {
    std::vector<layers::Conv> convs;
    layers::Linear out;
    ag::Var operator()(const ag::Var& x) const;
  };
  struct PreMod {
    layers::Linear gamma_hidden, gamma_out, beta_hidden, beta_out;
  };

  void check_layer(int layer) const;

  EncoderConfig config_;
  std::unique_ptr<ParameterSet> params_;
  layers::Conv stem_;
  std::array<layers::Conv, 3> down_;
  std::array<layers::Conv, 4> res_a_, res_b_;
  std::array<layers::Conv, 4> lateral_;
  std::array<layers::Conv, kNumScales> smooth_;
  std::array<layers::Conv, kNumScales> rgb_head_;
  std::array<Head, kNumScales> map2style_;
  std::array<Head, kNumScales> map2structure_;
  std::vector<PreMod> premod_;
};

nlohmann::json encoder_header(const EncoderConfig& config);

}  // namespace invertfill
