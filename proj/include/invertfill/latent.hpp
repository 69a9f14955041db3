#pragma once

#include <cstdint>
#include <functional>

#include <json.hpp>

#include "invertfill/tensor.hpp"

namespace invertfill {

// Maps a batch of latents [n, D] to codes [n, D'].
using MappingFn = std::function<Tensor(const Tensor& z)>;
// Draws a fresh mean estimate from n samples with the given seed.
using Resampler = std::function<Tensor(int n, std::uint64_t seed)>;

// Mean of mapping(z) over n standard-normal z of dimension `dim`, drawn in chunks.
// Samples are generated from `seed` alone, so the result depends only on (mapping, n, seed).
Tensor estimate_mean_latent(const MappingFn& mapping, int n, std::uint64_t seed, int dim = 512, int chunk = 250);

// Online/target mean-latent pair. The online code is pulled toward the target by
// online <- tau * online + (1 - tau) * target. The displacement online - target is
// carried explicitly so the geometric contraction stays exact far below the
// floating-point spacing of the codes themselves.
class MeanLatentState {
 public:
  MeanLatentState() = default;
  MeanLatentState(Tensor online, Tensor target, double tau, double tolerance, int sample_count,
                  std::uint64_t rng_seed);

  const Tensor& online() const noexcept { return online_; }
  const Tensor& target() const noexcept { return target_; }
  const Tensor& displacement() const noexcept { return displacement_; }
  double tau() const noexcept { return tau_; }
  double tolerance() const noexcept { return tolerance_; }
  int sample_count() const noexcept { return sample_count_; }
  std::uint64_t rng_seed() const noexcept { return rng_seed_; }
  long updates() const noexcept { return updates_; }
  long resamples() const noexcept { return resamples_; }

  // L2 norm of online - target.
  double distance() const;

  MeanLatentState soft_update() const;
  MeanLatentState maybe_resample(const Resampler& resampler) const;

  // Scalars as JSON; the three vectors travel as tensors alongside.
  nlohmann::json to_json() const;
  static MeanLatentState from_parts(const nlohmann::json& scalars, Tensor online, Tensor target,
                                    Tensor displacement);

  bool operator==(const MeanLatentState&) const = default;

 private:
  void validate() const;

  Tensor online_, target_, displacement_;
  double tau_ = 0.99;
  double tolerance_ = 1e-3;
  int sample_count_ = 1000;
  std::uint64_t rng_seed_ = 0;
  long updates_ = 0;
  long resamples_ = 0;
};

inline MeanLatentState soft_update(const MeanLatentState& s) { return s.soft_update(); }
inline MeanLatentState maybe_resample(const MeanLatentState& s, const Resampler& r) { return s.maybe_resample(r); }

// Seed used for the k-th resample (k starting at 1).
std::uint64_t resample_seed(std::uint64_t rng_seed, long k);

}  // namespace invertfill
