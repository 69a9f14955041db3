#include "invertfill/latent.hpp"

#include <cmath>

#include "invertfill/error.hpp"
#include "invertfill/nn.hpp"

namespace invertfill {

Tensor estimate_mean_latent(const MappingFn& mapping, int n, std::uint64_t seed, int dim, int chunk) {
  if (n < 1) throw InvalidInput("estimate_mean_latent needs n >= 1, got " + std::to_string(n));
  if (dim < 1 || chunk < 1) throw InvalidInput("estimate_mean_latent: dim and chunk must be positive");
  Rng rng(seed);
  Tensor mean;
  long seen = 0;
  for (int start = 0; start < n; start += chunk) {
    const int count = std::min(chunk, n - start);
    const Tensor w = mapping(random_normal({count, dim}, rng));
    if (w.rank() != 2 || w.dim(0) != count) {
      throw InvalidInput("mapping returned shape " + shape_string(w.shape()) + " for " + std::to_string(count) +
                         " samples");
    }
    if (mean.empty()) mean = Tensor({w.dim(1)});
    if (w.dim(1) != mean.dim(0)) throw InvalidInput("mapping output width changed between chunks");
    // Running mean: a constant mapping reproduces its value exactly.
    for (int i = 0; i < count; ++i) {
      ++seen;
      for (int j = 0; j < w.dim(1); ++j) mean[j] += (w.at(i, j) - mean[j]) / static_cast<double>(seen);
    }
  }
  return mean;
}

std::uint64_t resample_seed(std::uint64_t rng_seed, long k) {
  return mix_seed(rng_seed ^ 0x5ca1ab1eULL, static_cast<std::uint64_t>(k));
}

MeanLatentState::MeanLatentState(Tensor online, Tensor target, double tau, double tolerance, int sample_count,
                                 std::uint64_t rng_seed)
    : online_(std::move(online)),
      target_(std::move(target)),
      tau_(tau),
      tolerance_(tolerance),
      sample_count_(sample_count),
      rng_seed_(rng_seed) {
  if (!online_.same_shape(target_)) {
    throw InvalidInput("online/target shape mismatch: " + shape_string(online_.shape()) + " vs " +
                       shape_string(target_.shape()));
  }
  displacement_ = Tensor(online_.shape());
  for (std::size_t i = 0; i < online_.numel(); ++i) displacement_[i] = online_[i] - target_[i];
  validate();
}

void MeanLatentState::validate() const {
  if (!(tau_ >= 0.0 && tau_ < 1.0)) throw InvalidInput("tau must lie in [0, 1), got " + std::to_string(tau_));
  if (!(tolerance_ > 0.0)) throw InvalidInput("SML tolerance must be positive");
  if (sample_count_ < 1) throw InvalidInput("SML sample count must be >= 1");
  if (!online_.all_finite() || !target_.all_finite()) throw InvalidInput("mean latent codes must be finite");
}

double MeanLatentState::distance() const {
  double s = 0.0;
  for (double d : displacement_.values()) s += d * d;
  return std::sqrt(s);
}

MeanLatentState MeanLatentState::soft_update() const {
  MeanLatentState next = *this;
  for (std::size_t i = 0; i < next.displacement_.numel(); ++i) {
    next.displacement_[i] *= tau_;
    next.online_[i] = target_[i] + next.displacement_[i];
  }
  ++next.updates_;
  return next;
}

MeanLatentState MeanLatentState::maybe_resample(const Resampler& resampler) const {
  if (distance() > tolerance_) return *this;
  MeanLatentState next = *this;
  next.resamples_ = resamples_ + 1;
  Tensor fresh = resampler(sample_count_, resample_seed(rng_seed_, next.resamples_));
  if (fresh.numel() != target_.numel() || !fresh.all_finite()) {
    throw InvalidInput("resampler returned an invalid target of shape " + shape_string(fresh.shape()));
  }
  next.target_ = fresh.reshaped(target_.shape());
  for (std::size_t i = 0; i < online_.numel(); ++i) next.displacement_[i] = online_[i] - next.target_[i];
  return next;
}

nlohmann::json MeanLatentState::to_json() const {
  return {{"tau", tau_},         {"tolerance", tolerance_}, {"sample_count", sample_count_},
          {"rng_seed", rng_seed_}, {"updates", updates_},     {"resamples", resamples_}};
}

MeanLatentState MeanLatentState::from_parts(const nlohmann::json& scalars, Tensor online, Tensor target,
                                            Tensor displacement) {
  MeanLatentState s;
  try {
    s.tau_ = scalars.at("tau");
    s.tolerance_ = scalars.at("tolerance");
    s.sample_count_ = scalars.at("sample_count");
    s.rng_seed_ = scalars.at("rng_seed");
    s.updates_ = scalars.at("updates");
    s.resamples_ = scalars.at("resamples");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointMismatch(std::string("mean latent state incomplete: ") + e.what());
  }
  if (!online.same_shape(target) || !online.same_shape(displacement)) {
    throw CheckpointMismatch("mean latent tensors disagree in shape");
  }
  s.online_ = std::move(online);
  s.target_ = std::move(target);
  s.displacement_ = std::move(displacement);
  s.validate();
  return s;
}

}  // namespace invertfill
