#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "invertfill/autograd.hpp"

namespace invertfill {

// SplitMix64 finalizer; used to derive independent seeds from (seed, stream) pairs.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

using Rng = std::mt19937_64;

Tensor random_normal(Shape shape, Rng& rng, double stddev = 1.0);

using StateDict = std::map<std::string, Tensor>;

// Named, ordered collection of trainable tensors. Networks register their parameters
// here at construction; the registry drives serialization, freezing and optimizers.
class ParameterSet {
 public:
  ag::Var add(const std::string& name, Tensor init);
  const ag::Var& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::vector<std::string> names() const;
  std::vector<ag::Var> with_prefix(const std::string& prefix) const;
  std::vector<ag::Var> all() const;
  std::size_t scalar_count() const;

  void set_trainable(const std::string& prefix, bool trainable);
  void zero_grad();

  StateDict state() const;
  // Copies values in; every name and shape must match.
  void load_state(const StateDict& state);

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, ag::Var> params_;
};

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a fixed list of named parameters. Parameters without a gradient are skipped.
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, ag::Var>> params, AdamOptions options);

  void step();
  void zero_grad();
  long steps_taken() const noexcept { return t_; }
  const AdamOptions& options() const noexcept { return options_; }

  StateDict state() const;
  void load_state(const StateDict& state, long steps);

 private:
  std::vector<std::pair<std::string, ag::Var>> params_;
  std::vector<Tensor> m_, v_;
  AdamOptions options_;
  long t_ = 0;
};

std::vector<std::pair<std::string, ag::Var>> named_with_prefix(const ParameterSet& set, const std::string& prefix,
                                                               const std::string& rename_prefix = "");

}  // namespace invertfill

namespace invertfill {

// Stable 64-bit FNV-1a, used to derive per-parameter init streams from names.
std::uint64_t fnv1a(std::string_view text) noexcept;

}  // namespace invertfill
