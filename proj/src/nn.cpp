#include "invertfill/nn.hpp"

#include <cmath>

#include "invertfill/error.hpp"

namespace invertfill {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Tensor random_normal(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

ag::Var ParameterSet::add(const std::string& name, Tensor init) {
  if (params_.count(name)) throw InvalidInput("duplicate parameter name: " + name);
  auto v = ag::Var::parameter(std::move(init));
  params_.emplace(name, v);
  return v;
}

const ag::Var& ParameterSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw InvalidInput("unknown parameter: " + name);
  return it->second;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : params_) out.push_back(k);
  return out;
}

std::vector<ag::Var> ParameterSet::with_prefix(const std::string& prefix) const {
  std::vector<ag::Var> out;
  for (const auto& [k, v] : params_)
    if (k.rfind(prefix, 0) == 0) out.push_back(v);
  return out;
}

std::vector<ag::Var> ParameterSet::all() const { return with_prefix(""); }

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [k, v] : params_) n += v.numel();
  return n;
}

void ParameterSet::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& [k, v] : params_) {
    if (k.rfind(prefix, 0) == 0) {
      ag::Var handle = v;
      handle.set_requires_grad(trainable);
      if (!trainable) handle.zero_grad();
    }
  }
}

void ParameterSet::zero_grad() {
  for (auto& [k, v] : params_) {
    ag::Var handle = v;
    handle.zero_grad();
  }
}

StateDict ParameterSet::state() const {
  StateDict out;
  for (const auto& [k, v] : params_) out.emplace(k, v.value());
  return out;
}

void ParameterSet::load_state(const StateDict& state) {
  if (state.size() != params_.size()) {
    throw CheckpointMismatch("parameter count mismatch: expected " + std::to_string(params_.size()) + ", got " +
                             std::to_string(state.size()));
  }
  for (auto& [k, v] : params_) {
    auto it = state.find(k);
    if (it == state.end()) throw CheckpointMismatch("missing parameter: " + k);
    if (it->second.shape() != v.shape()) {
      throw CheckpointMismatch("shape mismatch for " + k + ": " + shape_string(it->second.shape()) + " vs " +
                               shape_string(v.shape()));
    }
    ag::Var handle = v;
    handle.mutable_value() = it->second;
  }
}

std::vector<std::pair<std::string, ag::Var>> named_with_prefix(const ParameterSet& set, const std::string& prefix,
                                                               const std::string& rename_prefix) {
  std::vector<std::pair<std::string, ag::Var>> out;
  for (const auto& [k, v] : set)
    if (k.rfind(prefix, 0) == 0) out.emplace_back(rename_prefix + k, v);
  return out;
}

Adam::Adam(std::vector<std::pair<std::string, ag::Var>> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& [name, p] : params_) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

void Adam::step() {
  ++t_;
  const double lr = options_.learning_rate;
  const double c1 = 1.0 - std::pow(options_.beta1, double(t_));
  const double c2 = 1.0 - std::pow(options_.beta2, double(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    ag::Var& p = params_[i].second;
    if (p.grad().empty()) continue;
    const Tensor& g = p.grad();
    Tensor& w = p.mutable_value();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < w.numel(); ++j) {
      m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * g[j];
      v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * g[j] * g[j];
      const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.eps);
      if (lr != 0.0) w[j] -= lr * update;
    }
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

StateDict Adam::state() const {
  StateDict out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.emplace("m/" + params_[i].first, m_[i]);
    out.emplace("v/" + params_[i].first, v_[i]);
  }
  return out;
}

void Adam::load_state(const StateDict& state, long steps) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto m = state.find("m/" + params_[i].first);
    auto v = state.find("v/" + params_[i].first);
    if (m == state.end() || v == state.end()) throw CheckpointMismatch("missing optimizer state for " + params_[i].first);
    if (m->second.shape() != m_[i].shape() || v->second.shape() != v_[i].shape()) {
      throw CheckpointMismatch("optimizer state shape mismatch for " + params_[i].first);
    }
    m_[i] = m->second;
    v_[i] = v->second;
  }
  t_ = steps;
}

}  // namespace invertfill

namespace invertfill {

std::uint64_t fnv1a(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace invertfill
