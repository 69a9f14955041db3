#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "invertfill/autograd.hpp"
#include "invertfill/nn.hpp"

namespace testsupport {

using invertfill::Shape;
using invertfill::Tensor;
namespace ag = invertfill::ag;

inline constexpr double kGradTolerance = 1e-3;
inline constexpr double kGradStep = 1e-4;
// Below this magnitude both gradients count as zero.
inline constexpr double kGradFloor = 1e-7;

inline Tensor randn(Shape shape, std::uint64_t seed, double stddev = 1.0) {
  invertfill::Rng rng(seed);
  return invertfill::random_normal(std::move(shape), rng, stddev);
}

inline Tensor uniform(Shape shape, std::uint64_t seed, double lo, double hi) {
  invertfill::Rng rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// Scalar sum(y * R) with a fixed random R, so every output entry matters.
inline ag::Var probe(const ag::Var& y, std::uint64_t seed = 99) {
  return ag::sum(ag::mul(y, ag::Var::constant(randn(y.shape(), seed))));
}

// Largest relative disagreement between the autodiff gradient of f with respect to
// `param` and central differences, over up to max_entries evenly spread entries.
inline double gradcheck(const std::function<ag::Var()>& f, ag::Var param, std::size_t max_entries = 48,
                        double h = kGradStep) {
  param.zero_grad();
  ag::backward(f());
  const Tensor analytic = param.grad().empty() ? Tensor(param.shape()) : param.grad();
  param.zero_grad();
  const std::size_t n = param.numel();
  const std::size_t stride = std::max<std::size_t>(1, n / max_entries);
  double worst = 0.0;
  for (std::size_t i = 0; i < n; i += stride) {
    double& v = param.mutable_value()[i];
    const double saved = v;
    double fp, fm;
    {
      ag::NoGradGuard guard;
      v = saved + h;
      fp = f().item();
      v = saved - h;
      fm = f().item();
    }
    v = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), kGradFloor});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
  }
  return worst;
}

}  // namespace testsupport
