#include "invertfill/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "invertfill/error.hpp"

namespace invertfill {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw InvalidInput("negative dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_numel(shape_)) {
    throw InvalidInput("tensor value count " + std::to_string(data_.size()) + " does not match shape " +
                       shape_string(shape_));
  }
}

int Tensor::dim(int i) const {
  const int r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r) throw InvalidInput("dimension index out of range for shape " + shape_string(shape_));
  return shape_[i];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw InvalidInput("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::batch_slice(int begin, int count) const {
  if (rank() < 1 || begin < 0 || count < 0 || begin + count > shape_[0]) {
    throw InvalidInput("batch slice out of range for shape " + shape_string(shape_));
  }
  Shape s = shape_;
  s[0] = count;
  const std::size_t stride = numel() / static_cast<std::size_t>(std::max(shape_[0], 1));
  std::vector<double> v(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                        data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * stride));
  return Tensor(std::move(s), std::move(v));
}

Tensor Tensor::concat_batch(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw InvalidInput("concat_batch of zero tensors");
  Shape s = parts.front().shape();
  int total = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<int>(s.size()) || !std::equal(s.begin() + 1, s.end(), p.shape().begin() + 1)) {
      throw InvalidInput("concat_batch shape mismatch: " + shape_string(s) + " vs " + shape_string(p.shape()));
    }
    total += p.shape()[0];
  }
  s[0] = total;
  std::vector<double> v;
  v.reserve(shape_numel(s));
  for (const auto& p : parts) v.insert(v.end(), p.storage().begin(), p.storage().end());
  return Tensor(std::move(s), std::move(v));
}

}  // namespace invertfill
