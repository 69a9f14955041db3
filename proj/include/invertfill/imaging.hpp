#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "invertfill/tensor.hpp"

namespace invertfill {

bool is_power_of_two(int v) noexcept;

// channels x size x size grid with values in [-1, 1]. size is a power of two >= 4.
class Image {
 public:
  Image() = default;
  Image(int channels, int size, double fill = 0.0);
  // pixels must be [C, S, S]; values must be finite.
  explicit Image(Tensor pixels);

  int channels() const noexcept { return pixels_.empty() ? 0 : pixels_.dim(0); }
  int size() const noexcept { return pixels_.empty() ? 0 : pixels_.dim(1); }
  const Tensor& pixels() const noexcept { return pixels_; }

  double at(int c, int y, int x) const noexcept { return pixels_[index(c, y, x)]; }
  double& at(int c, int y, int x) noexcept { return pixels_[index(c, y, x)]; }

  bool operator==(const Image& other) const = default;

 private:
  std::size_t index(int c, int y, int x) const noexcept {
    return (static_cast<std::size_t>(c) * size() + y) * size() + x;
  }
  Tensor pixels_;
};

// Binary 1 x size x size grid; 1 marks a corrupted (invisible) pixel.
class Mask {
 public:
  Mask() = default;
  explicit Mask(int size);
  // values must be [1, S, S] (or [S, S]) with every entry in {0, 1}.
  explicit Mask(const Tensor& values);

  int size() const noexcept { return size_; }
  bool at(int y, int x) const noexcept { return bits_[static_cast<std::size_t>(y) * size_ + x] != 0; }
  void set(int y, int x, bool hole);
  std::size_t hole_count() const noexcept { return holes_; }
  double coverage() const noexcept;
  // [1, S, S] tensor of 0/1 doubles.
  Tensor tensor() const;

  bool operator==(const Mask& other) const { return size_ == other.size_ && bits_ == other.bits_; }

 private:
  int size_ = 0;
  std::vector<std::uint8_t> bits_;
  std::size_t holes_ = 0;
};

enum class Difficulty { Hard, Extreme, All };

struct CoverageRange {
  double low;
  double high;
  bool contains(double c) const noexcept { return c >= low && c <= high; }
};

CoverageRange coverage_range(Difficulty level) noexcept;
std::string_view to_string(Difficulty level) noexcept;
Difficulty difficulty_from_string(std::string_view name);

// Narrowest matching level: Hard or Extreme first, else All, else nothing.
std::optional<Difficulty> classify_coverage(double coverage) noexcept;
std::optional<Difficulty> classify_mask(const Mask& mask) noexcept;

enum class MaskKind { Freeform, Box, Outpaint };
std::string_view to_string(MaskKind kind) noexcept;
MaskKind mask_kind_from_string(std::string_view name);

// Smallest coverage an outpainting mask can have at this size (a one-pixel frame).
double outpaint_min_coverage(int size) noexcept;

// Deterministic procedural mask whose coverage is within half a pixel of target.
Mask generate_mask(MaskKind kind, double target_coverage, int size, std::uint64_t seed);

// I * (1 - M): masked pixels become exactly 0.
Image apply_mask(const Image& image, const Mask& mask);
// I * (1 - M) + G * M, selected per pixel so both sides are copied bit-exactly.
Image compose(const Image& original, const Image& generated, const Mask& mask);
// True when every unmasked pixel of candidate equals original bit-for-bit.
bool satisfies_hard_constraint(const Image& original, const Image& candidate, const Mask& mask);

// Batched helpers over [B, C, S, S] image and [B, 1, S, S] mask tensors.
Tensor stack_images(const std::vector<Image>& images);
Tensor stack_masks(const std::vector<Mask>& masks);
Image image_from_batch(const Tensor& batch, int index);
Tensor apply_mask_batch(const Tensor& images, const Tensor& masks);

}  // namespace invertfill
