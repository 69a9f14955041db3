#include "invertfill/imaging.hpp"

#include <algorithm>
#include <cctype>
#include <bit>
#include <cmath>

#include "invertfill/error.hpp"
#include "invertfill/nn.hpp"

namespace invertfill {

bool is_power_of_two(int v) noexcept { return v > 0 && (v & (v - 1)) == 0; }

namespace {

void check_size(int size) {
  if (size < 4 || !is_power_of_two(size)) {
    throw InvalidInput("image size must be a power of two >= 4, got " + std::to_string(size));
  }
}

void check_pair(const Image& image, const Mask& mask, const char* op) {
  if (image.size() != mask.size()) {
    throw InvalidInput(std::string(op) + ": image is " + std::to_string(image.size()) + "px but mask is " +
                       std::to_string(mask.size()) + "px");
  }
}

}  // namespace

Image::Image(int channels, int size, double fill) {
  check_size(size);
  if (channels < 1) throw InvalidInput("image needs at least one channel");
  pixels_ = Tensor({channels, size, size}, fill);
}

Image::Image(Tensor pixels) : pixels_(std::move(pixels)) {
  if (pixels_.rank() != 3 || pixels_.dim(1) != pixels_.dim(2)) {
    throw InvalidInput("image tensor must be [C,S,S], got " + shape_string(pixels_.shape()));
  }
  check_size(pixels_.dim(1));
  if (!pixels_.all_finite()) throw InvalidInput("image contains non-finite values");
}

Mask::Mask(int size) : size_(size), bits_(static_cast<std::size_t>(size) * size, 0) { check_size(size); }

Mask::Mask(const Tensor& values) {
  const bool ok = (values.rank() == 3 && values.dim(0) == 1 && values.dim(1) == values.dim(2)) ||
                  (values.rank() == 2 && values.dim(0) == values.dim(1));
  if (!ok) throw InvalidInput("mask tensor must be [1,S,S] or [S,S], got " + shape_string(values.shape()));
  size_ = values.dim(-1);
  check_size(size_);
  bits_.resize(values.numel());
  for (std::size_t i = 0; i < values.numel(); ++i) {
    if (values[i] == 1.0) {
      bits_[i] = 1;
      ++holes_;
    } else if (values[i] != 0.0) {
      throw InvalidInput("mask is not binary: found value " + std::to_string(values[i]));
    }
  }
}

void Mask::set(int y, int x, bool hole) {
  auto& b = bits_[static_cast<std::size_t>(y) * size_ + x];
  if (b && !hole) --holes_;
  if (!b && hole) ++holes_;
  b = hole ? 1 : 0;
}

double Mask::coverage() const noexcept {
  return bits_.empty() ? 0.0 : static_cast<double>(holes_) / static_cast<double>(bits_.size());
}

Tensor Mask::tensor() const {
  Tensor t({1, size_, size_});
  for (std::size_t i = 0; i < bits_.size(); ++i) t[i] = bits_[i];
  return t;
}

CoverageRange coverage_range(Difficulty level) noexcept {
  switch (level) {
    case Difficulty::Hard: return {0.50, 0.60};
    case Difficulty::Extreme: return {0.70, 0.90};
    case Difficulty::All: return {0.10, 0.90};
  }
  return {0.0, 0.0};
}

std::string_view to_string(Difficulty level) noexcept {
  switch (level) {
    case Difficulty::Hard: return "Hard";
    case Difficulty::Extreme: return "Extreme";
    case Difficulty::All: return "All";
  }
  return "?";
}

Difficulty difficulty_from_string(std::string_view name) {
  std::string lower(name);
  for (auto& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  if (lower == "hard") return Difficulty::Hard;
  if (lower == "extreme") return Difficulty::Extreme;
  if (lower == "all") return Difficulty::All;
  throw InvalidInput("unknown difficulty level: " + std::string(name));
}

std::optional<Difficulty> classify_coverage(double coverage) noexcept {
  for (auto level : {Difficulty::Hard, Difficulty::Extreme, Difficulty::All}) {
    if (coverage_range(level).contains(coverage)) return level;
  }
  return std::nullopt;
}

std::optional<Difficulty> classify_mask(const Mask& mask) noexcept { return classify_coverage(mask.coverage()); }

std::string_view to_string(MaskKind kind) noexcept {
  switch (kind) {
    case MaskKind::Freeform: return "freeform";
    case MaskKind::Box: return "box";
    case MaskKind::Outpaint: return "outpaint";
  }
  return "?";
}

MaskKind mask_kind_from_string(std::string_view name) {
  if (name == "freeform") return MaskKind::Freeform;
  if (name == "box") return MaskKind::Box;
  if (name == "outpaint") return MaskKind::Outpaint;
  throw InvalidInput("unknown mask kind: " + std::string(name));
}

double outpaint_min_coverage(int size) noexcept {
  const double inner = static_cast<double>(size - 2) / size;
  return 1.0 - inner * inner;
}

namespace {

class Canvas {
 public:
  explicit Canvas(int size) : size_(size), mask_(size) {}

  void stamp_disk(double cx, double cy, double radius) {
    const int y0 = std::max(0, int(std::floor(cy - radius))), y1 = std::min(size_ - 1, int(std::ceil(cy + radius)));
    const int x0 = std::max(0, int(std::floor(cx - radius))), x1 = std::min(size_ - 1, int(std::ceil(cx + radius)));
    const double r2 = radius * radius;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
        if (dx * dx + dy * dy <= r2) mask_.set(y, x, true);
      }
  }

  void line(double x0, double y0, double x1, double y1, double width) {
    const double radius = std::max(0.5, width / 2.0);
    const double len = std::hypot(x1 - x0, y1 - y0);
    const double step = std::max(0.5, radius / 2.0);
    const int n = std::max(1, int(std::ceil(len / step)));
    for (int i = 0; i <= n; ++i) {
      const double t = double(i) / n;
      stamp_disk(x0 + t * (x1 - x0), y0 + t * (y1 - y0), radius);
    }
  }

  void rect(int x, int y, int w, int h, bool hole) {
    for (int yy = std::max(0, y); yy < std::min(size_, y + h); ++yy)
      for (int xx = std::max(0, x); xx < std::min(size_, x + w); ++xx) mask_.set(yy, xx, hole);
  }

  double coverage() const { return mask_.coverage(); }
  Mask& mask() { return mask_; }

 private:
  int size_;
  Mask mask_;
};

// Grows (or shrinks) the hole region one boundary ring at a time until exactly
// target_count pixels are holes. A partial ring is taken as a contiguous run of the
// ring's scan order starting at a random offset.
void adjust_to_count(Mask& mask, std::size_t target_count, Rng& rng) {
  const int n = mask.size();
  auto boundary = [&](bool grow) {
    std::vector<std::pair<int, int>> ring;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        if (mask.at(y, x) == grow) continue;  // candidates have the opposite state
        bool edge = false;
        for (int dy = -1; dy <= 1 && !edge; ++dy)
          for (int dx = -1; dx <= 1 && !edge; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if ((dy || dx) && yy >= 0 && yy < n && xx >= 0 && xx < n && mask.at(yy, xx) == grow) edge = true;
          }
        if (edge) ring.emplace_back(y, x);
      }
    return ring;
  };

  while (mask.hole_count() != target_count) {
    const bool grow = mask.hole_count() < target_count;
    auto ring = boundary(grow);
    if (ring.empty()) {
      // All pixels share one state; seed the opposite state at a random pixel.
      std::uniform_int_distribution<int> pick(0, n - 1);
      mask.set(pick(rng), pick(rng), grow);
      continue;
    }
    const std::size_t needed = grow ? target_count - mask.hole_count() : mask.hole_count() - target_count;
    if (ring.size() <= needed) {
      for (auto [y, x] : ring) mask.set(y, x, grow);
      continue;
    }
    std::uniform_int_distribution<std::size_t> start_dist(0, ring.size() - 1);
    const std::size_t start = start_dist(rng);
    for (std::size_t i = 0; i < needed; ++i) {
      auto [y, x] = ring[(start + i) % ring.size()];
      mask.set(y, x, grow);
    }
  }
}

void draw_freeform(Canvas& canvas, int size, double target, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> vertices(3, 8);
  const double wmin = std::max(1.0, size / 16.0), wmax = std::max(1.0, size / 8.0);
  const double lmin = size / 8.0, lmax = size / 3.0;
  const double pi = std::acos(-1.0);
  while (canvas.coverage() < target) {
    const int nv = vertices(rng);
    const double width = wmin + unit(rng) * (wmax - wmin);
    double x = unit(rng) * size, y = unit(rng) * size;
    double angle = unit(rng) * 2.0 * pi;
    for (int v = 1; v < nv; ++v) {
      angle += (unit(rng) - 0.5) * pi;
      const double len = lmin + unit(rng) * (lmax - lmin);
      const double nx = std::clamp(x + len * std::cos(angle), 0.0, double(size));
      const double ny = std::clamp(y + len * std::sin(angle), 0.0, double(size));
      canvas.line(x, y, nx, ny, width);
      x = nx;
      y = ny;
    }
  }
}

void draw_boxes(Canvas& canvas, int size, double target, Rng& rng) {
  const int smin = std::max(1, size / 8), smax = std::max(smin, size / 2);
  std::uniform_int_distribution<int> side(smin, smax);
  std::uniform_int_distribution<int> pos(0, size - 1);
  while (canvas.coverage() < target) {
    const int w = side(rng), h = side(rng);
    canvas.rect(pos(rng) - w / 2, pos(rng) - h / 2, w, h, true);
  }
}

void draw_outpaint(Canvas& canvas, int size, double target, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> mode_dist(0, 4);
  canvas.rect(0, 0, size, size, true);
  const double keep = (1.0 - target) * size * size;
  const int mode = mode_dist(rng);
  if (mode == 0) {
    // Central window with a random aspect ratio.
    const int limit = size - 2;
    const double aspect = 0.75 + unit(rng) * (4.0 / 3.0 - 0.75);
    int w = std::clamp(int(std::lround(std::sqrt(keep * aspect))), 1, limit);
    int h = std::clamp(int(std::lround(keep / w)), 1, limit);
    w = std::clamp(int(std::lround(keep / h)), 1, limit);
    canvas.rect((size - w) / 2, (size - h) / 2, w, h, false);
  } else {
    // Visible band along one side.
    const int band = std::clamp(int(std::lround(keep / size)), 1, size - 1);
    switch (mode) {
      case 1: canvas.rect(0, 0, band, size, false); break;
      case 2: canvas.rect(size - band, 0, band, size, false); break;
      case 3: canvas.rect(0, 0, size, band, false); break;
      default: canvas.rect(0, size - band, size, band, false); break;
    }
  }
}

}  // namespace

Mask generate_mask(MaskKind kind, double target_coverage, int size, std::uint64_t seed) {
  check_size(size);
  if (!(target_coverage > 0.0 && target_coverage < 1.0)) {
    throw InvalidInput("target coverage must lie in (0, 1), got " + std::to_string(target_coverage));
  }
  const std::size_t total = static_cast<std::size_t>(size) * size;
  const std::size_t target_count = static_cast<std::size_t>(std::llround(target_coverage * double(total)));
  if (target_count == 0 || target_count == total) {
    throw InvalidInput("target coverage " + std::to_string(target_coverage) + " rounds to an empty or full mask at " +
                       std::to_string(size) + "px");
  }
  if (kind == MaskKind::Outpaint && target_coverage < outpaint_min_coverage(size)) {
    throw InvalidInput("outpaint coverage " + std::to_string(target_coverage) + " is below the one-pixel frame minimum " +
                       std::to_string(outpaint_min_coverage(size)));
  }

  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(kind) + 101));
  Canvas canvas(size);
  switch (kind) {
    case MaskKind::Freeform: draw_freeform(canvas, size, target_coverage, rng); break;
    case MaskKind::Box: draw_boxes(canvas, size, target_coverage, rng); break;
    case MaskKind::Outpaint: draw_outpaint(canvas, size, target_coverage, rng); break;
  }
  adjust_to_count(canvas.mask(), target_count, rng);
  return canvas.mask();
}

Image apply_mask(const Image& image, const Mask& mask) {
  check_pair(image, mask, "apply_mask");
  Tensor out = image.pixels();
  const int s = image.size();
  for (int c = 0; c < image.channels(); ++c)
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        if (mask.at(y, x)) out[(static_cast<std::size_t>(c) * s + y) * s + x] = 0.0;
  return Image(std::move(out));
}

Image compose(const Image& original, const Image& generated, const Mask& mask) {
  check_pair(original, mask, "compose");
  check_pair(generated, mask, "compose");
  if (original.channels() != generated.channels()) throw InvalidInput("compose: channel count mismatch");
  Tensor out = original.pixels();
  const int s = original.size();
  for (int c = 0; c < original.channels(); ++c)
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        if (mask.at(y, x)) out[(static_cast<std::size_t>(c) * s + y) * s + x] = generated.at(c, y, x);
  return Image(std::move(out));
}

bool satisfies_hard_constraint(const Image& original, const Image& candidate, const Mask& mask) {
  if (original.size() != mask.size() || candidate.size() != mask.size() ||
      original.channels() != candidate.channels()) {
    return false;
  }
  const int s = original.size();
  for (int c = 0; c < original.channels(); ++c)
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        if (!mask.at(y, x) && std::bit_cast<std::uint64_t>(original.at(c, y, x)) !=
                                  std::bit_cast<std::uint64_t>(candidate.at(c, y, x))) {
          return false;
        }
  return true;
}

Tensor stack_images(const std::vector<Image>& images) {
  std::vector<Tensor> parts;
  parts.reserve(images.size());
  for (const auto& im : images) {
    Shape s = im.pixels().shape();
    s.insert(s.begin(), 1);
    parts.push_back(im.pixels().reshaped(s));
  }
  return Tensor::concat_batch(parts);
}

Tensor stack_masks(const std::vector<Mask>& masks) {
  std::vector<Tensor> parts;
  parts.reserve(masks.size());
  for (const auto& m : masks) parts.push_back(m.tensor().reshaped({1, 1, m.size(), m.size()}));
  return Tensor::concat_batch(parts);
}

Image image_from_batch(const Tensor& batch, int index) {
  Tensor one = batch.batch_slice(index, 1);
  return Image(one.reshaped({batch.dim(1), batch.dim(2), batch.dim(3)}));
}

Tensor apply_mask_batch(const Tensor& images, const Tensor& masks) {
  if (images.rank() != 4 || masks.rank() != 4 || masks.dim(1) != 1 || images.dim(0) != masks.dim(0) ||
      images.dim(2) != masks.dim(2) || images.dim(3) != masks.dim(3)) {
    throw InvalidInput("apply_mask_batch: images " + shape_string(images.shape()) + " vs masks " +
                       shape_string(masks.shape()));
  }
  Tensor out = images;
  const int b = images.dim(0), c = images.dim(1);
  const long plane = long(images.dim(2)) * images.dim(3);
  for (int n = 0; n < b; ++n)
    for (int ch = 0; ch < c; ++ch)
      for (long i = 0; i < plane; ++i)
        if (masks[n * plane + i] != 0.0) out[(long(n) * c + ch) * plane + i] = 0.0;
  return out;
}

}  // namespace invertfill
