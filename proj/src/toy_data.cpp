#include "invertfill/toy_data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include "invertfill/error.hpp"
#include "invertfill/image_io.hpp"
#include "invertfill/nn.hpp"

namespace invertfill {

namespace {

using Color = std::array<double, 3>;

Color random_color(Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  return {u(rng), u(rng), u(rng)};
}

void blend(Image& img, int y, int x, const Color& c, double alpha) {
  for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = (1.0 - alpha) * img.at(ch, y, x) + alpha * c[ch];
}

}  // namespace

Image toy_image(int size, std::uint64_t seed) {
  if (size < 4 || !is_power_of_two(size)) throw InvalidInput("toy image size must be a power of two >= 4");
  Rng rng(mix_seed(seed, 0x70e));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(3, size);

  const Color sky_top = random_color(rng, -0.6, 0.4);
  const Color sky_low = random_color(rng, 0.0, 0.9);
  const Color ground = random_color(rng, -0.9, 0.2);
  const double horizon = size * (0.45 + 0.3 * u(rng));
  const double tilt = (u(rng) - 0.5) * 0.3;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double h = horizon + tilt * (x - size / 2.0);
      const double t = std::clamp(y / h, 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        img.at(c, y, x) = y < h ? (1.0 - t) * sky_top[c] + t * sky_low[c]
                                : ground[c] * (0.8 + 0.2 * (y - h) / std::max(1.0, size - h));
      }
    }
  }

  std::uniform_int_distribution<int> shape_count(1, 3);
  const int shapes = shape_count(rng);
  for (int k = 0; k < shapes; ++k) {
    const Color col = random_color(rng, -1.0, 1.0);
    const double cx = u(rng) * size, cy = u(rng) * size;
    const double r = size * (0.08 + 0.15 * u(rng));
    const int kind = static_cast<int>(u(rng) * 3);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        bool inside = false;
        if (kind == 0) inside = dx * dx + dy * dy <= r * r;
        else if (kind == 1) inside = std::abs(dx) <= r && std::abs(dy) <= 0.6 * r;
        else inside = dy <= r && dy >= -r && std::abs(dx) <= (dy + r) * 0.5;
        if (inside) blend(img, y, x, col, 1.0);
      }
    }
  }

  const Color tex_a = random_color(rng, -1.0, 1.0), tex_b = random_color(rng, -1.0, 1.0);
  const double bx = u(rng) * size, by = u(rng) * size;
  const double rx = size * (0.1 + 0.15 * u(rng)), ry = size * (0.1 + 0.15 * u(rng));
  const double freq = 2.0 * std::numbers::pi / (size * (0.05 + 0.1 * u(rng)));
  const double angle = u(rng) * std::numbers::pi;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double ex = (x + 0.5 - bx) / rx, ey = (y + 0.5 - by) / ry;
      const double d = ex * ex + ey * ey;
      if (d > 1.0) continue;
      const double phase = freq * ((x - bx) * std::cos(angle) + (y - by) * std::sin(angle));
      const double s = 0.5 + 0.5 * std::sin(phase);
      Color c;
      for (int ch = 0; ch < 3; ++ch) c[ch] = s * tex_a[ch] + (1.0 - s) * tex_b[ch];
      blend(img, y, x, c, 1.0 - d * d);
    }
  }

  Tensor px = img.pixels();
  for (auto& v : px.values()) v = std::clamp(v, -1.0, 1.0);
  return Image(std::move(px));
}

std::vector<Image> toy_dataset(int count, int size, std::uint64_t seed) {
  if (count < 0) throw InvalidInput("toy dataset count must be nonnegative");
  std::vector<Image> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) out.push_back(toy_image(size, mix_seed(seed, static_cast<std::uint64_t>(i))));
  return out;
}

std::vector<Image> load_image_directory(const std::filesystem::path& dir, int size) {
  std::vector<Image> out;
  for (const auto& path : list_png_files(dir)) {
    Image img = read_image(path);
    if (img.size() != size) {
      throw InvalidInput(path.string() + " is " + std::to_string(img.size()) + " pixels, expected " +
                         std::to_string(size));
    }
    out.push_back(std::move(img));
  }
  if (out.empty()) throw InvalidInput("no PNG images in " + dir.string());
  return out;
}

}  // namespace invertfill
