#include "invertfill/generator.hpp"

#include <filesystem>

#include "invertfill/error.hpp"
#include "invertfill/imaging.hpp"
#include "support.hpp"

using namespace invertfill;
using testsupport::randn;

namespace {

GeneratorConfig small_config(int resolution = 16, bool branch = true) {
  GeneratorConfig c;
  c.resolution = resolution;
  c.mapping_layers = 2;
  c.channel_base = 1.0 / 32.0;
  c.channel_max = 16;
  c.rgb_branch = branch;
  c.seed = 42;
  return c;
}

StyleCode random_styles(int resolution, int batch, std::uint64_t seed) {
  StyleCode code;
  code.resolution = resolution;
  for (int l = 0; l < num_style_layers(resolution); ++l) {
    code.layers.push_back(ag::Var::constant(randn({batch, kStyleDim}, mix_seed(seed, l))));
  }
  return code;
}

struct Corrupted {
  Tensor image;
  Tensor mask;
};

Corrupted random_corrupted(int resolution, int batch, std::uint64_t seed) {
  std::vector<Mask> masks;
  for (int b = 0; b < batch; ++b) masks.push_back(generate_mask(MaskKind::Box, 0.4, resolution, seed + b));
  const Tensor m = stack_masks(masks);
  return {apply_mask_batch(randn({batch, 3, resolution, resolution}, seed).reshaped({batch, 3, resolution, resolution}), m), m};
}

// Share of energy left after removing the 2x2 block means.
double high_frequency_share(const Tensor& d) {
  const int b = d.dim(0), c = d.dim(1), s = d.dim(2);
  double total = 0.0, high = 0.0;
  for (int n = 0; n < b; ++n)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < s; y += 2)
        for (int x = 0; x < s; x += 2) {
          const double m = (d.at(n, ch, y, x) + d.at(n, ch, y + 1, x) + d.at(n, ch, y, x + 1) + d.at(n, ch, y + 1, x + 1)) / 4;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const double v = d.at(n, ch, y + dy, x + dx);
              total += v * v;
              high += (v - m) * (v - m);
            }
        }
  return high / total;
}

Tensor difference(const Tensor& a, const Tensor& b) {
  Tensor d = a;
  for (std::size_t i = 0; i < d.numel(); ++i) d[i] -= b[i];
  return d;
}

}  // namespace

TEST_CASE("style layer count follows the resolution") {
  CHECK(num_style_layers(256) == 14);
  CHECK(num_style_layers(1024) == 18);
  CHECK(num_style_layers(8) == 4);
  for (int s = 8; s <= 4096; s *= 2) CHECK(num_style_layers(s) == 2 * static_cast<int>(std::log2(s)) - 2);
  CHECK_THROWS_AS(num_style_layers(4), InvalidInput);
  CHECK_THROWS_AS(num_style_layers(96), InvalidInput);
  CHECK_THROWS_AS(num_style_layers(0), InvalidInput);
}

TEST_CASE("synthesis is deterministic and bounded") {
  const Generator g(small_config());
  const auto styles = random_styles(16, 2, 1);
  const auto cor = random_corrupted(16, 2, 5);
  ag::NoGradGuard guard;
  const Tensor a = g.synthesize(styles, cor.image, cor.mask).value();
  const Tensor b = g.synthesize(styles, cor.image, cor.mask).value();
  CHECK(a == b);
  CHECK(a.shape() == Shape{2, 3, 16, 16});
  for (double v : a.values()) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  // Noise is off, so the noise seed has no effect.
  CHECK(g.synthesize(styles, cor.image, cor.mask, 77).value() == a);
}

TEST_CASE("zeroed RGB branch reduces to the W+ generator") {
  const Generator g(small_config());
  Generator zeroed = g.clone();
  zeroed.zero_rgb_branch();
  const auto styles = random_styles(16, 2, 2);
  const auto cor = random_corrupted(16, 2, 6);
  ag::NoGradGuard guard;
  const Tensor plus = g.synthesize_w_plus(styles).value();
  CHECK(zeroed.synthesize(styles, cor.image, cor.mask).value() == plus);
  CHECK(zeroed.synthesize_w_plus(styles).value() == plus);
  CHECK_FALSE(g.synthesize(styles, cor.image, cor.mask).value() == plus);

  // A branchless generator with the same seed shares the trunk weights.
  const Generator plain(small_config(16, false));
  const auto w = ag::Var::constant(randn({1, kStyleDim}, 3));
  const auto repeated = StyleCode::repeat(w, 16);
  CHECK(plain.synthesize(repeated, cor.image.batch_slice(0, 1), cor.mask.batch_slice(0, 1)).value() ==
        zeroed.synthesize(repeated, cor.image.batch_slice(0, 1), cor.mask.batch_slice(0, 1)).value());
}

TEST_CASE("mapping network is deterministic and order preserving") {
  const Generator g(small_config());
  const Tensor z = randn({3, kStyleDim}, 8);
  const Tensor w = g.map_latent(z);
  CHECK(w == g.map_latent(z));
  for (int i = 0; i < 3; ++i) {
    const Tensor single = g.map_latent(z.batch_slice(i, 1));
    CHECK(testsupport::max_abs_diff(single, w.batch_slice(i, 1)) < 1e-12);
  }
  CHECK_THROWS_AS(g.map_latent(randn({2, 64}, 1)), InvalidInput);
}

TEST_CASE("style codes with the wrong shape are rejected") {
  const Generator g(small_config());
  auto styles = random_styles(16, 1, 3);
  styles.layers.pop_back();
  CHECK_THROWS_AS(g.synthesize_w_plus(styles), InvalidInput);
  CHECK_THROWS_AS(g.synthesize_w_plus(random_styles(32, 1, 3)), InvalidInput);
  const auto cor = random_corrupted(8, 1, 1);
  CHECK_THROWS_AS(g.synthesize(random_styles(16, 1, 3), cor.image, cor.mask), InvalidInput);
}

TEST_CASE("a masked pixel of the corrupted input reaches the output") {
  const Generator g(small_config());
  const auto styles = random_styles(16, 1, 4);
  auto cor = random_corrupted(16, 1, 9);
  int hy = -1, hx = -1;
  for (int y = 0; y < 16 && hy < 0; ++y)
    for (int x = 0; x < 16; ++x)
      if (cor.mask.at(0, 0, y, x) == 1.0) {
        hy = y;
        hx = x;
        break;
      }
  REQUIRE(hy >= 0);
  ag::NoGradGuard guard;
  const Tensor before = g.synthesize(styles, cor.image, cor.mask).value();
  cor.image.at(0, 1, hy, hx) = 0.5;
  CHECK(testsupport::max_abs_diff(before, g.synthesize(styles, cor.image, cor.mask).value()) > 0.0);
}

TEST_CASE("the last style row acts on finer detail than the first") {
  const Generator g(small_config(32));
  const auto styles = random_styles(32, 4, 5);
  const int last = styles.num_layers() - 1;
  ag::NoGradGuard guard;
  const Tensor base = g.synthesize_w_plus(styles).value();
  auto perturbed = [&](int row) {
    StyleCode s = styles;
    s.layers[row] = ag::Var::constant(randn({4, kStyleDim}, 900 + row));
    return difference(g.synthesize_w_plus(s).value(), base);
  };
  const double fine = high_frequency_share(perturbed(last));
  const double coarse = high_frequency_share(perturbed(0));
  CAPTURE(fine);
  CAPTURE(coarse);
  CHECK(fine > coarse);
}

TEST_CASE("every style row receives a gradient") {
  const Generator g(small_config(8));
  auto styles = random_styles(8, 1, 6);
  for (auto& row : styles.layers) row = ag::Var::parameter(row.value());
  auto f = [&] { return testsupport::probe(g.synthesize_w_plus(styles)); };
  ag::backward(f());
  for (int l = 0; l < styles.num_layers(); ++l) {
    CAPTURE(l);
    double norm = 0.0;
    for (double v : styles.layers[l].grad().values()) norm += v * v;
    CHECK(norm > 0.0);
  }
  for (int l = 0; l < styles.num_layers(); ++l) {
    CAPTURE(l);
    CHECK(testsupport::gradcheck(f, styles.layers[l], 12) < testsupport::kGradTolerance);
  }
}

TEST_CASE("every parameter tensor receives a gradient") {
  Generator g(small_config());
  const auto cor = random_corrupted(16, 2, 7);
  const auto z = ag::Var::constant(randn({2, kStyleDim}, 10));
  const auto styles = StyleCode::repeat(g.map_latent(z), 16);
  g.parameters().zero_grad();
  ag::backward(ag::sum(ag::square(g.synthesize(styles, cor.image, cor.mask))));
  for (const auto& [name, v] : g.parameters()) {
    CAPTURE(name);
    double norm = 0.0;
    for (double x : v.grad().values()) norm += x * x;
    CHECK(norm > 0.0);
  }
}

TEST_CASE("synthesis parameters match finite differences") {
  Generator g(small_config(8));
  const auto styles = random_styles(8, 1, 11);
  const auto cor = random_corrupted(8, 1, 12);
  auto f = [&] { return testsupport::probe(g.synthesize(styles, cor.image, cor.mask)); };
  for (const char* name : {"synthesis.const", "synthesis.b8.conv0.weight", "synthesis.b8.torgb.affine.weight",
                           "branch.stem.weight", "branch.down4.weight"}) {
    CAPTURE(name);
    CHECK(testsupport::gradcheck(f, g.parameters().at(name), 16) < testsupport::kGradTolerance);
  }
}

TEST_CASE("trunk and branch freezing") {
  Generator g(small_config());
  g.set_trunk_trainable(false);
  for (const auto& [name, v] : g.parameters()) CHECK(v.requires_grad() == !Generator::is_trunk_parameter(name));
  g.set_branch_trainable(false);
  for (const auto& [name, v] : g.parameters()) CHECK_FALSE(v.requires_grad());
}

TEST_CASE("archive round trip is bit exact") {
  const Generator g(small_config());
  const auto dir = std::filesystem::temp_directory_path() / "invertfill_test_generator";
  std::filesystem::create_directories(dir);
  g.save(dir / "g.ifa");
  const Generator back = Generator::load(dir / "g.ifa");
  CHECK(back.parameters().state() == g.parameters().state());
  CHECK(back.config().to_json() == g.config().to_json());
  const auto styles = random_styles(16, 1, 13);
  ag::NoGradGuard guard;
  CHECK(back.synthesize_w_plus(styles).value() == g.synthesize_w_plus(styles).value());
}

TEST_CASE("parameter count depends only on the architecture") {
  auto other_seed = small_config();
  other_seed.seed = 7;
  CHECK(Generator(small_config()).parameters().scalar_count() == Generator(other_seed).parameters().scalar_count());
  auto wider = small_config();
  wider.channel_base *= 2;
  CHECK(Generator(wider).parameters().scalar_count() > Generator(small_config()).parameters().scalar_count());
}

TEST_CASE("mismatched archives are rejected") {
  const Generator g(small_config());
  Generator other(small_config(32));
  CHECK_THROWS_AS(other.load_archive_weights(g.to_archive()), CheckpointMismatch);
  auto no_noise = small_config();
  no_noise.noise = true;
  Generator noisy(no_noise);
  CHECK_THROWS_AS(noisy.load_archive_weights(g.to_archive()), CheckpointMismatch);
  Archive wrong = g.to_archive();
  wrong.header["kind"] = "encoder";
  CHECK_THROWS_AS(Generator::from_archive(wrong), CheckpointMismatch);
}
