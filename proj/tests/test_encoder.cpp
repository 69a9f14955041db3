#include "invertfill/encoder.hpp"

#include <filesystem>
#include <numeric>

#include "invertfill/error.hpp"
#include "support.hpp"

using namespace invertfill;
using testsupport::randn;

namespace {

EncoderConfig small_config(int resolution = 16) {
  EncoderConfig c;
  c.resolution = resolution;
  c.widths = {4, 6, 8, 8};
  c.fpn_channels = 6;
  c.head_channels = 8;
  c.premod_hidden = 12;
  c.seed = 5;
  return c;
}

// Replaces the zero-initialized final affine layers so gamma and beta vary with S.
void randomize_premod(Encoder& e, std::uint64_t seed) {
  for (const auto& [name, v] : e.parameters()) {
    if (name.rfind("premod.", 0) != 0 || name.find(".fc1.") == std::string::npos) continue;
    ag::Var handle = v;
    handle.mutable_value() = randn(v.shape(), mix_seed(seed, fnv1a(name)), 0.5);
  }
}

double mean_of(const Tensor& t) { return std::accumulate(t.values().begin(), t.values().end(), 0.0) / t.numel(); }

double variance_of(const Tensor& t) {
  const double m = mean_of(t);
  double acc = 0.0;
  for (double v : t.values()) acc += (v - m) * (v - m);
  return acc / t.numel();
}

}  // namespace

TEST_CASE("layer-to-scale assignment") {
  const std::vector<int> l14{1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 3, 3, 3};
  CHECK(style_scale_assignment(14) == l14);
  const std::vector<int> l18{1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3, 3};
  CHECK(style_scale_assignment(18) == l18);
  for (int s = 8; s <= 1 << 16; s *= 2) {
    const int L = num_style_layers(s);
    const auto r = style_scale_assignment(L);
    CAPTURE(L);
    REQUIRE(static_cast<int>(r.size()) == L);
    CHECK(r.front() == 1);
    CHECK(r.back() == 3);
    for (int l = 1; l < L; ++l) {
      CHECK(r[l] >= r[l - 1]);
      CHECK(r[l] - r[l - 1] <= 1);
    }
    CHECK(std::count(r.begin(), r.end(), 2) >= 1);
  }
  CHECK_THROWS_AS(style_scale_of_layer(0, 14), InvalidInput);
  CHECK_THROWS_AS(style_scale_of_layer(15, 14), InvalidInput);
}

TEST_CASE("instance normalization examples") {
  CHECK(instance_normalize(Tensor({512}, 3.7), 1e-5) == Tensor({512}, 0.0));

  Tensor alt({512});
  for (int i = 0; i < 512; ++i) alt[i] = i % 2 ? -1.0 : 1.0;
  CHECK(testsupport::max_abs_diff(instance_normalize(alt, 1e-5), alt) < 1e-5);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tensor v = randn({512}, seed, 3.0);
    for (auto& x : v.values()) x += 2.0;
    const Tensor out = instance_normalize(v, 1e-5);
    CHECK(std::abs(mean_of(out)) < 1e-6);
    CHECK(std::abs(variance_of(out) - 1.0) < 1e-4);
  }
}

TEST_CASE("premodulation oracle and affine identities") {
  const double eps = 1e-5;
  const auto w = ag::Var::constant(randn({2, 512}, 1));
  const auto gamma = ag::Var::constant(randn({2, 512}, 2));
  const auto beta = ag::Var::constant(randn({2, 512}, 3));
  const Tensor out = premodulate_with(w, gamma, beta, eps).value();
  for (int b = 0; b < 2; ++b) {
    const Tensor in = instance_normalize(w.value().batch_slice(b, 1), eps);
    for (int i = 0; i < 512; ++i) {
      CHECK(out.at(b, i) == doctest::Approx(gamma.value().at(b, i) * in[i] + beta.value().at(b, i)).epsilon(1e-12));
    }
  }

  const auto ones = ag::Var::constant(Tensor({2, 512}, 1.0));
  const auto zeros = ag::Var::constant(Tensor({2, 512}, 0.0));
  const Tensor identity = premodulate_with(w, ones, zeros, eps).value();
  for (int b = 0; b < 2; ++b) CHECK(identity.batch_slice(b, 1).reshaped({512}) == instance_normalize(w.value().batch_slice(b, 1).reshaped({512}), eps));

  CHECK(premodulate_with(w, zeros, beta, eps).value() == beta.value());
  const auto other_w = ag::Var::constant(randn({2, 512}, 4));
  CHECK(premodulate_with(other_w, zeros, beta, eps).value() == beta.value());

  // Removing beta leaves exactly the gamma term, up to the rounding of one addition.
  const Tensor no_beta = premodulate_with(w, gamma, zeros, eps).value();
  for (std::size_t i = 0; i < out.numel(); ++i) {
    CHECK(std::abs((out[i] - no_beta[i]) - beta.value()[i]) <= 4e-16 * std::max(1.0, std::abs(out[i]) + std::abs(no_beta[i])));
  }
}

TEST_CASE("fresh pre-modulation is the identity") {
  const Encoder e(small_config());
  const auto w = ag::Var::constant(randn({1, 512}, 6));
  const auto s = ag::Var::constant(randn({1, 512}, 7));
  for (int l = 1; l <= e.num_layers(); ++l) {
    CHECK(e.gamma(s, l).value() == Tensor({1, 512}, 1.0));
    CHECK(e.beta(s, l).value() == Tensor({1, 512}, 0.0));
    CHECK(e.premodulate(w, s, l).value().reshaped({512}) == instance_normalize(w.value().reshaped({512}), 1e-5));
  }
  CHECK_THROWS_AS(e.premodulate(w, s, 0), InvalidInput);
  CHECK_THROWS_AS(e.premodulate(w, s, e.num_layers() + 1), InvalidInput);
}

TEST_CASE("encode shapes, ranges and determinism") {
  auto cfg = small_config(256);
  cfg.widths = {2, 2, 2, 2};
  cfg.fpn_channels = 2;
  cfg.head_channels = 2;
  cfg.premod_hidden = 4;
  const Encoder e(cfg);
  const Tensor x = testsupport::uniform({1, 3, 256, 256}, 8, -1.0, 1.0);
  ag::NoGradGuard guard;
  const auto out = e.encode(x);
  CHECK(out.recon[0].shape() == Shape{1, 3, 64, 64});
  CHECK(out.recon[1].shape() == Shape{1, 3, 128, 128});
  CHECK(out.recon[2].shape() == Shape{1, 3, 256, 256});
  for (const auto& r : out.recon)
    for (double v : r.value().values()) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
  for (const auto& w : out.w_prime) CHECK(w.shape() == Shape{1, 512});
  const auto again = e.encode(x);
  for (int r = 0; r < 3; ++r) {
    CHECK(again.w_prime[r].value() == out.w_prime[r].value());
    CHECK(again.recon[r].value() == out.recon[r].value());
  }
  const auto inv = e.invert(x);
  CHECK(inv.styles.num_layers() == 14);
  CHECK(inv.styles.resolution == 256);
  CHECK_THROWS_AS(e.encode(Tensor({1, 3, 128, 128})), InvalidInput);
  CHECK_THROWS_AS(e.encode(Tensor({1, 1, 256, 256})), InvalidInput);
}

TEST_CASE("every w' row responds to the input") {
  const Encoder e(small_config());
  const Tensor x = testsupport::uniform({1, 3, 16, 16}, 9, -1.0, 1.0);
  Tensor y = x;
  y.at(0, 0, 5, 5) += 1e-3;
  ag::NoGradGuard guard;
  const auto a = e.encode(x), b = e.encode(y);
  for (int r = 0; r < 3; ++r) {
    CAPTURE(r);
    CHECK(testsupport::max_abs_diff(a.w_prime[r].value(), b.w_prime[r].value()) > 0.0);
  }
}

TEST_CASE("map2structure is per scale and order preserving") {
  Encoder e(small_config());
  std::array<ag::Var, kNumScales> recon{ag::Var::constant(randn({1, 3, 4, 4}, 1)), ag::Var::constant(randn({1, 3, 8, 8}, 2)),
                                        ag::Var::constant(randn({1, 3, 16, 16}, 3))};
  ag::NoGradGuard guard;
  const auto s = e.map2structure(recon);
  const auto again = e.map2structure(recon);
  for (int r = 0; r < 3; ++r) CHECK(again[r].value() == s[r].value());

  auto changed = recon;
  changed[1] = ag::Var::constant(randn({1, 3, 8, 8}, 20));
  const auto s2 = e.map2structure(changed);
  CHECK(s2[0].value() == s[0].value());
  CHECK_FALSE(s2[1].value() == s[1].value());
  CHECK(s2[2].value() == s[2].value());

  auto swapped = recon;
  std::swap(swapped[0], swapped[1]);
  CHECK_THROWS_AS(e.map2structure(swapped), InvalidInput);
}

TEST_CASE("zero reconstructions with zero final layers give zero structure vectors") {
  Encoder e(small_config());
  for (const auto& [name, v] : e.parameters()) {
    if (name.rfind("map2structure_", 0) == 0 && name.find(".out.") != std::string::npos) {
      ag::Var handle = v;
      handle.mutable_value().fill(0.0);
    }
  }
  std::array<ag::Var, kNumScales> zero{ag::Var::constant(Tensor({2, 3, 4, 4})), ag::Var::constant(Tensor({2, 3, 8, 8})),
                                       ag::Var::constant(Tensor({2, 3, 16, 16}))};
  ag::NoGradGuard guard;
  for (const auto& s : e.map2structure(zero)) CHECK(s.value() == Tensor({2, 512}, 0.0));
}

TEST_CASE("inversion rows follow the scale assignment") {
  auto cfg = small_config();
  const Tensor x = testsupport::uniform({2, 3, 16, 16}, 10, -1.0, 1.0);
  ag::NoGradGuard guard;

  cfg.use_premod = false;
  const Encoder plain(cfg);
  const auto inv = plain.invert(x);
  REQUIRE(inv.styles.num_layers() == 6);
  const auto r = style_scale_assignment(6);
  for (int l = 0; l < 6; ++l) CHECK(inv.styles.layers[l].value() == inv.encoded.w_prime[r[l] - 1].value());

  cfg.use_premod = true;
  Encoder pm(cfg);
  randomize_premod(pm, 3);
  const auto inv_pm = pm.invert(x);
  CHECK(inv_pm.styles.num_layers() == 6);
  for (int l = 0; l < 6; ++l) {
    CAPTURE(l);
    const Tensor& w = inv_pm.encoded.w_prime[r[l] - 1].value();
    CHECK(testsupport::max_abs_diff(inv_pm.styles.layers[l].value(), w) > 1e-3);
    const Tensor expected = premodulate_with(inv_pm.encoded.w_prime[r[l] - 1], pm.gamma(inv_pm.structure[r[l] - 1], l + 1),
                                             pm.beta(inv_pm.structure[r[l] - 1], l + 1), cfg.epsilon)
                                .value();
    CHECK(inv_pm.styles.layers[l].value() == expected);
  }
  const auto again = pm.invert(x);
  for (int l = 0; l < 6; ++l) CHECK(again.styles.layers[l].value() == inv_pm.styles.layers[l].value());
}

TEST_CASE("encoder parameters match finite differences") {
  Encoder e(small_config(8));
  randomize_premod(e, 4);
  const Tensor x = testsupport::uniform({2, 3, 8, 8}, 11, -1.0, 1.0);
  auto f = [&] {
    const auto inv = e.invert(x);
    ag::Var total = testsupport::probe(inv.encoded.recon[0], 1);
    for (int r = 1; r < 3; ++r) total = ag::add(total, testsupport::probe(inv.encoded.recon[r], 1 + r));
    for (int l = 0; l < inv.styles.num_layers(); ++l) total = ag::add(total, testsupport::probe(inv.styles.layers[l], 10 + l));
    return total;
  };
  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, v] : e.parameters()) {
    const double err = testsupport::gradcheck(f, v, 6, 1e-6);
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  }
  CAPTURE(worst_name);
  CHECK(worst < testsupport::kGradTolerance);
}

TEST_CASE("encoder archive round trip and header checks") {
  Encoder e(small_config());
  randomize_premod(e, 5);
  const auto dir = std::filesystem::temp_directory_path() / "invertfill_test_encoder";
  std::filesystem::create_directories(dir);
  e.save(dir / "e.ifa");
  const Encoder back = Encoder::load(dir / "e.ifa");
  CHECK(back.parameters().state() == e.parameters().state());
  CHECK(back.to_archive().header["kind"] == "encoder");

  Encoder other(small_config(32));
  CHECK_THROWS_AS(other.load_archive_weights(e.to_archive()), CheckpointMismatch);
  GeneratorConfig gc;
  gc.resolution = 16;
  gc.channel_base = 1.0 / 32.0;
  gc.channel_max = 16;
  gc.mapping_layers = 1;
  CHECK_THROWS_AS(Encoder::from_archive(Generator(gc).to_archive()), CheckpointMismatch);
}
