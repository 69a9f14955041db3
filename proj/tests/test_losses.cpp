#include "invertfill/losses.hpp"

#include <cmath>

#include "invertfill/error.hpp"
#include "support.hpp"

using namespace invertfill;
using testsupport::gradcheck;
using testsupport::kGradTolerance;
using testsupport::randn;

namespace {

// Exposes the image itself as the only tap.
class IdentityExtractor final : public FeatureExtractor {
 public:
  std::vector<ag::Var> features(const ag::Var& images) const override { return {images}; }
  int num_taps() const override { return 1; }
  std::string name() const override { return "identity"; }
};

Tensor random_mask(int batch, int size, std::uint64_t seed) {
  Tensor m = testsupport::uniform({batch, 1, size, size}, seed, 0.0, 1.0);
  for (auto& v : m.values()) v = v < 0.5 ? 0.0 : 1.0;
  return m;
}

double l1_oracle(const Tensor& a, const Tensor& b, const Tensor& m, bool hole) {
  double sum = 0.0, count = 0.0;
  for (int n = 0; n < a.dim(0); ++n)
    for (int c = 0; c < a.dim(1); ++c)
      for (int y = 0; y < a.dim(2); ++y)
        for (int x = 0; x < a.dim(3); ++x) {
          if ((m.at(n, 0, y, x) == 1.0) != hole) continue;
          sum += std::abs(a.at(n, c, y, x) - b.at(n, c, y, x));
          count += 1.0;
        }
  return count == 0.0 ? 0.0 : sum / count;
}

double mean_abs_diff(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += std::abs(a[i] - b[i]);
  return s / a.numel();
}

// [B,C,C] channel Gram matrices normalized by C*H*W.
Tensor gram_oracle(const Tensor& f) {
  const int b = f.dim(0), c = f.dim(1), hw = f.dim(2) * f.dim(3);
  Tensor g({b, c, c});
  for (int n = 0; n < b; ++n)
    for (int i = 0; i < c; ++i)
      for (int j = 0; j < c; ++j) {
        double s = 0.0;
        for (int p = 0; p < hw; ++p) s += f[(long(n) * c + i) * hw + p] * f[(long(n) * c + j) * hw + p];
        g[(long(n) * c + i) * c + j] = s / (double(c) * hw);
      }
  return g;
}

double tv_oracle(const Tensor& x) {
  double s = 0.0, count = 0.0;
  for (int n = 0; n < x.dim(0); ++n)
    for (int c = 0; c < x.dim(1); ++c)
      for (int y = 0; y < x.dim(2); ++y)
        for (int xx = 0; xx < x.dim(3); ++xx) {
          if (xx + 1 < x.dim(3)) {
            s += std::abs(x.at(n, c, y, xx + 1) - x.at(n, c, y, xx));
            count += 1;
          }
          if (y + 1 < x.dim(2)) {
            s += std::abs(x.at(n, c, y + 1, xx) - x.at(n, c, y, xx));
            count += 1;
          }
        }
  return s / count;
}

Tensor area_oracle(const Tensor& x, int f) {
  const int b = x.dim(0), c = x.dim(1), s = x.dim(2) / f;
  Tensor out({b, c, s, s});
  for (int n = 0; n < b; ++n)
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < s; ++y)
        for (int xx = 0; xx < s; ++xx) {
          double acc = 0.0;
          for (int dy = 0; dy < f; ++dy)
            for (int dx = 0; dx < f; ++dx) acc += x.at(n, ch, y * f + dy, xx * f + dx);
          out.at(n, ch, y, xx) = acc / (f * f);
        }
  return out;
}

Tensor difference(const Tensor& a, const Tensor& b) {
  Tensor d = a;
  for (std::size_t i = 0; i < d.numel(); ++i) d[i] -= b[i];
  return d;
}

ag::Var cst(const Tensor& t) { return ag::Var::constant(t); }

double val(const ag::Var& v) { return v.item(); }

}  // namespace

TEST_CASE("region L1 oracle and trivial cases") {
  const Tensor a = randn({2, 3, 4, 4}, 1), b = randn({2, 3, 4, 4}, 2), m = random_mask(2, 4, 3);
  CHECK(val(l1_region(cst(a), cst(b), m, Region::Hole)) == doctest::Approx(l1_oracle(a, b, m, true)).epsilon(1e-13));
  CHECK(val(l1_region(cst(a), cst(b), m, Region::Valid)) == doctest::Approx(l1_oracle(a, b, m, false)).epsilon(1e-13));
  CHECK(val(l1_region(cst(a), cst(a), m, Region::Hole)) == 0.0);

  Tensor half({1, 1, 4, 4});
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 4; ++x) half.at(0, 0, y, x) = 1.0;
  Tensor shifted = a.batch_slice(0, 1);
  Tensor base = shifted;
  for (auto& v : shifted.values()) v += 0.5;
  CHECK(val(l1_region(cst(shifted), cst(base), half, Region::Hole)) == doctest::Approx(0.5).epsilon(1e-14));

  const Tensor none({2, 1, 4, 4});
  CHECK(val(l1_region(cst(a), cst(b), none, Region::Hole)) == 0.0);
  CHECK_THROWS_AS(l1_region(cst(a), cst(b), Tensor({2, 1, 8, 8}), Region::Hole), InvalidInput);
}

TEST_CASE("perceptual loss against a hand-rolled convolution") {
  // One stage, two output channels, known 3x3 weights.
  Tensor w({2, 3, 3, 3});
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = std::sin(0.7 * double(i)) * 0.5;
  const Tensor bias({2}, std::vector<double>{0.1, -0.05});
  const ConvFeatureExtractor fx({{w, bias, 1}});
  const Tensor a = randn({1, 3, 8, 8}, 4), b = randn({1, 3, 8, 8}, 5);

  auto conv_relu = [&](const Tensor& img) {
    Tensor out({1, 2, 8, 8});
    for (int o = 0; o < 2; ++o)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          double acc = bias[o];
          for (int c = 0; c < 3; ++c)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int yy = y + ky - 1, xx = x + kx - 1;
                if (yy < 0 || yy >= 8 || xx < 0 || xx >= 8) continue;
                acc += w[((o * 3 + c) * 3 + ky) * 3 + kx] * img.at(0, c, yy, xx);
              }
          out.at(0, o, y, x) = std::max(0.0, acc);
        }
    return out;
  };
  const double expected = mean_abs_diff(conv_relu(a), conv_relu(b));
  CHECK(val(perceptual_loss(fx, cst(a), cst(b))) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(val(perceptual_loss(fx, cst(b), cst(a))) == val(perceptual_loss(fx, cst(a), cst(b))));
  CHECK(val(perceptual_loss(fx, cst(a), cst(a))) == 0.0);
}

TEST_CASE("style loss Gram oracles") {
  const IdentityExtractor id;
  // Orthogonal channels against identical channels on a 2x2 grid.
  const Tensor ortho({1, 2, 2, 2}, std::vector<double>{1, 0, 0, 0, 0, 1, 0, 0});
  const Tensor same({1, 2, 2, 2}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0});
  // Gram(ortho) = diag(1,1)/8, Gram(same) = ones/8; they differ in the two off-diagonal entries.
  CHECK(val(style_loss(id, cst(ortho), cst(same))) == doctest::Approx((2.0 / 8.0) / 4.0).epsilon(1e-15));

  const Tensor a = randn({2, 3, 4, 4}, 6), b = randn({2, 3, 4, 4}, 7);
  CHECK(val(style_loss(id, cst(a), cst(b))) == doctest::Approx(mean_abs_diff(gram_oracle(a), gram_oracle(b))).epsilon(1e-12));
  CHECK(val(style_loss(id, cst(a), cst(a))) == 0.0);

  const double c = 1.7;
  Tensor ac = a, bc = b;
  for (auto& v : ac.values()) v *= c;
  for (auto& v : bc.values()) v *= c;
  CHECK(val(style_loss(id, cst(ac), cst(bc))) == doctest::Approx(c * c * val(style_loss(id, cst(a), cst(b)))).epsilon(1e-12));
}

TEST_CASE("total variation loss") {
  CHECK(val(tv_loss(cst(Tensor({1, 3, 8, 8}, 0.3)))) == 0.0);
  const double h = 0.6;
  Tensor step({1, 1, 4, 4});
  step.at(0, 0, 0, 2) = h;
  step.at(0, 0, 0, 3) = h;
  // One horizontal jump in row 0 and two vertical jumps below it, over 24 neighbour pairs.
  CHECK(val(tv_loss(cst(step))) == doctest::Approx(3.0 * h / 24.0).epsilon(1e-15));

  const Tensor x = randn({2, 3, 8, 8}, 8);
  CHECK(val(tv_loss(cst(x))) == doctest::Approx(tv_oracle(x)).epsilon(1e-13));
  Tensor shifted = x;
  for (auto& v : shifted.values()) v += 0.25;
  CHECK(val(tv_loss(cst(shifted))) == doctest::Approx(val(tv_loss(cst(x)))).epsilon(1e-13));
}

TEST_CASE("inpainting loss terms and additivity") {
  const auto fx = ConvFeatureExtractor::seeded();
  const IdentityExtractor id;
  const Tensor target = testsupport::uniform({2, 3, 8, 8}, 9, -1.0, 1.0);
  const Tensor out = testsupport::uniform({2, 3, 8, 8}, 10, -1.0, 1.0);
  const Tensor m = random_mask(2, 8, 11);

  CHECK(val(inpainting_loss(target, cst(target), m, fx, {})) == 0.0);

  const LossWeights unit{};
  const auto terms = inpainting_terms(target, cst(out), m, fx, unit);
  const double sum = val(terms.valid) + val(terms.hole) + val(terms.perceptual) + val(terms.style) + val(terms.tv);
  CHECK(std::abs(val(terms.total) - sum) <= 1e-12);
  CHECK(val(terms.valid) == val(l1_region(cst(out), cst(target), m, Region::Valid)));
  CHECK(val(terms.perceptual) == val(perceptual_loss(fx, cst(out), cst(target))));

  LossWeights w;
  w.valid = 0.3;
  w.hole = 2.5;
  w.perceptual = 0.7;
  w.style = 40.0;
  w.tv = 0.11;
  const double expected = w.valid * l1_oracle(out, target, m, false) + w.hole * l1_oracle(out, target, m, true) +
                          w.perceptual * mean_abs_diff(out, target) +
                          w.style * mean_abs_diff(gram_oracle(out), gram_oracle(target)) +
                          w.tv * tv_oracle(difference(out, target));
  CHECK(val(inpainting_loss(target, cst(out), m, id, w)) == doctest::Approx(expected).epsilon(1e-12));

  for (double v : {val(terms.valid), val(terms.hole), val(terms.perceptual), val(terms.style), val(terms.tv)}) CHECK(v >= 0.0);
  LossWeights negative;
  negative.hole = -1.0;
  CHECK_THROWS_AS(inpainting_loss(target, cst(out), m, fx, negative), InvalidInput);
}

TEST_CASE("multi-scale reconstruction loss") {
  const auto fx = ConvFeatureExtractor::seeded();
  const IdentityExtractor id;
  const Tensor target = testsupport::uniform({1, 3, 16, 16}, 12, -1.0, 1.0);
  const std::vector<ag::Var> exact{cst(area_oracle(target, 4)), cst(area_oracle(target, 2)), cst(target)};
  CHECK(val(msr_loss(target, exact, fx)) == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));

  std::vector<ag::Var> recon{cst(randn({1, 3, 4, 4}, 13)), cst(randn({1, 3, 8, 8}, 14)), cst(randn({1, 3, 16, 16}, 15))};
  double expected = 0.0;
  for (int r = 0; r < 3; ++r) {
    const Tensor down = r == 2 ? target : area_oracle(target, r == 0 ? 4 : 2);
    const Tensor& rv = recon[r].value();
    double mse = 0.0;
    for (std::size_t i = 0; i < rv.numel(); ++i) mse += (rv[i] - down[i]) * (rv[i] - down[i]);
    mse /= rv.numel();
    expected += mean_abs_diff(rv, down) + mean_abs_diff(gram_oracle(rv), gram_oracle(down)) + mse;
  }
  CHECK(val(msr_loss(target, recon, id)) == doctest::Approx(expected).epsilon(1e-12));

  const std::vector<ag::Var> coarse{recon[0]};
  const ag::Var down = cst(area_oracle(target, 4));
  const double single = val(perceptual_loss(fx, recon[0], down)) + val(style_loss(fx, recon[0], down)) +
                        val(ag::mean(ag::square(ag::sub(recon[0], down))));
  CHECK(val(msr_loss(target, coarse, fx)) == doctest::Approx(single).epsilon(1e-13));
}

TEST_CASE("fidelity loss") {
  const Tensor mean = randn({512}, 16);
  StyleCode code;
  code.resolution = 16;
  for (int l = 0; l < 6; ++l) code.layers.push_back(cst(mean.reshaped({1, 512})));
  CHECK(val(fidelity_loss(code, mean)) == 0.0);

  StyleCode bumped = code;
  Tensor row = mean.reshaped({1, 512});
  row[0] += 1.0;
  bumped.layers[2] = cst(row);
  CHECK(val(fidelity_loss(bumped, mean)) == doctest::Approx(std::sqrt(1.0 / (6 * 512))).epsilon(1e-12));

  StyleCode random = code, doubled = code;
  for (int l = 0; l < 6; ++l) {
    Tensor dev = randn({1, 512}, 100 + l);
    Tensor r = mean.reshaped({1, 512}), r2 = r;
    for (int i = 0; i < 512; ++i) {
      r[i] += dev[i];
      r2[i] += 2.0 * dev[i];
    }
    random.layers[l] = cst(r);
    doubled.layers[l] = cst(r2);
  }
  CHECK(val(fidelity_loss(doubled, mean)) == doctest::Approx(2.0 * val(fidelity_loss(random, mean))).epsilon(1e-12));
  CHECK_THROWS_AS(fidelity_loss(code, Tensor({64})), InvalidInput);
}

TEST_CASE("total loss combination and fault reporting") {
  auto scalar = [](double v) { return cst(Tensor({1}, v)); };
  LossParts parts;
  parts.ipt.valid = parts.ipt.hole = parts.ipt.perceptual = parts.ipt.style = parts.ipt.tv = scalar(0.2);
  parts.ipt.total = scalar(1.0);
  parts.msr = scalar(1.0);
  parts.fid = scalar(1.0);
  LossWeights w;
  w.msr = 1.0;
  w.fid = 1.0;
  CHECK(val(total_loss(parts, w).total) == 3.0);
  w.msr = w.fid = 0.0;
  CHECK(val(total_loss(parts, w).total) == 1.0);

  parts.ipt.total = scalar(0.83);
  parts.msr = scalar(2.9);
  parts.fid = scalar(0.41);
  w.msr = 0.37;
  w.fid = 1.9;
  CHECK(val(total_loss(parts, w).total) == doctest::Approx(0.83 + 0.37 * 2.9 + 1.9 * 0.41).epsilon(1e-15));

  for (const char* term : {"L_hole", "L_msr", "L_fid"}) {
    LossParts bad = parts;
    const std::string t = term;
    if (t == "L_hole") bad.ipt.hole = scalar(std::nan(""));
    if (t == "L_msr") bad.msr = scalar(INFINITY);
    if (t == "L_fid") bad.fid = scalar(-INFINITY);
    try {
      total_loss(bad, w);
      FAIL("expected a training fault");
    } catch (const TrainingFault& e) {
      CHECK(e.term() == t);
      CHECK(std::string(e.kind()) == "training_fault");
    }
  }
}

TEST_CASE("loss gradients match finite differences on 8x8 inputs") {
  const auto fx = ConvFeatureExtractor::seeded();
  const Tensor target = testsupport::uniform({1, 3, 8, 8}, 20, -1.0, 1.0);
  const Tensor m = random_mask(1, 8, 21);
  auto out = ag::Var::parameter(testsupport::uniform({1, 3, 8, 8}, 22, -1.0, 1.0));
  const ag::Var t = cst(target);

  CHECK(gradcheck([&] { return l1_region(out, t, m, Region::Valid); }, out) < kGradTolerance);
  CHECK(gradcheck([&] { return l1_region(out, t, m, Region::Hole); }, out) < kGradTolerance);
  CHECK(gradcheck([&] { return perceptual_loss(fx, out, t); }, out) < kGradTolerance);
  CHECK(gradcheck([&] { return style_loss(fx, out, t); }, out) < kGradTolerance);
  CHECK(gradcheck([&] { return tv_loss(ag::sub(out, t)); }, out) < kGradTolerance);
  CHECK(gradcheck([&] { return inpainting_loss(target, out, m, fx, {}); }, out) < kGradTolerance);

  std::array<ag::Var, 3> recon{ag::Var::parameter(testsupport::uniform({1, 3, 2, 2}, 23, -1.0, 1.0)),
                               ag::Var::parameter(testsupport::uniform({1, 3, 4, 4}, 24, -1.0, 1.0)),
                               ag::Var::parameter(testsupport::uniform({1, 3, 8, 8}, 25, -1.0, 1.0))};
  for (auto& r : recon) CHECK(gradcheck([&] { return msr_loss(target, recon, fx); }, r) < kGradTolerance);

  StyleCode code;
  code.resolution = 8;
  for (int l = 0; l < 4; ++l) code.layers.push_back(ag::Var::parameter(randn({1, 512}, 30 + l)));
  const Tensor mean = randn({512}, 40);
  for (auto& row : code.layers) CHECK(gradcheck([&] { return fidelity_loss(code, mean); }, row) < kGradTolerance);

  auto total = [&] {
    LossParts parts;
    parts.ipt = inpainting_terms(target, out, m, fx, {});
    parts.msr = msr_loss(target, recon, fx);
    parts.fid = fidelity_loss(code, mean);
    return total_loss(parts, {}).total;
  };
  CHECK(gradcheck(total, out) < kGradTolerance);
  CHECK(gradcheck(total, recon[1]) < kGradTolerance);
  CHECK(gradcheck(total, code.layers[0]) < kGradTolerance);
}

TEST_CASE("feature extractor is frozen and deterministic") {
  const auto fx = ConvFeatureExtractor::seeded();
  CHECK(fx.num_taps() == 4);
  const auto x = ag::Var::parameter(randn({1, 3, 16, 16}, 50));
  const auto a = fx.features(x), b = fx.features(x);
  REQUIRE(a.size() == 4);
  const Shape expected[4] = {{1, 8, 16, 16}, {1, 16, 8, 8}, {1, 32, 4, 4}, {1, 64, 2, 2}};
  for (int i = 0; i < 4; ++i) {
    CHECK(a[i].value() == b[i].value());
    CHECK(a[i].shape() == expected[i]);
  }
  const auto before = fx.stages().front().weight;
  ag::backward(perceptual_loss(fx, x, cst(randn({1, 3, 16, 16}, 51))));
  CHECK(fx.stages().front().weight == before);
  CHECK_FALSE(x.grad().empty());
  CHECK(ConvFeatureExtractor::seeded().stages().back().weight == fx.stages().back().weight);
  CHECK_FALSE(ConvFeatureExtractor::seeded(3).stages().back().weight == fx.stages().back().weight);
}
