#include "invertfill/metrics.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "invertfill/error.hpp"

namespace invertfill {

namespace {

void require_same(const Image& a, const Image& b, const char* op) {
  if (a.channels() != b.channels() || a.size() != b.size()) {
    throw InvalidInput(std::string(op) + ": image shapes differ");
  }
}

double unit(double v) { return (v + 1.0) * 0.5; }

std::array<double, kSsimWindow> gaussian_window() {
  std::array<double, kSsimWindow> g{};
  double total = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    total += g[i];
  }
  for (auto& v : g) v /= total;
  return g;
}

// Valid-mode separable Gaussian filter of an n x n plane.
std::vector<double> filter_valid(const std::vector<double>& plane, int n, const std::array<double, kSsimWindow>& g) {
  const int m = n - kSsimWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(n) * m, 0.0);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < m; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) acc += g[k] * plane[y * n + x + k];
      rows[y * m + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(m) * m, 0.0);
  for (int y = 0; y < m; ++y) {
    for (int x = 0; x < m; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kSsimWindow; ++k) acc += g[k] * rows[(y + k) * m + x];
      out[y * m + x] = acc;
    }
  }
  return out;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  require_same(a, b, "ssim");
  const int n = a.size();
  if (n < kSsimWindow) {
    throw InvalidInput("ssim needs images of at least " + std::to_string(kSsimWindow) + " pixels, got " +
                       std::to_string(n));
  }
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const auto g = gaussian_window();
  const std::size_t plane = static_cast<std::size_t>(n) * n;
  double total = 0.0;
  std::size_t count = 0;
  for (int c = 0; c < a.channels(); ++c) {
    std::vector<double> pa(plane), pb(plane), paa(plane), pbb(plane), pab(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      pa[i] = unit(a.pixels()[c * plane + i]);
      pb[i] = unit(b.pixels()[c * plane + i]);
      paa[i] = pa[i] * pa[i];
      pbb[i] = pb[i] * pb[i];
      pab[i] = pa[i] * pb[i];
    }
    const auto mu_a = filter_valid(pa, n, g), mu_b = filter_valid(pb, n, g);
    const auto e_aa = filter_valid(paa, n, g), e_bb = filter_valid(pbb, n, g), e_ab = filter_valid(pab, n, g);
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double va = e_aa[i] - mu_a[i] * mu_a[i];
      const double vb = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
      const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
      total += num / den;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

double psnr_from_mse(double mse) {
  if (mse < 0.0 || !std::isfinite(mse)) throw InvalidInput("psnr: invalid mean-squared error");
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(1.0 / mse);
}

double psnr(const Image& a, const Image& b) {
  require_same(a, b, "psnr");
  double sq = 0.0;
  const auto& x = a.pixels();
  const auto& y = b.pixels();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double d = unit(x[i]) - unit(y[i]);
    sq += d * d;
  }
  return psnr_from_mse(sq / static_cast<double>(x.numel()));
}

FeatureStats::FeatureStats(int dim) : sum_(Eigen::VectorXd::Zero(dim)), outer_(Eigen::MatrixXd::Zero(dim, dim)) {
  if (dim < 1) throw InvalidInput("feature dimension must be positive");
}

FeatureStats FeatureStats::from_moments(Eigen::VectorXd mean, Eigen::MatrixXd covariance, long n) {
  if (n < 2) throw InvalidInput("feature statistics need n >= 2");
  if (covariance.rows() != mean.size() || covariance.cols() != mean.size()) {
    throw InvalidInput("covariance does not match mean dimension");
  }
  FeatureStats s(static_cast<int>(mean.size()));
  s.n_ = n;
  s.sum_ = mean * static_cast<double>(n);
  s.outer_ = covariance * static_cast<double>(n - 1) + mean * mean.transpose() * static_cast<double>(n);
  return s;
}

void FeatureStats::add(std::span<const double> feature) {
  if (sum_.size() == 0) *this = FeatureStats(static_cast<int>(feature.size()));
  if (static_cast<Eigen::Index>(feature.size()) != sum_.size()) {
    throw InvalidInput("feature of dimension " + std::to_string(feature.size()) + " added to stats of dimension " +
                       std::to_string(sum_.size()));
  }
  const Eigen::Map<const Eigen::VectorXd> f(feature.data(), static_cast<Eigen::Index>(feature.size()));
  sum_ += f;
  outer_.selfadjointView<Eigen::Lower>().rankUpdate(f);
  outer_.triangularView<Eigen::StrictlyUpper>() = outer_.transpose().triangularView<Eigen::StrictlyUpper>();
  ++n_;
}

void FeatureStats::merge(const FeatureStats& other) {
  if (other.n_ == 0) return;
  if (n_ == 0) {
    *this = other;
    return;
  }
  if (other.sum_.size() != sum_.size()) throw InvalidInput("cannot merge feature stats of different dimension");
  n_ += other.n_;
  sum_ += other.sum_;
  outer_ += other.outer_;
}

Eigen::VectorXd FeatureStats::mean() const {
  if (n_ == 0) throw InvalidInput("mean of empty feature stats");
  return sum_ / static_cast<double>(n_);
}

Eigen::MatrixXd FeatureStats::covariance() const {
  if (n_ < 2) throw InvalidInput("covariance needs at least two samples");
  const Eigen::VectorXd mu = mean();
  Eigen::MatrixXd cov = (outer_ - static_cast<double>(n_) * mu * mu.transpose()) / static_cast<double>(n_ - 1);
  return 0.5 * (cov + cov.transpose());
}

double frechet_distance(const Eigen::VectorXd& mu_p, const Eigen::MatrixXd& sigma_p, const Eigen::VectorXd& mu_q,
                        const Eigen::MatrixXd& sigma_q) {
  const Eigen::Index d = mu_p.size();
  if (mu_q.size() != d || sigma_p.rows() != d || sigma_p.cols() != d || sigma_q.rows() != d || sigma_q.cols() != d) {
    throw InvalidInput("frechet_distance: dimension mismatch");
  }
  for (const auto* s : {&sigma_p, &sigma_q}) {
    const double scale = std::max(1.0, s->cwiseAbs().maxCoeff());
    if ((*s - s->transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
      throw InvalidInput("frechet_distance: covariance is not symmetric");
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ep(0.5 * (sigma_p + sigma_p.transpose()));
  const Eigen::VectorXd root_vals = ep.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd root_p = ep.eigenvectors() * root_vals.asDiagonal() * ep.eigenvectors().transpose();
  const Eigen::MatrixXd inner = root_p * sigma_q * root_p;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ei(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double tr_root = ei.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (mu_p - mu_q).squaredNorm() + sigma_p.trace() + sigma_q.trace() - 2.0 * tr_root;
  return std::max(0.0, value);
}

double frechet_distance(const FeatureStats& p, const FeatureStats& q) {
  return frechet_distance(p.mean(), p.covariance(), q.mean(), q.covariance());
}

namespace {

std::vector<ag::Var> image_features(const FeatureExtractor& extractor, const Image& image) {
  ag::NoGradGuard guard;
  return extractor.features(ag::Var::constant(image.pixels().reshaped({1, image.channels(), image.size(), image.size()})));
}

}  // namespace

double lpips_distance(const FeatureExtractor& extractor, const Image& a, const Image& b) {
  require_same(a, b, "lpips_distance");
  const auto fa = image_features(extractor, a);
  const auto fb = image_features(extractor, b);
  double total = 0.0;
  for (std::size_t t = 0; t < fa.size(); ++t) {
    const Tensor& x = fa[t].value();
    const Tensor& y = fb[t].value();
    const int c = x.dim(1), hw = x.dim(2) * x.dim(3);
    double acc = 0.0;
    for (int p = 0; p < hw; ++p) {
      double nx = 0.0, ny = 0.0;
      for (int k = 0; k < c; ++k) {
        nx += x[static_cast<std::size_t>(k) * hw + p] * x[static_cast<std::size_t>(k) * hw + p];
        ny += y[static_cast<std::size_t>(k) * hw + p] * y[static_cast<std::size_t>(k) * hw + p];
      }
      nx = std::sqrt(nx) + 1e-10;
      ny = std::sqrt(ny) + 1e-10;
      for (int k = 0; k < c; ++k) {
        const double d = x[static_cast<std::size_t>(k) * hw + p] / nx - y[static_cast<std::size_t>(k) * hw + p] / ny;
        acc += d * d;
      }
    }
    total += acc / hw;
  }
  return total;
}

std::vector<double> pooled_features(const FeatureExtractor& extractor, const Image& image) {
  std::vector<double> out;
  for (const auto& f : image_features(extractor, image)) {
    const Tensor& x = f.value();
    const int c = x.dim(1), hw = x.dim(2) * x.dim(3);
    for (int k = 0; k < c; ++k) {
      double s = 0.0;
      for (int p = 0; p < hw; ++p) s += x[static_cast<std::size_t>(k) * hw + p];
      out.push_back(s / hw);
    }
  }
  return out;
}

const LevelReport& EvalReport::level(Difficulty d) const {
  for (const auto& l : levels) {
    if (l.level == d) return l;
  }
  throw InvalidInput("report has no level " + std::string(to_string(d)));
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["n_images"] = n_images;
  j["n_failed"] = n_failed;
  j["n_unclassified"] = n_unclassified;
  j["fingerprint"] = fingerprint;
  j["extractor"] = extractor;
  j["levels"] = nlohmann::json::array();
  for (const auto& l : levels) {
    nlohmann::json r{{"level", to_string(l.level)}, {"n_images", l.n_images}, {"ssim", l.ssim},
                     {"psnr", l.psnr},              {"lpips", l.lpips}};
    r["fid"] = l.fid ? nlohmann::json(*l.fid) : nlohmann::json(nullptr);
    j["levels"].push_back(r);
  }
  j["errors"] = nlohmann::json::array();
  for (const auto& e : errors) j["errors"].push_back({{"index", e.index}, {"message", e.message}});
  return j;
}

std::string EvalReport::records() const {
  std::ostringstream os;
  os << "level,n_images,ssim,psnr,fid,lpips\n";
  char buf[256];
  for (const auto& l : levels) {
    const std::string fid = l.fid ? std::to_string(*l.fid) : "NA";
    std::snprintf(buf, sizeof buf, "%s,%d,%.6f,%.4f,%s,%.6f\n", std::string(to_string(l.level)).c_str(), l.n_images,
                  l.ssim, l.psnr, fid.c_str(), l.lpips);
    os << buf;
  }
  return os.str();
}

std::string EvalReport::table(const std::string& title) const {
  std::ostringstream os;
  char buf[256];
  if (!title.empty()) os << title << '\n';
  std::snprintf(buf, sizeof buf, "%-8s %6s %10s %10s %10s %10s\n", "Level", "N", "SSIM(+)", "FID(-)", "LPIPS(-)",
                "PSNR(+)");
  os << buf;
  for (const auto& l : levels) {
    char fid[32] = "-";
    if (l.fid) std::snprintf(fid, sizeof fid, "%.4f", *l.fid);
    std::snprintf(buf, sizeof buf, "%-8s %6d %10.4f %10s %10.4f %10.3f\n", std::string(to_string(l.level)).c_str(),
                  l.n_images, l.ssim, fid, l.lpips, l.psnr);
    os << buf;
  }
  if (n_failed > 0) os << "failed items: " << n_failed << '\n';
  if (n_unclassified > 0) os << "unclassified items: " << n_unclassified << '\n';
  return os.str();
}

namespace {

struct LevelAccumulator {
  int n = 0;
  double ssim = 0.0, psnr = 0.0, lpips = 0.0;
  FeatureStats real, fake;

  void add(const ItemResult& item, const std::vector<double>& real_f, const std::vector<double>& fake_f) {
    ++n;
    ssim += item.ssim;
    psnr += item.psnr;
    lpips += item.lpips;
    real.add(real_f);
    fake.add(fake_f);
  }

  LevelReport finish(Difficulty level) const {
    LevelReport r;
    r.level = level;
    r.n_images = n;
    if (n > 0) {
      r.ssim = ssim / n;
      r.psnr = psnr / n;
      r.lpips = lpips / n;
    }
    if (n >= kMinFidSamples) r.fid = frechet_distance(real, fake);
    return r;
  }
};

}  // namespace

EvalReport evaluate(const std::vector<Image>& images, const std::vector<Mask>& masks, const InpaintModel& model,
                    const FeatureExtractor& extractor, const EvalOptions& options) {
  if (images.empty()) throw InvalidInput("evaluate: empty dataset");
  if (masks.size() != images.size()) {
    throw InvalidInput("evaluate: " + std::to_string(images.size()) + " images but " + std::to_string(masks.size()) +
                       " masks");
  }
  const int batch = std::max(1, options.batch_size);
  const int s = images.front().size();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].size() != s || images[i].channels() != 3 || masks[i].size() != s) {
      throw InvalidInput("evaluate: item " + std::to_string(i) + " does not match the dataset geometry");
    }
  }

  EvalReport report;
  report.fingerprint = options.fingerprint;
  report.extractor = extractor.name();
  LevelAccumulator hard, extreme, all;

  // Runs the model on items [begin, begin + count); returns one slot per item.
  auto run = [&](std::size_t begin, std::size_t count) {
    std::vector<Image> imgs(images.begin() + begin, images.begin() + begin + count);
    std::vector<Mask> ms(masks.begin() + begin, masks.begin() + begin + count);
    const Tensor m = stack_masks(ms);
    const Tensor out = model(apply_mask_batch(stack_images(imgs), m), m);
    if (out.shape() != Shape{static_cast<int>(count), 3, s, s}) {
      throw InvalidInput("model returned shape " + shape_string(out.shape()));
    }
    return out;
  };

  for (std::size_t begin = 0; begin < images.size(); begin += batch) {
    const std::size_t count = std::min<std::size_t>(batch, images.size() - begin);
    std::vector<std::optional<Image>> generated(count);
    std::vector<std::string> failure(count);
    try {
      const Tensor out = run(begin, count);
      for (std::size_t k = 0; k < count; ++k) {
        try {
          generated[k] = image_from_batch(out, static_cast<int>(k));
        } catch (const std::exception& e) {
          failure[k] = e.what();
        }
      }
    } catch (const std::exception&) {
      for (std::size_t k = 0; k < count; ++k) {
        try {
          generated[k] = image_from_batch(run(begin + k, 1), 0);
        } catch (const std::exception& e) {
          failure[k] = e.what();
        }
      }
    }

    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t idx = begin + k;
      if (!generated[k]) {
        report.errors.push_back({idx, failure[k]});
        ++report.n_failed;
        continue;
      }
      const Image& original = images[idx];
      const Image composed = compose(original, *generated[k], masks[idx]);
      if (!satisfies_hard_constraint(original, composed, masks[idx])) {
        throw InvariantViolation("composition changed unmasked pixels of item " + std::to_string(idx));
      }
      ItemResult item;
      item.index = idx;
      item.coverage = masks[idx].coverage();
      item.level = classify_mask(masks[idx]);
      item.ssim = ssim(original, composed);
      item.psnr = psnr(original, composed);
      item.lpips = lpips_distance(extractor, original, composed);
      report.items.push_back(item);
      ++report.n_images;
      if (!item.level) {
        ++report.n_unclassified;
        continue;
      }
      const auto real_f = pooled_features(extractor, original);
      const auto fake_f = pooled_features(extractor, composed);
      if (*item.level == Difficulty::Hard) hard.add(item, real_f, fake_f);
      if (*item.level == Difficulty::Extreme) extreme.add(item, real_f, fake_f);
      all.add(item, real_f, fake_f);
    }
  }

  report.levels = {hard.finish(Difficulty::Hard), extreme.finish(Difficulty::Extreme), all.finish(Difficulty::All)};
  return report;
}

}  // namespace invertfill
