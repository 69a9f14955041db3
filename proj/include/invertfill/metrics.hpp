#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <span>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "invertfill/imaging.hpp"
#include "invertfill/losses.hpp"

namespace invertfill {

inline constexpr double kPsnrIdentical = 99.0;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr int kMinFidSamples = 32;

// Images are mapped from [-1, 1] to [0, 1] before SSIM and PSNR.
double ssim(const Image& a, const Image& b);
double psnr(const Image& a, const Image& b);
double psnr_from_mse(double mse);

// Running first and second moments of feature vectors. Partial sums merge associatively.
class FeatureStats {
 public:
  FeatureStats() = default;
  explicit FeatureStats(int dim);
  // Moments given directly (n is the nominal sample count).
  static FeatureStats from_moments(Eigen::VectorXd mean, Eigen::MatrixXd covariance, long n);

  void add(std::span<const double> feature);
  void merge(const FeatureStats& other);

  int dim() const noexcept { return static_cast<int>(sum_.size()); }
  long count() const noexcept { return n_; }
  Eigen::VectorXd mean() const;
  // Bessel-corrected sample covariance; needs at least two samples.
  Eigen::MatrixXd covariance() const;

 private:
  long n_ = 0;
  Eigen::VectorXd sum_;
  Eigen::MatrixXd outer_;
};

// |mu_p - mu_q|^2 + Tr(S_p + S_q - 2 (S_p S_q)^(1/2)).
double frechet_distance(const FeatureStats& p, const FeatureStats& q);
double frechet_distance(const Eigen::VectorXd& mu_p, const Eigen::MatrixXd& sigma_p, const Eigen::VectorXd& mu_q,
                        const Eigen::MatrixXd& sigma_q);

// Sum over taps of the spatial mean of squared differences between channel-normalized features.
double lpips_distance(const FeatureExtractor& extractor, const Image& a, const Image& b);
// Global-average-pooled taps concatenated into one vector.
std::vector<double> pooled_features(const FeatureExtractor& extractor, const Image& image);

// Batched model: corrupted [B,3,S,S], masks [B,1,S,S] -> generated [B,3,S,S].
using InpaintModel = std::function<Tensor(const Tensor& corrupted, const Tensor& masks)>;

struct ItemResult {
  std::size_t index = 0;
  double coverage = 0.0;
  std::optional<Difficulty> level;
  double ssim = 0.0, psnr = 0.0, lpips = 0.0;
  bool operator==(const ItemResult&) const = default;
};

struct ItemError {
  std::size_t index = 0;
  std::string message;
  bool operator==(const ItemError&) const = default;
};

struct LevelReport {
  Difficulty level = Difficulty::All;
  int n_images = 0;
  double ssim = 0.0, psnr = 0.0, lpips = 0.0;
  std::optional<double> fid;  // absent below kMinFidSamples
  bool operator==(const LevelReport&) const = default;
};

struct EvalReport {
  std::vector<LevelReport> levels;  // Hard, Extreme, All
  int n_images = 0;
  int n_failed = 0;
  int n_unclassified = 0;
  std::string fingerprint;
  std::string extractor;
  std::vector<ItemResult> items;
  std::vector<ItemError> errors;

  const LevelReport& level(Difficulty d) const;
  nlohmann::json to_json() const;
  // One "level,n_images,ssim,psnr,fid,lpips" line per level after a header.
  std::string records() const;
  std::string table(const std::string& title = "") const;
  bool operator==(const EvalReport&) const = default;
};

struct EvalOptions {
  int batch_size = 8;
  std::string fingerprint;
};

// Runs the model on I_m for every (image, mask) pair, composes I*(1-M) + O_G*M and
// scores the composition against I. Hard, Extreme take items by narrowest level; All
// takes every item within the All coverage range.
EvalReport evaluate(const std::vector<Image>& images, const std::vector<Mask>& masks, const InpaintModel& model,
                    const FeatureExtractor& extractor, const EvalOptions& options = {});

}  // namespace invertfill
