#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "invertfill/config.hpp"
#include "invertfill/discriminator.hpp"
#include "invertfill/encoder.hpp"
#include "invertfill/generator.hpp"
#include "invertfill/latent.hpp"
#include "invertfill/losses.hpp"
#include "invertfill/metrics.hpp"

namespace invertfill {

using Logger = std::function<void(const std::string&)>;

struct Dataset {
  std::vector<Image> train;
  std::vector<Image> eval;
};

// Procedural toy images (or dataset_dir when set), with a disjoint held-out split.
Dataset load_dataset(const RunConfig& config);
// Held-out masks at the configured evaluation level, one per image, seeded per index.
std::vector<Mask> evaluation_masks(const RunConfig& config, int count);
// Freeform training masks for one step, coverage uniform in the configured range.
std::vector<Mask> training_masks(const RunConfig& config, int count, std::uint64_t seed);

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: nothing is written
  bool resume = false;
  Logger log;
};

struct GanLogRow {
  long step = 0;
  double d_loss = 0.0, g_loss = 0.0, r1 = 0.0;
  bool operator==(const GanLogRow&) const = default;
};

struct PretrainResult {
  Generator generator;
  std::vector<GanLogRow> log;
};

// Nonsaturating logistic GAN with a lazy R1 penalty on reals; styles come from
// map_latent over Gaussian z and the RGB branch is not used.
PretrainResult pretrain_generator(const std::vector<Image>& data, const RunConfig& config,
                                  const TrainOptions& options = {});

struct LossLogRow {
  long step = 0;
  double total = 0.0, valid = 0.0, hole = 0.0, perc = 0.0, style = 0.0, tv = 0.0, msr = 0.0, fid = 0.0;
  bool operator==(const LossLogRow&) const = default;
};

// Generator plus encoder, ready for inference.
struct InpaintingModel {
  Generator generator;
  Encoder encoder;
  bool use_fw_plus = true;
  std::string fingerprint;

  // corrupted [B,3,S,S], masks [B,1,S,S] -> O_G [B,3,S,S]; no graph is recorded.
  Tensor generate(const Tensor& corrupted, const Tensor& masks) const;
  int resolution() const noexcept { return generator.resolution(); }

  void save(const std::filesystem::path& path) const;
  static InpaintingModel load(const std::filesystem::path& path);
};

struct EncoderTrainingResult {
  InpaintingModel model;
  MeanLatentState sml;
  std::vector<LossLogRow> log;
  long steps = 0;
};

// Trains the encoder (and the RGB branch when F&W+ is on) against the total loss with
// the generator trunk frozen. Resumes from <out_dir>/encoder_training.ifa when asked.
EncoderTrainingResult train_encoder(const std::vector<Image>& data, const Generator& generator,
                                    const RunConfig& config, const TrainOptions& options = {});

// I_m = I * (1 - M), O_G = G(E(I_m), I_m), result = compose(I, O_G, M).
Image inpaint(const Image& image, const Mask& mask, const InpaintingModel& model);
void inpaint_files(const std::filesystem::path& image, const std::filesystem::path& mask,
                   const std::filesystem::path& checkpoint, const std::filesystem::path& output);

EvalReport evaluate_model(const InpaintingModel& model, const std::vector<Image>& images,
                          const std::vector<Mask>& masks, const FeatureExtractor& extractor,
                          const std::string& fingerprint);
// Baseline that returns I_m unchanged.
EvalReport evaluate_copy_baseline(const std::vector<Image>& images, const std::vector<Mask>& masks,
                                  const FeatureExtractor& extractor);

struct AblationCell {
  bool use_fw_plus = true;
  bool use_sml = true;
  bool use_premod = true;
  std::string label() const;
  bool operator==(const AblationCell&) const = default;
};

// The four variants of the ablation table: F&W+; F&W+ SML; F&W+ SML PM; W+ SML PM.
std::vector<AblationCell> default_ablation_cells();
std::vector<AblationCell> full_ablation_grid();
AblationCell parse_ablation_cell(const std::string& spec);

struct AblationRow {
  AblationCell cell;
  std::optional<EvalReport> report;
  std::string error;
};

struct AblationOptions {
  // Pre-trained models by cell label; other cells are trained from the generator.
  std::map<std::string, std::filesystem::path> checkpoints;
  bool train_missing = true;
  TrainOptions train;
};

std::vector<AblationRow> run_ablation(const Dataset& data, const Generator& generator, const RunConfig& config,
                                      const std::vector<AblationCell>& cells, const AblationOptions& options = {});
std::string ablation_table(const std::vector<AblationRow>& rows, Difficulty level);

void write_loss_log(const std::filesystem::path& path, const std::vector<LossLogRow>& rows);
std::vector<LossLogRow> read_loss_log(const std::filesystem::path& path);
void write_gan_log(const std::filesystem::path& path, const std::vector<GanLogRow>& rows);

}  // namespace invertfill
