#include "invertfill/pipeline.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "invertfill/error.hpp"
#include "invertfill/image_io.hpp"

using namespace invertfill;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = fs::temp_directory_path() / ("invertfill_" + tag + "_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

RunConfig small_config() {
  RunConfig c = RunConfig::defaults(Profile::Tiny);
  c.resolution = 16;
  c.mapping_layers = 2;
  c.gen_channel_base = 1.0 / 32.0;
  c.gen_channel_max = 8;
  c.disc_channel_base = 1.0 / 32.0;
  c.disc_channel_max = 8;
  c.enc_widths = {4, 6, 8, 8};
  c.enc_fpn_channels = 6;
  c.enc_head_channels = 8;
  c.premod_hidden = 12;
  c.sml_samples = 32;
  c.gen_batch = 2;
  c.batch_size = 2;
  c.gen_steps = 4;
  c.enc_steps = 4;
  c.r1_interval = 2;
  c.log_every = 100;
  c.checkpoint_every = 2;
  c.toy_count = 100;
  c.eval_count = 8;
  c.seed = 3;
  return c;
}

const Dataset& small_data() {
  static const Dataset d = load_dataset(small_config());
  return d;
}

const Generator& small_generator() {
  static const Generator g = pretrain_generator(small_data().train, small_config()).generator;
  return g;
}

StateDict with_prefix(const ParameterSet& params, const std::string& prefix) {
  StateDict out;
  for (const auto& [name, t] : params.state()) {
    if (name.rfind(prefix, 0) == 0) out.emplace(name, t);
  }
  return out;
}

bool close_rel(double a, double b, double rel) { return std::abs(a - b) <= rel * std::max(1.0, std::abs(b)); }

}  // namespace

TEST_CASE("zero-step pretraining returns the initial generator") {
  RunConfig c = small_config();
  c.gen_steps = 0;
  const PretrainResult r = pretrain_generator(small_data().train, c);
  CHECK(r.log.empty());
  const Generator fresh(c.generator_config());
  CHECK(r.generator.parameters().state() == fresh.parameters().state());
}

TEST_CASE("pretraining is reproducible and keeps the RGB branch untouched") {
  const RunConfig c = small_config();
  const PretrainResult a = pretrain_generator(small_data().train, c);
  const PretrainResult b = pretrain_generator(small_data().train, c);
  REQUIRE(a.log.size() == 4);
  CHECK(a.log == b.log);
  for (const auto& row : a.log) {
    CHECK(std::isfinite(row.d_loss));
    CHECK(std::isfinite(row.g_loss));
  }
  CHECK(a.log[1].r1 > 0.0);
  CHECK(a.log[0].r1 == 0.0);
  const Generator fresh(c.generator_config());
  CHECK(with_prefix(a.generator.parameters(), "branch.") == with_prefix(fresh.parameters(), "branch."));
  CHECK_FALSE(with_prefix(a.generator.parameters(), "synthesis.") == with_prefix(fresh.parameters(), "synthesis."));
  for (const auto& [name, v] : a.generator.parameters()) CHECK(v.requires_grad());
}

TEST_CASE("pretraining rejects too few images") {
  std::vector<Image> few(small_data().train.begin(), small_data().train.begin() + 50);
  CHECK_THROWS_AS(pretrain_generator(few, small_config()), InvalidInput);
}

TEST_CASE("pretraining resumes to the same trajectory") {
  TempDir dir("gan_resume");
  RunConfig c = small_config();
  const PretrainResult straight = pretrain_generator(small_data().train, c);

  RunConfig half = c;
  half.gen_steps = 2;
  pretrain_generator(small_data().train, half, {dir.path, false, {}});
  CHECK(fs::exists(dir.path / "gen_loss.csv"));
  const PretrainResult resumed = pretrain_generator(small_data().train, c, {dir.path, true, {}});
  REQUIRE(resumed.log.size() == straight.log.size());
  for (std::size_t i = 0; i < straight.log.size(); ++i) {
    CHECK(close_rel(resumed.log[i].d_loss, straight.log[i].d_loss, 1e-5));
    CHECK(close_rel(resumed.log[i].g_loss, straight.log[i].g_loss, 1e-5));
  }
  const auto a = straight.generator.parameters().state();
  const auto b = resumed.generator.parameters().state();
  for (const auto& [name, t] : a) {
    const Tensor& u = b.at(name);
    for (std::size_t i = 0; i < t.numel(); ++i) REQUIRE(close_rel(u[i], t[i], 1e-5));
  }

  RunConfig other = c;
  other.gen_lr = 1e-3;
  CHECK_THROWS_AS(pretrain_generator(small_data().train, other, {dir.path, true, {}}), CheckpointMismatch);
}

TEST_CASE("encoder training freezes the trunk and trains the branch only under F&W+") {
  const Generator& g = small_generator();
  const RunConfig c = small_config();
  const EncoderTrainingResult r = train_encoder(small_data().train, g, c);
  CHECK(r.steps == 4);
  CHECK(r.log.size() == 4);
  CHECK(with_prefix(r.model.generator.parameters(), "mapping.") == with_prefix(g.parameters(), "mapping."));
  CHECK(with_prefix(r.model.generator.parameters(), "synthesis.") == with_prefix(g.parameters(), "synthesis."));
  CHECK_FALSE(with_prefix(r.model.generator.parameters(), "branch.") == with_prefix(g.parameters(), "branch."));
  const Encoder fresh(c.encoder_config());
  CHECK_FALSE(r.model.encoder.parameters().state() == fresh.parameters().state());
  for (const auto& [name, v] : r.model.generator.parameters()) CHECK(v.requires_grad());
  for (const auto& row : r.log) {
    CHECK(std::isfinite(row.total));
    CHECK(row.total >= 0.0);
  }

  RunConfig w = c;
  w.use_fw_plus = false;
  const EncoderTrainingResult rw = train_encoder(small_data().train, g, w);
  CHECK(rw.model.generator.parameters().state() == g.parameters().state());
  CHECK_FALSE(rw.model.use_fw_plus);
}

TEST_CASE("zero learning rate leaves every weight unchanged") {
  RunConfig c = small_config();
  c.enc_lr = 0.0;
  const EncoderTrainingResult r = train_encoder(small_data().train, small_generator(), c);
  const Encoder fresh(c.encoder_config());
  CHECK(r.model.encoder.parameters().state() == fresh.parameters().state());
  CHECK(r.model.generator.parameters().state() == small_generator().parameters().state());
}

TEST_CASE("one soft update per step with SML, none without") {
  RunConfig c = small_config();
  const EncoderTrainingResult on = train_encoder(small_data().train, small_generator(), c);
  CHECK(on.sml.updates() == on.steps);

  c.use_sml = false;
  const EncoderTrainingResult off = train_encoder(small_data().train, small_generator(), c);
  CHECK(off.sml.updates() == 0);
  CHECK(off.sml.online() == off.sml.target());
  c.enc_steps = 1;
  CHECK(train_encoder(small_data().train, small_generator(), c).sml.online() == off.sml.online());
  CHECK_FALSE(on.sml.online() == off.sml.online());
}

TEST_CASE("encoder training resumes deterministically") {
  TempDir dir("enc_resume");
  const RunConfig c = small_config();
  const EncoderTrainingResult straight = train_encoder(small_data().train, small_generator(), c);

  RunConfig half = c;
  half.enc_steps = 2;
  train_encoder(small_data().train, small_generator(), half, {dir.path, false, {}});
  const EncoderTrainingResult resumed = train_encoder(small_data().train, small_generator(), c, {dir.path, true, {}});
  REQUIRE(resumed.log.size() == straight.log.size());
  for (std::size_t i = 0; i < straight.log.size(); ++i) {
    CHECK(close_rel(resumed.log[i].total, straight.log[i].total, 1e-5));
  }
  CHECK(resumed.sml.updates() == straight.sml.updates());
  const auto a = straight.model.encoder.parameters().state();
  const auto b = resumed.model.encoder.parameters().state();
  for (const auto& [name, t] : a) {
    const Tensor& u = b.at(name);
    for (std::size_t i = 0; i < t.numel(); ++i) REQUIRE(close_rel(u[i], t[i], 1e-5));
  }
  CHECK(fs::exists(dir.path / "model.ifa"));
  CHECK(read_loss_log(dir.path / "enc_loss.csv").size() == 4);

  RunConfig other = c;
  other.sml_tau = 0.9;
  CHECK_THROWS_AS(train_encoder(small_data().train, small_generator(), other, {dir.path, true, {}}),
                  CheckpointMismatch);
}

TEST_CASE("a diverging run raises TrainingFault and keeps the last good state") {
  TempDir dir("fault");
  RunConfig c = small_config();
  c.enc_lr = 1e300;
  c.enc_steps = 20;
  CHECK_THROWS_AS(train_encoder(small_data().train, small_generator(), c, {dir.path, false, {}}), TrainingFault);
  CHECK(fs::exists(dir.path / "encoder_last_good.ifa"));
}

TEST_CASE("encoder training input validation") {
  RunConfig c = small_config();
  CHECK_THROWS_AS(train_encoder({}, small_generator(), c), InvalidInput);
  c.resolution = 32;
  CHECK_THROWS_AS(train_encoder(small_data().train, small_generator(), c), InvalidInput);
}

TEST_CASE("inpainting respects the hard constraint") {
  const InpaintingModel model = train_encoder(small_data().train, small_generator(), small_config()).model;
  const Image& img = small_data().eval[0];

  const Mask empty(16);
  CHECK(inpaint(img, empty, model) == img);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Mask m = generate_mask(MaskKind::Freeform, 0.3 + 0.05 * seed, 16, seed);
    const Image out = inpaint(img, m, model);
    CHECK(satisfies_hard_constraint(img, out, m));
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) CHECK(std::abs(out.at(c, y, x)) <= 1.0);
  }

  CHECK_THROWS_AS(inpaint(img, Mask(32), model), InvalidInput);
  CHECK_THROWS_AS(inpaint(Image(1, 16), empty, model), InvalidInput);
}

TEST_CASE("model checkpoints round trip bit-exactly") {
  TempDir dir("model");
  const InpaintingModel model = train_encoder(small_data().train, small_generator(), small_config()).model;
  model.save(dir.path / "m.ifa");
  const InpaintingModel back = InpaintingModel::load(dir.path / "m.ifa");
  CHECK(back.fingerprint == model.fingerprint);
  CHECK(back.use_fw_plus == model.use_fw_plus);
  CHECK(back.generator.parameters().state() == model.generator.parameters().state());
  CHECK(back.encoder.parameters().state() == model.encoder.parameters().state());
  const Tensor x = stack_images({small_data().eval[1]});
  const Tensor m = stack_masks({generate_mask(MaskKind::Box, 0.4, 16, 2)});
  const Tensor corrupted = apply_mask_batch(x, m);
  CHECK(back.generate(corrupted, m) == model.generate(corrupted, m));

  small_generator().save(dir.path / "g.ifa");
  CHECK_THROWS_AS(InpaintingModel::load(dir.path / "g.ifa"), CheckpointMismatch);
}

TEST_CASE("file-based inpainting and its errors") {
  TempDir dir("files");
  const InpaintingModel model = train_encoder(small_data().train, small_generator(), small_config()).model;
  model.save(dir.path / "m.ifa");
  const Image& img = small_data().eval[2];
  const Mask mask = generate_mask(MaskKind::Freeform, 0.5, 16, 4);
  write_image(dir.path / "in.png", img);
  write_mask(dir.path / "mask.png", mask);
  inpaint_files(dir.path / "in.png", dir.path / "mask.png", dir.path / "m.ifa", dir.path / "out.png");
  const Image out = read_image(dir.path / "out.png");
  CHECK(satisfies_hard_constraint(read_image(dir.path / "in.png"), out, mask));

  CHECK_THROWS_AS(inpaint_files(dir.path / "none.png", dir.path / "mask.png", dir.path / "m.ifa", dir.path / "o.png"),
                  IoError);
  CHECK_THROWS_AS(inpaint_files(dir.path / "in.png", dir.path / "mask.png", dir.path / "none.ifa", dir.path / "o.png"),
                  IoError);
  write_mask(dir.path / "big.png", Mask(32));
  CHECK_THROWS_AS(inpaint_files(dir.path / "in.png", dir.path / "big.png", dir.path / "m.ifa", dir.path / "o.png"),
                  InvalidInput);
  std::ofstream(dir.path / "junk.ifa") << "not a checkpoint";
  CHECK_THROWS_AS(inpaint_files(dir.path / "in.png", dir.path / "mask.png", dir.path / "junk.ifa", dir.path / "o.png"),
                  CheckpointMismatch);
}

TEST_CASE("loss log round trip") {
  TempDir dir("log");
  const std::vector<LossLogRow> rows{{1, 1.5, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7},
                                     {2, 1.0 / 3.0, 1e-17, 2e10, 0.0, 1.0, 2.0, 3.0, 4.0}};
  write_loss_log(dir.path / "l.csv", rows);
  CHECK(read_loss_log(dir.path / "l.csv") == rows);
  CHECK_THROWS_AS(read_loss_log(dir.path / "missing.csv"), IoError);
  std::ofstream(dir.path / "bad.csv") << "a,b\n1,2\n";
  CHECK_THROWS_AS(read_loss_log(dir.path / "bad.csv"), InvalidInput);
}

TEST_CASE("ablation cells parse and label") {
  CHECK(default_ablation_cells().size() == 4);
  CHECK(full_ablation_grid().size() == 8);
  const AblationCell cell = parse_ablation_cell("w+sml+pm");
  CHECK_FALSE(cell.use_fw_plus);
  CHECK(cell.use_sml);
  CHECK(cell.use_premod);
  CHECK(parse_ablation_cell("fw") == AblationCell{true, false, false});
  for (const auto& c : full_ablation_grid()) {
    std::string spec = c.use_fw_plus ? "fw" : "w";
    if (c.use_sml) spec += "+sml";
    if (c.use_premod) spec += "+pm";
    CHECK(parse_ablation_cell(spec) == c);
  }
  CHECK(AblationCell{false, true, true}.label() == "W+ SML PM");
  CHECK_THROWS_AS(parse_ablation_cell("sml"), InvalidInput);
  CHECK_THROWS_AS(parse_ablation_cell("fw+xyz"), InvalidInput);
}

TEST_CASE("ablation runs one row per cell and reports missing cells") {
  TempDir dir("ablate");
  RunConfig c = small_config();
  c.enc_steps = 2;
  const AblationCell cell{true, true, true};
  AblationOptions opts;
  opts.train.out_dir = dir.path;
  const auto rows = run_ablation(small_data(), small_generator(), c, {cell}, opts);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].error.empty());
  REQUIRE(rows[0].report.has_value());
  CHECK(rows[0].report->n_images == c.eval_count);

  AblationOptions missing;
  missing.train_missing = false;
  const auto absent = run_ablation(small_data(), small_generator(), c, {AblationCell{false, true, true}}, missing);
  REQUIRE(absent.size() == 1);
  CHECK_FALSE(absent[0].report.has_value());
  CHECK_FALSE(absent[0].error.empty());
  CHECK(ablation_table(absent, Difficulty::Extreme).find("absent") != std::string::npos);

  fs::path saved;
  for (const auto& e : fs::recursive_directory_iterator(dir.path)) {
    if (e.path().filename() == "model.ifa") saved = e.path();
  }
  REQUIRE_FALSE(saved.empty());
  AblationOptions reuse;
  reuse.train_missing = false;
  reuse.checkpoints[cell.label()] = saved;
  const auto again = run_ablation(small_data(), small_generator(), c, {cell}, reuse);
  const auto third = run_ablation(small_data(), small_generator(), c, {cell}, reuse);
  REQUIRE(again[0].report.has_value());
  CHECK(*again[0].report == *rows[0].report);
  CHECK(*third[0].report == *again[0].report);

  reuse.checkpoints.clear();
  reuse.checkpoints[AblationCell{false, true, true}.label()] = saved;
  const auto wrong = run_ablation(small_data(), small_generator(), c, {AblationCell{false, true, true}}, reuse);
  CHECK_FALSE(wrong[0].report.has_value());
  CHECK(wrong[0].error.find("different cell") != std::string::npos);
}
