#include "invertfill/config.hpp"

#include <doctest.h>

#include "invertfill/error.hpp"
#include "invertfill/pipeline.hpp"

using namespace invertfill;

TEST_CASE("tiny and full profiles") {
  const RunConfig tiny = RunConfig::defaults(Profile::Tiny);
  CHECK(tiny.resolution == 64);
  CHECK(tiny.use_fw_plus);
  CHECK(tiny.use_premod);
  CHECK(tiny.use_sml);
  CHECK(tiny.sml_tau == 0.99);
  CHECK_NOTHROW(tiny.validate());

  const RunConfig full = RunConfig::parse("profile = full\n");
  CHECK(full.profile == Profile::Full);
  CHECK(full.resolution == 256);
  CHECK(full.mapping_layers == 8);
  CHECK(full.generator_config().channels_at(4) == 512);
  CHECK(full.encoder_config().widths == std::array<int, 4>{64, 128, 256, 512});
}

TEST_CASE("parsing handles comments, blanks and overrides") {
  const RunConfig c = RunConfig::parse(
      "# header\n"
      "\n"
      "resolution = 32   # trailing comment\n"
      "  use_sml = off\n"
      "enc_widths = 2, 3, 4, 5\n"
      "sml_tau=0.5\n");
  CHECK(c.resolution == 32);
  CHECK_FALSE(c.use_sml);
  CHECK(c.enc_widths == std::array<int, 4>{2, 3, 4, 5});
  CHECK(c.sml_tau == 0.5);
}

TEST_CASE("profile applies before other keys regardless of order") {
  const RunConfig c = RunConfig::parse("resolution = 16\nprofile = full\n");
  CHECK(c.resolution == 16);
  CHECK(c.mapping_layers == 8);
}

TEST_CASE("bad configuration text raises ConfigError") {
  CHECK_THROWS_AS(RunConfig::parse("no_such_key = 1\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("resolution = 32\nresolution = 64\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("resolution 32\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("resolution = abc\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("resolution = 32x\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("use_sml = maybe\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("enc_widths = 1,2,3\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("profile = huge\n"), ConfigError);
}

TEST_CASE("validation rejects out-of-range values") {
  for (const char* text : {"resolution = 48", "resolution = 4", "enc_lr = -1", "gen_lr = nan", "sml_tau = 1",
                           "sml_tau = -0.1", "sml_samples = 0", "w_hole = -1", "train_mask_min = 0",
                           "train_mask_max = 1", "eval_level = Medium", "mask_kind = blob", "gen_batch = 0",
                           "r1_interval = 0", "log_every = 0"}) {
    CAPTURE(text);
    CHECK_THROWS_AS(RunConfig::parse(text), ConfigError);
  }
  CHECK_NOTHROW(RunConfig::parse("sml_tau = 0"));
  CHECK_NOTHROW(RunConfig::parse("enc_lr = 0"));
}

TEST_CASE("text form round trips") {
  RunConfig c = RunConfig::defaults(Profile::Tiny);
  c.resolution = 128;
  c.sml_tau = 0.123456789012345;
  c.enc_lr = 3.5e-7;
  c.use_premod = false;
  c.out_dir = "some/dir";
  c.loss.fid = 0.25;
  const RunConfig back = RunConfig::parse(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(back.sml_tau == c.sml_tau);
  CHECK(back.enc_lr == c.enc_lr);
  CHECK(back.fingerprint() == c.fingerprint());
}

TEST_CASE("fingerprint ignores steps and paths only") {
  const RunConfig base = RunConfig::defaults(Profile::Tiny);
  const std::string fp = base.fingerprint();
  CHECK(fp.size() == 16);

  RunConfig c = base;
  c.enc_steps = 5;
  c.gen_steps = 7;
  c.log_every = 3;
  c.checkpoint_every = 9;
  c.out_dir = "elsewhere";
  c.gen_checkpoint = "g.ifa";
  c.enc_checkpoint = "e.ifa";
  c.eval_count = 3;
  CHECK(c.fingerprint() == fp);

  c = base;
  c.seed = 2;
  CHECK(c.fingerprint() != fp);
  c = base;
  c.enc_lr = 2e-4;
  CHECK(c.fingerprint() != fp);
  c = base;
  c.use_sml = false;
  CHECK(c.fingerprint() != fp);
  c = base;
  c.loss.msr = 0.5;
  CHECK(c.fingerprint() != fp);
}

TEST_CASE("derived module configs follow the run config") {
  RunConfig c = RunConfig::defaults(Profile::Tiny);
  c.resolution = 32;
  c.use_premod = false;
  const GeneratorConfig g = c.generator_config();
  CHECK(g.resolution == 32);
  CHECK(g.rgb_branch);
  CHECK(g.noise == c.gen_noise);
  const EncoderConfig e = c.encoder_config();
  CHECK(e.resolution == 32);
  CHECK_FALSE(e.use_premod);
  CHECK(g.seed != e.seed);
}

TEST_CASE("toy dataset is deterministic with a disjoint evaluation split") {
  RunConfig c = RunConfig::defaults(Profile::Tiny);
  c.resolution = 16;
  c.toy_count = 30;
  c.eval_count = 10;
  const Dataset a = load_dataset(c);
  const Dataset b = load_dataset(c);
  REQUIRE(a.train.size() == 30);
  REQUIRE(a.eval.size() == 10);
  CHECK(a.train == b.train);
  CHECK(a.eval == b.eval);
  for (const auto& e : a.eval) {
    CHECK(std::find(a.train.begin(), a.train.end(), e) == a.train.end());
  }
  c.data_seed = 8;
  CHECK_FALSE(load_dataset(c).train == a.train);
}

TEST_CASE("evaluation masks are deterministic and land in the configured level") {
  for (const char* kind : {"freeform", "box", "outpaint"}) {
    for (const char* level : {"Hard", "Extreme"}) {
      RunConfig c = RunConfig::defaults(Profile::Tiny);
      c.resolution = 32;
      c.mask_kind = kind;
      c.eval_level = level;
      CAPTURE(kind);
      CAPTURE(level);
      const auto masks = evaluation_masks(c, 12);
      CHECK(masks == evaluation_masks(c, 12));
      const CoverageRange range = coverage_range(c.eval_difficulty());
      for (const auto& m : masks) CHECK(range.contains(m.coverage()));
      c.eval_seed += 1;
      CHECK_FALSE(evaluation_masks(c, 12) == masks);
    }
  }
}

TEST_CASE("training masks stay inside the configured coverage range") {
  RunConfig c = RunConfig::defaults(Profile::Tiny);
  c.resolution = 32;
  const auto masks = training_masks(c, 40, 5);
  CHECK(masks == training_masks(c, 40, 5));
  const double half_pixel = 0.5 / (32.0 * 32.0);
  for (const auto& m : masks) {
    CHECK(m.coverage() >= c.train_mask_min - half_pixel);
    CHECK(m.coverage() <= c.train_mask_max + half_pixel);
  }
}
