#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>

#include "invertfill/error.hpp"
#include "invertfill/image_io.hpp"
#include "invertfill/pipeline.hpp"

namespace fs = std::filesystem;
using namespace invertfill;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, const std::string& out_help) {
  cmd->add_option("--config", c.config, "Run configuration file (key = value lines)");
  cmd->add_option("--seed", c.seed, "Override the run seed");
  cmd->add_option("--out", c.out, out_help);
}

RunConfig resolve_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig::defaults(Profile::Tiny) : RunConfig::load(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.out_dir = c.out;
  cfg.validate();
  return cfg;
}

Logger stderr_logger() {
  return [](const std::string& line) { std::cerr << line << std::endl; };
}

int exit_code(std::string_view kind) {
  if (kind == "invalid_input") return 2;
  if (kind == "io_error") return 3;
  if (kind == "checkpoint_mismatch") return 4;
  if (kind == "config_error") return 5;
  if (kind == "training_fault") return 6;
  if (kind == "invariant_violation") return 7;
  if (kind == "usage_error") return 64;
  return 1;
}

int fail(std::string_view kind, std::string message) {
  for (auto& ch : message) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  std::cerr << "error " << kind << ": " << message << std::endl;
  return exit_code(kind);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out || !(out << text)) throw IoError("cannot write " + path.string());
}

void write_report(const fs::path& dir, const std::string& stem, const EvalReport& report) {
  fs::create_directories(dir);
  write_text(dir / (stem + "_records.csv"), report.records());
  write_text(dir / (stem + "_summary.json"), report.to_json().dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GAN-inversion image inpainting"};
  app.require_subcommand(1);

  // make-masks
  Common mm;
  int mm_count = 100, mm_size = 64;
  std::string mm_kind = "freeform", mm_level;
  double mm_coverage = 0.5;
  auto* make_masks = app.add_subcommand("make-masks", "Generate a reproducible mask set and manifest");
  add_common(make_masks, mm, "Output directory for masks and manifest.csv");
  make_masks->add_option("--count", mm_count, "Number of masks")->check(CLI::PositiveNumber);
  make_masks->add_option("--size", mm_size, "Mask size in pixels");
  make_masks->add_option("--kind", mm_kind, "freeform, box or outpaint");
  make_masks->add_option("--coverage", mm_coverage, "Target coverage (ignored with --level)");
  make_masks->add_option("--level", mm_level, "Draw coverages uniformly from a difficulty level: Hard, Extreme, All");

  // train-gen
  Common tg;
  bool tg_resume = false;
  auto* train_gen = app.add_subcommand("train-gen", "Adversarially pretrain the generator on the dataset");
  add_common(train_gen, tg, "Run directory (checkpoints, generator.ifa, gen_loss.csv)");
  train_gen->add_flag("--resume", tg_resume, "Continue from the run directory's training checkpoint");

  // train-enc
  Common te;
  bool te_resume = false;
  std::string te_generator;
  auto* train_enc = app.add_subcommand("train-enc", "Train the encoder and RGB branch against a frozen generator");
  add_common(train_enc, te, "Run directory (checkpoints, model.ifa, enc_loss.csv)");
  train_enc->add_option("--generator", te_generator, "Pretrained generator archive (default: config gen_checkpoint)");
  train_enc->add_flag("--resume", te_resume, "Continue from the run directory's training checkpoint");

  // inpaint
  Common ip;
  std::string ip_image, ip_mask, ip_checkpoint;
  auto* inpaint_cmd = app.add_subcommand("inpaint", "Fill the holes of one image");
  add_common(inpaint_cmd, ip, "Output PNG path");
  inpaint_cmd->add_option("--image", ip_image, "Input RGB PNG")->required();
  inpaint_cmd->add_option("--mask", ip_mask, "Mask PNG (0 keep, 255 hole)")->required();
  inpaint_cmd->add_option("--checkpoint", ip_checkpoint, "Model archive")->required();

  // eval
  Common ev;
  std::string ev_checkpoint, ev_level;
  bool ev_baseline = false;
  auto* eval_cmd = app.add_subcommand("eval", "Score a model on held-out images with seeded masks");
  add_common(eval_cmd, ev, "Directory for records.csv and summary.json");
  eval_cmd->add_option("--checkpoint", ev_checkpoint, "Model archive (default: config enc_checkpoint)");
  eval_cmd->add_option("--level", ev_level, "Mask difficulty: Hard, Extreme or All");
  eval_cmd->add_flag("--baseline", ev_baseline, "Also score the copy-masked-input baseline");

  // ablate
  Common ab;
  std::string ab_generator, ab_level;
  std::vector<std::string> ab_cells, ab_checkpoints;
  bool ab_full_grid = false, ab_resume = false;
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate ablation cells on identical masks");
  add_common(ablate, ab, "Ablation directory");
  ablate->add_option("--generator", ab_generator, "Pretrained generator archive (default: config gen_checkpoint)");
  ablate->add_option("--cells", ab_cells, "Cells such as fw, fw+sml, fw+sml+pm, w+sml+pm");
  ablate->add_flag("--grid", ab_full_grid, "All eight {F&W+,W+} x SML x PM cells");
  ablate->add_option("--use", ab_checkpoints, "Pre-trained cell model as cell=path (skips training that cell)");
  ablate->add_flag("--resume", ab_resume, "Continue each trained cell from its training checkpoint");
  ablate->add_option("--level", ab_level, "Difficulty level shown in the table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage_error", e.what());
  }

  try {
    if (*make_masks) {
      if (mm.out.empty()) throw InvalidInput("--out is required");
      const std::uint64_t seed = mm.seed.value_or(1);
      const MaskKind kind = mask_kind_from_string(mm_kind);
      fs::create_directories(mm.out);
      std::vector<MaskRecord> records;
      std::optional<CoverageRange> range;
      if (!mm_level.empty()) range = coverage_range(difficulty_from_string(mm_level));
      for (int i = 0; i < mm_count; ++i) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
        double coverage = mm_coverage;
        if (range) coverage = std::uniform_real_distribution<double>(range->low + 0.01, range->high - 0.01)(rng);
        const std::uint64_t mask_seed = rng();
        const Mask mask = generate_mask(kind, coverage, mm_size, mask_seed);
        char name[32];
        std::snprintf(name, sizeof name, "mask_%05d.png", i);
        write_mask(fs::path(mm.out) / name, mask);
        records.push_back({name, coverage, kind, mask_seed});
      }
      write_manifest(fs::path(mm.out) / "manifest.csv", records);
      std::cout << "wrote " << records.size() << " masks to " << mm.out << "\n";
    } else if (*train_gen) {
      const RunConfig cfg = resolve_config(tg);
      const Dataset data = load_dataset(cfg);
      auto result = pretrain_generator(data.train, cfg, {cfg.out_dir, tg_resume, stderr_logger()});
      const fs::path out = fs::path(cfg.out_dir) / "generator.ifa";
      fs::create_directories(cfg.out_dir);
      result.generator.save(out);
      write_text(fs::path(cfg.out_dir) / "config.txt", cfg.to_text());
      std::cout << "generator: " << out.string() << "\n";
    } else if (*train_enc) {
      const RunConfig cfg = resolve_config(te);
      const std::string gen_path = te_generator.empty() ? cfg.gen_checkpoint : te_generator;
      if (gen_path.empty()) throw InvalidInput("no generator given (--generator or gen_checkpoint)");
      const Generator gen = Generator::load(gen_path);
      const Dataset data = load_dataset(cfg);
      auto result = train_encoder(data.train, gen, cfg, {cfg.out_dir, te_resume, stderr_logger()});
      write_text(fs::path(cfg.out_dir) / "config.txt", cfg.to_text());
      std::cout << "model: " << (fs::path(cfg.out_dir) / "model.ifa").string() << "\n";
    } else if (*inpaint_cmd) {
      if (ip.out.empty()) throw InvalidInput("--out is required");
      inpaint_files(ip_image, ip_mask, ip_checkpoint, ip.out);
      std::cout << "wrote " << ip.out << "\n";
    } else if (*eval_cmd) {
      RunConfig cfg = resolve_config(ev);
      if (!ev_level.empty()) {
        cfg.eval_level = ev_level;
        cfg.validate();
      }
      const std::string path = ev_checkpoint.empty() ? cfg.enc_checkpoint : ev_checkpoint;
      if (path.empty()) throw InvalidInput("no model given (--checkpoint or enc_checkpoint)");
      const InpaintingModel model = InpaintingModel::load(path);
      if (model.resolution() != cfg.resolution) throw InvalidInput("model resolution differs from config");
      const Dataset data = load_dataset(cfg);
      const auto masks = evaluation_masks(cfg, static_cast<int>(data.eval.size()));
      const auto extractor = ConvFeatureExtractor::seeded();
      const EvalReport report = evaluate_model(model, data.eval, masks, extractor, model.fingerprint);
      std::cout << report.table("model " + path);
      if (!ev.out.empty()) write_report(ev.out, "model", report);
      if (ev_baseline) {
        const EvalReport base = evaluate_copy_baseline(data.eval, masks, extractor);
        std::cout << base.table("copy-masked-input baseline");
        if (!ev.out.empty()) write_report(ev.out, "baseline", base);
      }
    } else if (*ablate) {
      const RunConfig cfg = resolve_config(ab);
      const std::string gen_path = ab_generator.empty() ? cfg.gen_checkpoint : ab_generator;
      if (gen_path.empty()) throw InvalidInput("no generator given (--generator or gen_checkpoint)");
      const Generator gen = Generator::load(gen_path);
      std::vector<AblationCell> cells;
      if (ab_full_grid) cells = full_ablation_grid();
      for (const auto& c : ab_cells) cells.push_back(parse_ablation_cell(c));
      if (cells.empty()) cells = default_ablation_cells();
      AblationOptions opts;
      opts.train = {fs::path(cfg.out_dir), ab_resume, stderr_logger()};
      for (const auto& spec : ab_checkpoints) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos) throw InvalidInput("--use expects cell=path, got " + spec);
        opts.checkpoints[parse_ablation_cell(spec.substr(0, eq)).label()] = spec.substr(eq + 1);
      }
      const Dataset data = load_dataset(cfg);
      const auto rows = run_ablation(data, gen, cfg, cells, opts);
      const Difficulty level = ab_level.empty() ? cfg.eval_difficulty() : difficulty_from_string(ab_level);
      const std::string table = ablation_table(rows, level);
      std::cout << table;
      fs::create_directories(cfg.out_dir);
      write_text(fs::path(cfg.out_dir) / "ablation.txt", table);
      nlohmann::json summary = nlohmann::json::array();
      for (const auto& r : rows) {
        summary.push_back({{"cell", r.cell.label()},
                           {"report", r.report ? r.report->to_json() : nlohmann::json(nullptr)},
                           {"error", r.error}});
      }
      write_text(fs::path(cfg.out_dir) / "ablation.json", summary.dump(2) + "\n");
    }
  } catch (const Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail("io_error", e.what());
  } catch (const std::exception& e) {
    return fail("internal_error", e.what());
  }
  return 0;
}
