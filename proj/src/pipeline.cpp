#include "invertfill/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "invertfill/error.hpp"
#include "invertfill/image_io.hpp"
#include "invertfill/toy_data.hpp"

namespace invertfill {

namespace {

constexpr std::uint64_t kGanStream = 0x6a17;
constexpr std::uint64_t kEncoderStream = 0xe7c0;
constexpr std::uint64_t kEvalSplitStream = 0xe7a1;
constexpr std::uint64_t kMeanInitStream = 0x5e71;
constexpr std::uint64_t kResampleStream = 0x5e72;
constexpr const char* kGeneratorTraining = "generator_training.ifa";
constexpr const char* kEncoderTraining = "encoder_training.ifa";

void say(const TrainOptions& o, const std::string& msg) {
  if (o.log) o.log(msg);
}

std::vector<std::pair<std::string, ag::Var>> concat(std::vector<std::pair<std::string, ag::Var>> a,
                                                    const std::vector<std::pair<std::string, ag::Var>>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

Tensor sample_batch(const std::vector<Image>& data, int count, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::vector<Image> batch;
  for (int i = 0; i < count; ++i) batch.push_back(data[pick(rng)]);
  return stack_images(batch);
}

template <typename Row, typename F>
Tensor rows_to_tensor(const std::vector<Row>& rows, int width, F fill) {
  Tensor t({static_cast<int>(rows.size()), width});
  for (std::size_t i = 0; i < rows.size(); ++i) fill(rows[i], &t[i * width]);
  return t;
}

std::vector<LossLogRow> loss_rows_from_tensor(const Tensor& t) {
  std::vector<LossLogRow> rows;
  if (t.empty()) return rows;
  for (int i = 0; i < t.dim(0); ++i) {
    const double* r = t.data() + static_cast<std::size_t>(i) * 9;
    rows.push_back({static_cast<long>(r[0]), r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]});
  }
  return rows;
}

Tensor loss_rows_tensor(const std::vector<LossLogRow>& rows) {
  return rows_to_tensor(rows, 9, [](const LossLogRow& r, double* o) {
    const double v[9] = {static_cast<double>(r.step), r.total, r.valid, r.hole, r.perc, r.style, r.tv, r.msr, r.fid};
    std::copy(v, v + 9, o);
  });
}

Tensor gan_rows_tensor(const std::vector<GanLogRow>& rows) {
  return rows_to_tensor(rows, 4, [](const GanLogRow& r, double* o) {
    o[0] = static_cast<double>(r.step);
    o[1] = r.d_loss;
    o[2] = r.g_loss;
    o[3] = r.r1;
  });
}

std::vector<GanLogRow> gan_rows_from_tensor(const Tensor& t) {
  std::vector<GanLogRow> rows;
  if (t.empty()) return rows;
  for (int i = 0; i < t.dim(0); ++i) {
    const double* r = t.data() + static_cast<std::size_t>(i) * 4;
    rows.push_back({static_cast<long>(r[0]), r[1], r[2], r[3]});
  }
  return rows;
}

void check_fingerprint(const Archive& a, const RunConfig& config) {
  const std::string got = a.header.value("fingerprint", std::string());
  if (got != config.fingerprint()) {
    throw CheckpointMismatch("checkpoint fingerprint " + got + " does not match config fingerprint " +
                             config.fingerprint());
  }
}

}  // namespace

Dataset load_dataset(const RunConfig& config) {
  Dataset d;
  if (config.dataset_dir.empty()) {
    d.train = toy_dataset(config.toy_count, config.resolution, config.data_seed);
    d.eval = toy_dataset(config.eval_count, config.resolution, mix_seed(config.data_seed, kEvalSplitStream));
    return d;
  }
  auto all = load_image_directory(config.dataset_dir, config.resolution);
  if (static_cast<int>(all.size()) <= config.eval_count) {
    throw InvalidInput("dataset has " + std::to_string(all.size()) + " images; need more than eval_count = " +
                       std::to_string(config.eval_count));
  }
  d.eval.assign(all.end() - config.eval_count, all.end());
  all.resize(all.size() - config.eval_count);
  d.train = std::move(all);
  return d;
}

std::vector<Mask> evaluation_masks(const RunConfig& config, int count) {
  const CoverageRange range = coverage_range(config.eval_difficulty());
  const MaskKind kind = config.eval_mask_kind();
  // Stay clear of the band edges so the achieved coverage classifies as intended.
  const double lo = std::max(range.low + 0.01, kind == MaskKind::Outpaint
                                                   ? outpaint_min_coverage(config.resolution) + 0.01
                                                   : 0.0);
  const double hi = range.high - 0.01;
  std::vector<Mask> masks;
  for (int i = 0; i < count; ++i) {
    Rng rng(mix_seed(config.eval_seed, static_cast<std::uint64_t>(i)));
    const double target = std::uniform_real_distribution<double>(lo, hi)(rng);
    masks.push_back(generate_mask(kind, target, config.resolution, rng()));
  }
  return masks;
}

std::vector<Mask> training_masks(const RunConfig& config, int count, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> cover(config.train_mask_min, config.train_mask_max);
  std::vector<Mask> masks;
  for (int i = 0; i < count; ++i) {
    const double target = cover(rng);
    masks.push_back(generate_mask(MaskKind::Freeform, target, config.resolution, rng()));
  }
  return masks;
}

// ---------------------------------------------------------------------------------------------
// Generator pretraining

namespace {

struct GanState {
  Generator gen;
  Discriminator disc;
  Adam opt_g, opt_d;
  long step = 0;
  std::vector<GanLogRow> log;
};

DiscriminatorConfig discriminator_config(const RunConfig& c) {
  return {c.resolution, c.disc_channel_base, c.disc_channel_max, mix_seed(c.seed, 3)};
}

void save_gan_state(const std::filesystem::path& path, const GanState& s, const RunConfig& config) {
  Archive a;
  a.header = {{"kind", "generator_training"},
              {"fingerprint", config.fingerprint()},
              {"step", s.step},
              {"generator", s.gen.to_archive().header},
              {"discriminator", s.disc.to_archive().header}};
  insert_prefixed(a.tensors, "generator/", s.gen.parameters().state());
  insert_prefixed(a.tensors, "discriminator/", s.disc.parameters().state());
  insert_prefixed(a.tensors, "opt_g/", s.opt_g.state());
  insert_prefixed(a.tensors, "opt_d/", s.opt_d.state());
  a.tensors["log"] = gan_rows_tensor(s.log);
  save_archive(path, a);
}

void load_gan_state(const std::filesystem::path& path, GanState& s, const RunConfig& config) {
  const Archive a = load_archive(path);
  expect_header(a, {{"kind", "generator_training"}});
  check_fingerprint(a, config);
  s.gen.parameters().load_state(extract_prefixed(a.tensors, "generator/"));
  s.disc.parameters().load_state(extract_prefixed(a.tensors, "discriminator/"));
  s.step = a.header.at("step");
  s.opt_g.load_state(extract_prefixed(a.tensors, "opt_g/"), s.step);
  s.opt_d.load_state(extract_prefixed(a.tensors, "opt_d/"), s.step);
  s.log = gan_rows_from_tensor(a.tensors.count("log") ? a.tensors.at("log") : Tensor());
}

ag::Var fake_images(const Generator& gen, const Tensor& z) {
  return gen.synthesize_w_plus(StyleCode::repeat(gen.map_latent(ag::Var::constant(z)), gen.resolution()));
}

// Lazy R1: the parameter gradient of (gamma/2) E|grad_x D(x)|^2 equals the gradient of
// gamma * E[dD(x)/dx . g] with g = grad_x D(x) held fixed; the directional derivative
// is taken by a central difference along g. Returns (surrogate, penalty value).
std::pair<ag::Var, double> r1_surrogate(const Discriminator& disc, const Tensor& reals, double gamma, int interval) {
  const int batch = reals.dim(0);
  Tensor g;
  {
    ParameterSet& ps = const_cast<ParameterSet&>(disc.parameters());
    ps.set_trainable("", false);
    ag::Var x = ag::Var::parameter(reals);
    ag::backward(ag::sum(disc(x)));
    g = x.grad();
    ps.set_trainable("", true);
  }
  double sq = 0.0;
  for (double v : g.values()) sq += v * v;
  const double mean_sq = sq / batch;
  const double penalty = 0.5 * gamma * mean_sq;
  if (mean_sq == 0.0 || gamma == 0.0) return {ag::Var::constant(Tensor({1})), penalty};
  const double per_sample = static_cast<double>(reals.numel() / batch);
  const double h = 1e-3 * std::sqrt(per_sample / mean_sq);
  Tensor xp = reals, xm = reals;
  for (std::size_t i = 0; i < reals.numel(); ++i) {
    xp[i] += h * g[i];
    xm[i] -= h * g[i];
  }
  const ag::Var diff = ag::sub(ag::sum(disc(ag::Var::constant(xp))), ag::sum(disc(ag::Var::constant(xm))));
  return {ag::scale(diff, gamma * interval / (2.0 * h * batch)), penalty};
}

}  // namespace

PretrainResult pretrain_generator(const std::vector<Image>& data, const RunConfig& config,
                                  const TrainOptions& options) {
  config.validate();
  if (data.size() < 100) {
    throw InvalidInput("generator pretraining needs at least 100 images, got " + std::to_string(data.size()));
  }
  for (const auto& img : data) {
    if (img.size() != config.resolution || img.channels() != 3) {
      throw InvalidInput("training image does not match resolution " + std::to_string(config.resolution));
    }
  }
  Generator gen(config.generator_config());
  gen.set_branch_trainable(false);
  Discriminator disc(discriminator_config(config));
  const AdamOptions gopt{config.gen_lr, 0.0, 0.99, 1e-8};
  const AdamOptions dopt{config.disc_lr, 0.0, 0.99, 1e-8};
  auto g_params = concat(named_with_prefix(gen.parameters(), "mapping."), named_with_prefix(gen.parameters(), "synthesis."));
  auto d_params = named_with_prefix(disc.parameters(), "");
  GanState st{std::move(gen), std::move(disc), Adam(g_params, gopt), Adam(d_params, dopt), 0, {}};

  const auto ckpt = options.out_dir.empty() ? std::filesystem::path() : options.out_dir / kGeneratorTraining;
  if (options.resume && !ckpt.empty() && std::filesystem::exists(ckpt)) {
    load_gan_state(ckpt, st, config);
    say(options, "resumed generator pretraining at step " + std::to_string(st.step));
  }
  if (!options.out_dir.empty()) std::filesystem::create_directories(options.out_dir);

  const std::uint64_t stream = mix_seed(config.seed, kGanStream);
  const int b = config.gen_batch;
  for (long t = st.step + 1; t <= config.gen_steps; ++t) {
    Rng rng(mix_seed(stream, static_cast<std::uint64_t>(t)));
    const Tensor reals = sample_batch(data, b, rng);
    const Tensor z_d = random_normal({b, kStyleDim}, rng);
    const Tensor z_g = random_normal({b, kStyleDim}, rng);

    // Discriminator update.
    Tensor fake;
    {
      ag::NoGradGuard guard;
      fake = fake_images(st.gen, z_d).value();
    }
    st.disc.parameters().zero_grad();
    double r1 = 0.0;
    ag::Var r1_term;
    if (config.r1_gamma > 0.0 && t % config.r1_interval == 0) {
      std::tie(r1_term, r1) = r1_surrogate(st.disc, reals, config.r1_gamma, config.r1_interval);
    }
    const ag::Var d_real = st.disc(ag::Var::constant(reals));
    const ag::Var d_fake = st.disc(ag::Var::constant(fake));
    ag::Var d_loss = ag::add(ag::mean(ag::softplus(d_fake)), ag::mean(ag::softplus(ag::scale(d_real, -1.0))));
    const double d_value = d_loss.item();
    if (r1_term.defined()) d_loss = ag::add(d_loss, r1_term);
    auto fault = [&](const std::string& term) {
      if (!ckpt.empty()) {
        --st.step;
        save_gan_state(options.out_dir / "generator_last_good.ifa", st, config);
      }
      throw TrainingFault(term, "non-finite " + term + " at generator step " + std::to_string(t));
    };
    st.step = t;
    if (!std::isfinite(d_loss.item())) fault("L_D");
    ag::backward(d_loss);
    st.opt_d.step();

    // Generator update.
    st.disc.parameters().set_trainable("", false);
    st.gen.parameters().zero_grad();
    const ag::Var g_loss = ag::mean(ag::softplus(ag::scale(st.disc(fake_images(st.gen, z_g)), -1.0)));
    if (!std::isfinite(g_loss.item())) {
      st.disc.parameters().set_trainable("", true);
      fault("L_G");
    }
    ag::backward(g_loss);
    st.opt_g.step();
    st.disc.parameters().set_trainable("", true);

    st.log.push_back({t, d_value, g_loss.item(), r1});
    if (t % config.log_every == 0 || t == config.gen_steps) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "gen step %ld/%ld  L_D %.4f  L_G %.4f  R1 %.4f", t, config.gen_steps, d_value,
                    g_loss.item(), r1);
      say(options, buf);
    }
    if (!ckpt.empty() && (t % config.checkpoint_every == 0 || t == config.gen_steps)) {
      save_gan_state(ckpt, st, config);
    }
  }
  st.gen.set_branch_trainable(true);
  if (!options.out_dir.empty()) write_gan_log(options.out_dir / "gen_loss.csv", st.log);
  return {std::move(st.gen), std::move(st.log)};
}

// ---------------------------------------------------------------------------------------------
// Inference model

Tensor InpaintingModel::generate(const Tensor& corrupted, const Tensor& masks) const {
  ag::NoGradGuard guard;
  const Inversion inv = encoder.invert(corrupted);
  const ag::Var out =
      use_fw_plus ? generator.synthesize(inv.styles, corrupted, masks) : generator.synthesize_w_plus(inv.styles);
  return out.value();
}

void InpaintingModel::save(const std::filesystem::path& path) const {
  Archive a;
  a.header = {{"kind", "inpainting_model"},
              {"fingerprint", fingerprint},
              {"use_fw_plus", use_fw_plus},
              {"generator", generator.to_archive().header},
              {"encoder", encoder.to_archive().header}};
  insert_prefixed(a.tensors, "generator/", generator.parameters().state());
  insert_prefixed(a.tensors, "encoder/", encoder.parameters().state());
  save_archive(path, a);
}

InpaintingModel InpaintingModel::load(const std::filesystem::path& path) {
  const Archive a = load_archive(path);
  expect_header(a, {{"kind", "inpainting_model"}});
  try {
    Archive g{a.header.at("generator"), extract_prefixed(a.tensors, "generator/")};
    Archive e{a.header.at("encoder"), extract_prefixed(a.tensors, "encoder/")};
    InpaintingModel m{Generator::from_archive(g), Encoder::from_archive(e), a.header.at("use_fw_plus"),
                      a.header.value("fingerprint", std::string())};
    if (m.generator.resolution() != m.encoder.config().resolution) {
      throw CheckpointMismatch("generator and encoder resolutions differ");
    }
    return m;
  } catch (const nlohmann::json::exception& ex) {
    throw CheckpointMismatch(std::string("model header incomplete: ") + ex.what());
  }
}

// ---------------------------------------------------------------------------------------------
// Encoder training

namespace {

struct EncoderState {
  Generator gen;
  Encoder enc;
  Adam opt;
  MeanLatentState sml;
  long step = 0;
  std::vector<LossLogRow> log;
};

void save_encoder_state(const std::filesystem::path& path, const EncoderState& s, const RunConfig& config) {
  Archive a;
  a.header = {{"kind", "encoder_training"},
              {"fingerprint", config.fingerprint()},
              {"step", s.step},
              {"use_fw_plus", config.use_fw_plus},
              {"sml", s.sml.to_json()},
              {"generator", s.gen.to_archive().header},
              {"encoder", s.enc.to_archive().header}};
  insert_prefixed(a.tensors, "generator/", s.gen.parameters().state());
  insert_prefixed(a.tensors, "encoder/", s.enc.parameters().state());
  insert_prefixed(a.tensors, "opt/", s.opt.state());
  a.tensors["sml/online"] = s.sml.online();
  a.tensors["sml/target"] = s.sml.target();
  a.tensors["sml/displacement"] = s.sml.displacement();
  a.tensors["log"] = loss_rows_tensor(s.log);
  save_archive(path, a);
}

void load_encoder_state(const std::filesystem::path& path, EncoderState& s, const RunConfig& config) {
  const Archive a = load_archive(path);
  expect_header(a, {{"kind", "encoder_training"}});
  check_fingerprint(a, config);
  s.gen.parameters().load_state(extract_prefixed(a.tensors, "generator/"));
  s.enc.parameters().load_state(extract_prefixed(a.tensors, "encoder/"));
  s.step = a.header.at("step");
  s.opt.load_state(extract_prefixed(a.tensors, "opt/"), s.step);
  s.sml = MeanLatentState::from_parts(a.header.at("sml"), a.tensors.at("sml/online"), a.tensors.at("sml/target"),
                                      a.tensors.at("sml/displacement"));
  s.log = loss_rows_from_tensor(a.tensors.count("log") ? a.tensors.at("log") : Tensor());
}

}  // namespace

EncoderTrainingResult train_encoder(const std::vector<Image>& data, const Generator& generator,
                                    const RunConfig& config, const TrainOptions& options) {
  config.validate();
  if (data.empty()) throw InvalidInput("encoder training needs a nonempty dataset");
  if (generator.resolution() != config.resolution) {
    throw InvalidInput("generator resolution " + std::to_string(generator.resolution()) +
                       " does not match config resolution " + std::to_string(config.resolution));
  }
  if (config.use_fw_plus && !generator.has_rgb_branch()) throw InvalidInput("F&W+ training needs an RGB branch");
  for (const auto& img : data) {
    if (img.size() != config.resolution || img.channels() != 3) {
      throw InvalidInput("training image does not match resolution " + std::to_string(config.resolution));
    }
  }

  Generator gen = generator.clone();
  gen.set_trunk_trainable(false);
  gen.set_branch_trainable(config.use_fw_plus);
  Encoder enc(config.encoder_config());
  auto params = named_with_prefix(enc.parameters(), "", "encoder/");
  if (config.use_fw_plus) params = concat(params, named_with_prefix(gen.parameters(), "branch.", "generator/"));
  const AdamOptions aopt{config.enc_lr, 0.9, 0.999, 1e-8};

  const MappingFn mapping = [&gen](const Tensor& z) { return gen.map_latent(z); };
  const Tensor initial_mean = estimate_mean_latent(mapping, config.sml_samples, mix_seed(config.seed, kMeanInitStream));
  MeanLatentState sml(initial_mean, initial_mean, config.sml_tau, config.sml_tolerance, config.sml_samples,
                      mix_seed(config.seed, kResampleStream));
  EncoderState st{std::move(gen), std::move(enc), Adam(params, aopt), std::move(sml), 0, {}};
  const Resampler resampler = [&st](int n, std::uint64_t seed) {
    return estimate_mean_latent([&st](const Tensor& z) { return st.gen.map_latent(z); }, n, seed);
  };

  const auto ckpt = options.out_dir.empty() ? std::filesystem::path() : options.out_dir / kEncoderTraining;
  if (options.resume && !ckpt.empty() && std::filesystem::exists(ckpt)) {
    load_encoder_state(ckpt, st, config);
    say(options, "resumed encoder training at step " + std::to_string(st.step));
  }
  if (!options.out_dir.empty()) std::filesystem::create_directories(options.out_dir);

  const auto extractor = ConvFeatureExtractor::seeded();
  const std::uint64_t stream = mix_seed(config.seed, kEncoderStream);
  const int b = config.batch_size;
  for (long t = st.step + 1; t <= config.enc_steps; ++t) {
    Rng rng(mix_seed(stream, static_cast<std::uint64_t>(t)));
    const Tensor images = sample_batch(data, b, rng);
    const Tensor masks = stack_masks(training_masks(config, b, rng()));
    const Tensor corrupted = apply_mask_batch(images, masks);

    st.opt.zero_grad();
    const Inversion inv = st.enc.invert(corrupted);
    MeanLatentState next = st.sml;
    if (config.use_sml) next = next.soft_update().maybe_resample(resampler);
    const ag::Var output = config.use_fw_plus ? st.gen.synthesize(inv.styles, corrupted, masks)
                                              : st.gen.synthesize_w_plus(inv.styles);
    LossParts parts;
    parts.ipt = inpainting_terms(images, output, masks, extractor, config.loss);
    parts.msr = msr_loss(images, inv.encoded.recon, extractor);
    parts.fid = fidelity_loss(inv.styles, next.online());
    try {
      parts = total_loss(std::move(parts), config.loss);
    } catch (const TrainingFault& e) {
      if (!ckpt.empty()) save_encoder_state(options.out_dir / "encoder_last_good.ifa", st, config);
      throw TrainingFault(e.term(), std::string(e.what()) + " at encoder step " + std::to_string(t));
    }
    ag::backward(parts.total);
    st.opt.step();
    st.sml = std::move(next);
    st.step = t;

    const LossLogRow row{t,
                         parts.total.item(),
                         parts.ipt.valid.item(),
                         parts.ipt.hole.item(),
                         parts.ipt.perceptual.item(),
                         parts.ipt.style.item(),
                         parts.ipt.tv.item(),
                         parts.msr.item(),
                         parts.fid.item()};
    st.log.push_back(row);
    if (t % config.log_every == 0 || t == config.enc_steps) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "enc step %ld/%ld  L_total %.4f  L_hole %.4f  L_msr %.4f  L_fid %.4f", t,
                    config.enc_steps, row.total, row.hole, row.msr, row.fid);
      say(options, buf);
    }
    if (!ckpt.empty() && (t % config.checkpoint_every == 0 || t == config.enc_steps)) {
      save_encoder_state(ckpt, st, config);
    }
  }

  EncoderTrainingResult result{
      InpaintingModel{std::move(st.gen), std::move(st.enc), config.use_fw_plus, config.fingerprint()},
      std::move(st.sml), std::move(st.log), st.step};
  result.model.generator.set_trunk_trainable(true);
  result.model.generator.set_branch_trainable(true);
  if (!options.out_dir.empty()) {
    write_loss_log(options.out_dir / "enc_loss.csv", result.log);
    result.model.save(options.out_dir / "model.ifa");
  }
  return result;
}

// ---------------------------------------------------------------------------------------------
// Inference and evaluation

Image inpaint(const Image& image, const Mask& mask, const InpaintingModel& model) {
  if (image.channels() != 3) throw InvalidInput("inpaint expects an RGB image");
  if (image.size() != model.resolution() || mask.size() != model.resolution()) {
    throw InvalidInput("image is " + std::to_string(image.size()) + " px, mask " + std::to_string(mask.size()) +
                       " px, model " + std::to_string(model.resolution()) + " px");
  }
  const Tensor m = stack_masks({mask});
  const Tensor corrupted = apply_mask_batch(stack_images({image}), m);
  const Image generated = image_from_batch(model.generate(corrupted, m), 0);
  Image out = compose(image, generated, mask);
  if (!satisfies_hard_constraint(image, out, mask)) {
    throw InvariantViolation("composition changed unmasked pixels");
  }
  return out;
}

void inpaint_files(const std::filesystem::path& image, const std::filesystem::path& mask,
                   const std::filesystem::path& checkpoint, const std::filesystem::path& output) {
  const Image img = read_image(image);
  const Mask m = read_mask(mask);
  const InpaintingModel model = InpaintingModel::load(checkpoint);
  write_image(output, inpaint(img, m, model));
}

EvalReport evaluate_model(const InpaintingModel& model, const std::vector<Image>& images,
                          const std::vector<Mask>& masks, const FeatureExtractor& extractor,
                          const std::string& fingerprint) {
  const InpaintModel fn = [&model](const Tensor& c, const Tensor& m) { return model.generate(c, m); };
  return evaluate(images, masks, fn, extractor, {8, fingerprint});
}

EvalReport evaluate_copy_baseline(const std::vector<Image>& images, const std::vector<Mask>& masks,
                                  const FeatureExtractor& extractor) {
  const InpaintModel copy = [](const Tensor& c, const Tensor&) { return c; };
  return evaluate(images, masks, copy, extractor, {8, "copy-input"});
}

// ---------------------------------------------------------------------------------------------
// Ablation

std::string AblationCell::label() const {
  std::string s = use_fw_plus ? "F&W+" : "W+";
  if (use_sml) s += " SML";
  if (use_premod) s += " PM";
  return s;
}

std::vector<AblationCell> default_ablation_cells() {
  return {{true, false, false}, {true, true, false}, {true, true, true}, {false, true, true}};
}

std::vector<AblationCell> full_ablation_grid() {
  std::vector<AblationCell> cells;
  for (bool fw : {true, false}) {
    for (bool sml : {true, false}) {
      for (bool pm : {true, false}) cells.push_back({fw, sml, pm});
    }
  }
  return cells;
}

AblationCell parse_ablation_cell(const std::string& spec) {
  AblationCell c{false, false, false};
  bool space_chosen = false;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, '+')) {
    if (tok == "fw" && !space_chosen) {
      c.use_fw_plus = true;
      space_chosen = true;
    } else if (tok == "w" && !space_chosen) {
      c.use_fw_plus = false;
      space_chosen = true;
    } else if (tok == "sml") {
      c.use_sml = true;
    } else if (tok == "pm") {
      c.use_premod = true;
    } else {
      throw InvalidInput("bad ablation cell '" + spec + "' (expected e.g. fw+sml+pm or w+sml+pm)");
    }
  }
  if (!space_chosen) throw InvalidInput("ablation cell '" + spec + "' must start with fw or w");
  return c;
}

std::vector<AblationRow> run_ablation(const Dataset& data, const Generator& generator, const RunConfig& config,
                                      const std::vector<AblationCell>& cells, const AblationOptions& options) {
  if (data.eval.empty()) throw InvalidInput("ablation needs evaluation images");
  const auto masks = evaluation_masks(config, static_cast<int>(data.eval.size()));
  const auto extractor = ConvFeatureExtractor::seeded();
  std::vector<AblationRow> rows;
  for (const auto& cell : cells) {
    AblationRow row{cell, std::nullopt, {}};
    RunConfig cc = config;
    cc.use_fw_plus = cell.use_fw_plus;
    cc.use_sml = cell.use_sml;
    cc.use_premod = cell.use_premod;
    try {
      std::optional<InpaintingModel> model;
      if (auto it = options.checkpoints.find(cell.label()); it != options.checkpoints.end()) {
        model = InpaintingModel::load(it->second);
        if (model->use_fw_plus != cell.use_fw_plus || model->encoder.config().use_premod != cell.use_premod) {
          throw CheckpointMismatch("checkpoint " + it->second.string() + " was trained for a different cell");
        }
      } else if (options.train_missing) {
        TrainOptions to = options.train;
        if (!to.out_dir.empty()) {
          std::string slug = cell.label();
          for (auto& ch : slug) {
            if (ch == ' ') ch = '_';
            if (ch == '&') ch = 'n';
            if (ch == '+') ch = 'p';
          }
          to.out_dir /= slug;
        }
        if (to.log) to.log("ablation: training cell " + cell.label());
        model = train_encoder(data.train, generator, cc, to).model;
      } else {
        throw InvalidInput("no checkpoint for cell " + cell.label());
      }
      row.report = evaluate_model(*model, data.eval, masks, extractor, cc.fingerprint());
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows, Difficulty level) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-5s %-4s %-3s %-3s | %10s %10s %10s %10s   (%s masks)\n", "F&W+", "SML", "PM", "W+",
                "FID", "LPIPS", "SSIM", "PSNR", std::string(to_string(level)).c_str());
  os << buf;
  for (const auto& r : rows) {
    const char* fw = r.cell.use_fw_plus ? "x" : "";
    const char* wp = r.cell.use_fw_plus ? "" : "x";
    if (!r.report) {
      std::snprintf(buf, sizeof buf, "%-5s %-4s %-3s %-3s | absent: %s\n", fw, r.cell.use_sml ? "x" : "",
                    r.cell.use_premod ? "x" : "", wp, r.error.c_str());
      os << buf;
      continue;
    }
    const LevelReport& l = r.report->level(level);
    char fid[32] = "-";
    if (l.fid) std::snprintf(fid, sizeof fid, "%.4f", *l.fid);
    std::snprintf(buf, sizeof buf, "%-5s %-4s %-3s %-3s | %10s %10.4f %10.4f %10.3f\n", fw, r.cell.use_sml ? "x" : "",
                  r.cell.use_premod ? "x" : "", wp, fid, l.lpips, l.ssim, l.psnr);
    os << buf;
  }
  return os.str();
}

// ---------------------------------------------------------------------------------------------
// Logs

void write_loss_log(const std::filesystem::path& path, const std::vector<LossLogRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,L_total,L_valid,L_hole,L_perc,L_style,L_tv,L_msr,L_fid\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.total, r.valid,
                  r.hole, r.perc, r.style, r.tv, r.msr, r.fid);
    out << buf;
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<LossLogRow> read_loss_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "step,L_total,L_valid,L_hole,L_perc,L_style,L_tv,L_msr,L_fid") {
    throw InvalidInput(path.string() + " is not a loss log");
  }
  std::vector<LossLogRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LossLogRow r;
    if (std::sscanf(line.c_str(), "%ld,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &r.step, &r.total, &r.valid, &r.hole, &r.perc,
                    &r.style, &r.tv, &r.msr, &r.fid) != 9) {
      throw InvalidInput("malformed loss log line: " + line);
    }
    rows.push_back(r);
  }
  return rows;
}

void write_gan_log(const std::filesystem::path& path, const std::vector<GanLogRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "step,L_D,L_G,R1\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g\n", r.step, r.d_loss, r.g_loss, r.r1);
    out << buf;
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace invertfill
