#include "invertfill/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <vector>

#include "invertfill/error.hpp"
#include "invertfill/nn.hpp"

namespace invertfill {

std::string_view to_string(Profile p) noexcept { return p == Profile::Tiny ? "tiny" : "full"; }

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

Profile parse_profile(const std::string& v) {
  if (v == "tiny") return Profile::Tiny;
  if (v == "full") return Profile::Full;
  throw ConfigError("profile must be tiny or full, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("invalid value '" + v + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("invalid boolean '" + v + "' for " + key);
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct Field {
  const char* key;
  bool fingerprinted;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
Field field(const char* key, bool fp, T RunConfig::*member) {
  Field f{key, fp, {}, {}};
  f.get = [member](const RunConfig& c) {
    if constexpr (std::is_same_v<T, bool>) return std::string(c.*member ? "true" : "false");
    else if constexpr (std::is_same_v<T, double>) return format_double(c.*member);
    else if constexpr (std::is_same_v<T, std::string>) return c.*member;
    else return std::to_string(c.*member);
  };
  f.set = [member, key](RunConfig& c, const std::string& v) {
    if constexpr (std::is_same_v<T, bool>) c.*member = parse_bool(key, v);
    else if constexpr (std::is_same_v<T, std::string>) c.*member = v;
    else c.*member = parse_number<T>(key, v);
  };
  return f;
}

Field loss_field(const char* key, double LossWeights::*member) {
  return {key, true, [member](const RunConfig& c) { return format_double(c.loss.*member); },
          [member, key](RunConfig& c, const std::string& v) { c.loss.*member = parse_number<double>(key, v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> t;
    t.push_back({"profile", true, [](const RunConfig& c) { return std::string(to_string(c.profile)); },
                 [](RunConfig& c, const std::string& v) { c.profile = parse_profile(v); }});
    t.push_back(field("resolution", true, &RunConfig::resolution));
    t.push_back(field("mapping_layers", true, &RunConfig::mapping_layers));
    t.push_back(field("mapping_lr_mul", true, &RunConfig::mapping_lr_mul));
    t.push_back(field("gen_channel_base", true, &RunConfig::gen_channel_base));
    t.push_back(field("gen_channel_max", true, &RunConfig::gen_channel_max));
    t.push_back(field("branch_mask_channel", true, &RunConfig::branch_mask_channel));
    t.push_back(field("gen_noise", true, &RunConfig::gen_noise));
    t.push_back(field("disc_channel_base", true, &RunConfig::disc_channel_base));
    t.push_back(field("disc_channel_max", true, &RunConfig::disc_channel_max));
    t.push_back({"enc_widths", true,
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.enc_widths.size(); ++i) {
                     s += (i ? "," : "") + std::to_string(c.enc_widths[i]);
                   }
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   std::array<int, 4> w{};
                   std::stringstream ss(v);
                   std::string part;
                   std::size_t i = 0;
                   while (std::getline(ss, part, ',')) {
                     if (i >= w.size()) throw ConfigError("enc_widths takes exactly 4 values");
                     w[i++] = parse_number<int>("enc_widths", trim(part));
                   }
                   if (i != w.size()) throw ConfigError("enc_widths takes exactly 4 values");
                   c.enc_widths = w;
                 }});
    t.push_back(field("enc_fpn_channels", true, &RunConfig::enc_fpn_channels));
    t.push_back(field("enc_head_channels", true, &RunConfig::enc_head_channels));
    t.push_back(field("premod_hidden", true, &RunConfig::premod_hidden));
    t.push_back(field("in_epsilon", true, &RunConfig::in_epsilon));
    t.push_back(field("use_fw_plus", true, &RunConfig::use_fw_plus));
    t.push_back(field("use_premod", true, &RunConfig::use_premod));
    t.push_back(field("use_sml", true, &RunConfig::use_sml));
    t.push_back(field("sml_tau", true, &RunConfig::sml_tau));
    t.push_back(field("sml_tolerance", true, &RunConfig::sml_tolerance));
    t.push_back(field("sml_samples", true, &RunConfig::sml_samples));
    t.push_back(loss_field("w_valid", &LossWeights::valid));
    t.push_back(loss_field("w_hole", &LossWeights::hole));
    t.push_back(loss_field("w_perc", &LossWeights::perceptual));
    t.push_back(loss_field("w_style", &LossWeights::style));
    t.push_back(loss_field("w_tv", &LossWeights::tv));
    t.push_back(loss_field("lambda_msr", &LossWeights::msr));
    t.push_back(loss_field("lambda_fid", &LossWeights::fid));
    t.push_back(field("gen_lr", true, &RunConfig::gen_lr));
    t.push_back(field("disc_lr", true, &RunConfig::disc_lr));
    t.push_back(field("enc_lr", true, &RunConfig::enc_lr));
    t.push_back(field("r1_gamma", true, &RunConfig::r1_gamma));
    t.push_back(field("r1_interval", true, &RunConfig::r1_interval));
    t.push_back(field("gen_batch", true, &RunConfig::gen_batch));
    t.push_back(field("batch_size", true, &RunConfig::batch_size));
    t.push_back(field("gen_steps", false, &RunConfig::gen_steps));
    t.push_back(field("enc_steps", false, &RunConfig::enc_steps));
    t.push_back(field("train_mask_min", true, &RunConfig::train_mask_min));
    t.push_back(field("train_mask_max", true, &RunConfig::train_mask_max));
    t.push_back(field("log_every", false, &RunConfig::log_every));
    t.push_back(field("checkpoint_every", false, &RunConfig::checkpoint_every));
    t.push_back(field("dataset_dir", true, &RunConfig::dataset_dir));
    t.push_back(field("toy_count", true, &RunConfig::toy_count));
    t.push_back(field("eval_count", false, &RunConfig::eval_count));
    t.push_back(field("eval_level", false, &RunConfig::eval_level));
    t.push_back(field("mask_kind", false, &RunConfig::mask_kind));
    t.push_back(field("seed", true, &RunConfig::seed));
    t.push_back(field("data_seed", true, &RunConfig::data_seed));
    t.push_back(field("eval_seed", false, &RunConfig::eval_seed));
    t.push_back(field("out_dir", false, &RunConfig::out_dir));
    t.push_back(field("gen_checkpoint", false, &RunConfig::gen_checkpoint));
    t.push_back(field("enc_checkpoint", false, &RunConfig::enc_checkpoint));
    return t;
  }();
  return table;
}

const Field* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (key == f.key) return &f;
  }
  return nullptr;
}

}  // namespace

RunConfig RunConfig::defaults(Profile profile) {
  RunConfig c;
  c.profile = profile;
  if (profile == Profile::Full) {
    c.resolution = 256;
    c.mapping_layers = 8;
    c.gen_channel_base = 4.0;
    c.gen_channel_max = 512;
    c.disc_channel_base = 4.0;
    c.disc_channel_max = 512;
    c.enc_widths = {64, 128, 256, 512};
    c.enc_fpn_channels = 256;
    c.enc_head_channels = 512;
    c.sml_samples = 10000;
    c.toy_count = 10000;
    c.gen_steps = 200000;
    c.enc_steps = 100000;
    c.eval_count = 1000;
  }
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  f->set(*this, value);
}

RunConfig RunConfig::parse(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  Profile profile = Profile::Tiny;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
    if (!find_field(key)) throw ConfigError("line " + std::to_string(lineno) + ": unknown config key '" + key + "'");
    for (const auto& [k, v] : entries) {
      if (k == key) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    if (key == "profile") profile = parse_profile(value);
    entries.emplace_back(std::move(key), std::move(value));
  }
  RunConfig c = defaults(profile);
  for (const auto& [k, v] : entries) c.set(k, v);
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (resolution < 8 || !is_power_of_two(resolution)) fail("resolution must be a power of two >= 8");
  for (double r : {gen_lr, disc_lr, enc_lr}) {
    if (!(r >= 0.0) || !std::isfinite(r)) fail("learning rates must be finite and nonnegative");
  }
  if (mapping_layers < 1) fail("mapping_layers must be >= 1");
  if (!(mapping_lr_mul > 0.0)) fail("mapping_lr_mul must be positive");
  if (!(gen_channel_base > 0.0) || gen_channel_max < 1) fail("generator channel schedule must be positive");
  if (!(disc_channel_base > 0.0) || disc_channel_max < 1) fail("discriminator channel schedule must be positive");
  for (int w : enc_widths) {
    if (w < 1) fail("enc_widths must be positive");
  }
  if (enc_fpn_channels < 1 || enc_head_channels < 1 || premod_hidden < 1) fail("encoder widths must be positive");
  if (!(in_epsilon > 0.0)) fail("in_epsilon must be positive");
  if (!(sml_tau >= 0.0 && sml_tau < 1.0)) fail("sml_tau must lie in [0, 1)");
  if (!(sml_tolerance > 0.0)) fail("sml_tolerance must be positive");
  if (sml_samples < 1) fail("sml_samples must be >= 1");
  try {
    loss.validate();
  } catch (const InvalidInput& e) {
    fail(e.what());
  }
  if (r1_gamma < 0.0) fail("r1_gamma must be nonnegative");
  if (r1_interval < 1) fail("r1_interval must be >= 1");
  if (gen_batch < 1 || batch_size < 1) fail("batch sizes must be >= 1");
  if (gen_steps < 0 || enc_steps < 0) fail("step counts must be nonnegative");
  if (!(train_mask_min > 0.0 && train_mask_min <= train_mask_max && train_mask_max < 1.0)) {
    fail("training mask coverage range must satisfy 0 < min <= max < 1");
  }
  if (log_every < 1 || checkpoint_every < 1) fail("log_every and checkpoint_every must be >= 1");
  if (toy_count < 1 || eval_count < 1) fail("toy_count and eval_count must be >= 1");
  try {
    (void)eval_difficulty();
    (void)eval_mask_kind();
  } catch (const InvalidInput& e) {
    fail(e.what());
  }
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

GeneratorConfig RunConfig::generator_config() const {
  GeneratorConfig g;
  g.resolution = resolution;
  g.mapping_layers = mapping_layers;
  g.mapping_lr_mul = mapping_lr_mul;
  g.channel_base = gen_channel_base;
  g.channel_max = gen_channel_max;
  g.rgb_branch = true;
  g.branch_mask_channel = branch_mask_channel;
  g.noise = gen_noise;
  g.seed = mix_seed(seed, 1);
  return g;
}

EncoderConfig RunConfig::encoder_config() const {
  EncoderConfig e;
  e.resolution = resolution;
  e.widths = enc_widths;
  e.fpn_channels = enc_fpn_channels;
  e.head_channels = enc_head_channels;
  e.premod_hidden = premod_hidden;
  e.use_premod = use_premod;
  e.epsilon = in_epsilon;
  e.seed = mix_seed(seed, 2);
  return e;
}

Difficulty RunConfig::eval_difficulty() const { return difficulty_from_string(eval_level); }
MaskKind RunConfig::eval_mask_kind() const { return mask_kind_from_string(mask_kind); }

std::string RunConfig::fingerprint() const {
  std::string canonical;
  for (const auto& f : fields()) {
    if (f.fingerprinted) canonical += std::string(f.key) + "=" + f.get(*this) + ";";
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(canonical);
  return os.str();
}

}  // namespace invertfill
