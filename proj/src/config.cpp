#include "config.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "tokenizer.hpp"

namespace fs = std::filesystem;

namespace evqa {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const long long out = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects an integer, got '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  const int64_t out = parse_int(key, v);
  if (out < 0) throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + v + "'");
  return static_cast<uint64_t>(out);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
  }
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void RunConfig::apply_override(const std::string& key, const std::string& value) {
  using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;
  static const std::map<std::string, Setter> setters = {
      {"d_vis", [](RunConfig& c, const std::string& k, const std::string& v) { c.d_vis = parse_int(k, v); }},
      {"d_model", [](RunConfig& c, const std::string& k, const std::string& v) { c.d_model = parse_int(k, v); }},
      {"n_layers", [](RunConfig& c, const std::string& k, const std::string& v) { c.n_layers = parse_int(k, v); }},
      {"n_heads", [](RunConfig& c, const std::string& k, const std::string& v) { c.n_heads = parse_int(k, v); }},
      {"n_visual", [](RunConfig& c, const std::string& k, const std::string& v) { c.n_visual = parse_int(k, v); }},
      {"top_layers", [](RunConfig& c, const std::string& k, const std::string& v) { c.top_layers = parse_int(k, v); }},
      {"n_adapt", [](RunConfig& c, const std::string& k, const std::string& v) { c.n_adapt = parse_int(k, v); }},
      {"n_prefix", [](RunConfig& c, const std::string& k, const std::string& v) { c.n_prefix = parse_int(k, v); }},
      {"max_seq", [](RunConfig& c, const std::string& k, const std::string& v) { c.max_seq = parse_int(k, v); }},
      {"lm_ffn", [](RunConfig& c, const std::string& k, const std::string& v) { c.lm_ffn = parse_int(k, v); }},
      {"vis_ffn", [](RunConfig& c, const std::string& k, const std::string& v) { c.vis_ffn = parse_int(k, v); }},
      {"vis_heads", [](RunConfig& c, const std::string& k, const std::string& v) { c.vis_heads = parse_int(k, v); }},
      {"image_px", [](RunConfig& c, const std::string& k, const std::string& v) { c.image_px = parse_int(k, v); }},
      {"patch_px", [](RunConfig& c, const std::string& k, const std::string& v) { c.patch_px = parse_int(k, v); }},
      {"channels", [](RunConfig& c, const std::string& k, const std::string& v) { c.channels = parse_int(k, v); }},
      {"grid", [](RunConfig& c, const std::string& k, const std::string& v) { c.grid = parse_int(k, v); }},
      {"train_images", [](RunConfig& c, const std::string& k, const std::string& v) { c.train_images = parse_int(k, v); }},
      {"val_images", [](RunConfig& c, const std::string& k, const std::string& v) { c.val_images = parse_int(k, v); }},
      {"test_images", [](RunConfig& c, const std::string& k, const std::string& v) { c.test_images = parse_int(k, v); }},
      {"data_seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.data_seed = parse_u64(k, v); }},
      {"target_rate", [](RunConfig& c, const std::string& k, const std::string& v) { c.target_rate = parse_double(k, v); }},
      {"data_dir", [](RunConfig& c, const std::string&, const std::string& v) { c.data_dir = v; }},
      {"warmup_steps", [](RunConfig& c, const std::string& k, const std::string& v) { c.warmup_steps = parse_int(k, v); }},
      {"stage1_steps", [](RunConfig& c, const std::string& k, const std::string& v) { c.stage1_steps = parse_int(k, v); }},
      {"stage2_steps", [](RunConfig& c, const std::string& k, const std::string& v) { c.stage2_steps = parse_int(k, v); }},
      {"batch", [](RunConfig& c, const std::string& k, const std::string& v) { c.batch = parse_int(k, v); }},
      {"lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.lr = parse_double(k, v); }},
      {"beta1", [](RunConfig& c, const std::string& k, const std::string& v) { c.beta1 = parse_double(k, v); }},
      {"beta2", [](RunConfig& c, const std::string& k, const std::string& v) { c.beta2 = parse_double(k, v); }},
      {"adam_eps", [](RunConfig& c, const std::string& k, const std::string& v) { c.adam_eps = parse_double(k, v); }},
      {"seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); }},
      {"ckpt_every", [](RunConfig& c, const std::string& k, const std::string& v) { c.ckpt_every = parse_int(k, v); }},
      {"k", [](RunConfig& c, const std::string& k, const std::string& v) { c.k = parse_int(k, v); }},
      {"tto_iters", [](RunConfig& c, const std::string& k, const std::string& v) { c.tto_iters = parse_int(k, v); }},
      {"tto_step", [](RunConfig& c, const std::string& k, const std::string& v) { c.tto_step = parse_double(k, v); }},
  };
  auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(*this, key, value);
}

RunConfig RunConfig::load(const std::string& path_or_empty,
                          const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!path_or_empty.empty()) {
    std::ifstream in(path_or_empty);
    if (!in) throw ConfigError("cannot open config file '" + path_or_empty + "'");
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const size_t eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(line_no) + " is not key=value: '" + t +
                          "'");
      cfg.apply_override(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
  }
  for (const auto& ov : overrides) {
    const size_t eq = ov.find('=');
    if (eq == std::string::npos) throw ConfigError("override is not key=value: '" + ov + "'");
    cfg.apply_override(trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

void RunConfig::validate() const {
  model_config().validate();
  synthetic_spec().validate();
  if (warmup_steps < 0 || stage1_steps < 1 || stage2_steps < 1)
    throw ConfigError("step counts must be positive (warmup may be 0)");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (lr <= 0.0) throw ConfigError("lr must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw ConfigError("betas must lie in [0,1)");
  if (adam_eps <= 0.0) throw ConfigError("adam_eps must be positive");
  if (ckpt_every < 1) throw ConfigError("ckpt_every must be >= 1");
  if (k < 1) throw ConfigError("k must be >= 1");
  if (tto_iters < 0) throw ConfigError("tto_iters must be >= 0");
  if (tto_step <= 0.0) throw ConfigError("tto_step must be positive");
}

std::string RunConfig::resolved_text() const {
  std::ostringstream os;
  os << "adam_eps=" << fmt_double(adam_eps) << "\n";
  os << "batch=" << batch << "\n";
  os << "beta1=" << fmt_double(beta1) << "\n";
  os << "beta2=" << fmt_double(beta2) << "\n";
  os << "channels=" << channels << "\n";
  os << "ckpt_every=" << ckpt_every << "\n";
  os << "d_model=" << d_model << "\n";
  os << "d_vis=" << d_vis << "\n";
  os << "data_dir=" << data_dir << "\n";
  os << "data_seed=" << data_seed << "\n";
  os << "grid=" << grid << "\n";
  os << "image_px=" << image_px << "\n";
  os << "k=" << k << "\n";
  os << "lm_ffn=" << lm_ffn << "\n";
  os << "lr=" << fmt_double(lr) << "\n";
  os << "max_seq=" << max_seq << "\n";
  os << "n_adapt=" << n_adapt << "\n";
  os << "n_heads=" << n_heads << "\n";
  os << "n_layers=" << n_layers << "\n";
  os << "n_prefix=" << n_prefix << "\n";
  os << "n_visual=" << n_visual << "\n";
  os << "patch_px=" << patch_px << "\n";
  os << "seed=" << seed << "\n";
  os << "stage1_steps=" << stage1_steps << "\n";
  os << "stage2_steps=" << stage2_steps << "\n";
  os << "target_rate=" << fmt_double(target_rate) << "\n";
  os << "test_images=" << test_images << "\n";
  os << "top_layers=" << top_layers << "\n";
  os << "tto_iters=" << tto_iters << "\n";
  os << "tto_step=" << fmt_double(tto_step) << "\n";
  os << "train_images=" << train_images << "\n";
  os << "val_images=" << val_images << "\n";
  os << "vis_ffn=" << vis_ffn << "\n";
  os << "vis_heads=" << vis_heads << "\n";
  os << "warmup_steps=" << warmup_steps << "\n";
  return os.str();
}

void RunConfig::echo_to(const std::string& dir) const {
  fs::create_directories(dir);
  std::ofstream out((fs::path(dir) / "config.resolved").string(), std::ios::binary);
  if (!out) throw ConfigError("cannot write resolved config to '" + dir + "'");
  out << resolved_text();
}

std::string RunConfig::config_hash() const {
  const std::string text = resolved_text();
  return to_hex(fnv1a64(text.data(), text.size()));
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.d_vis = d_vis;
  m.d_model = d_model;
  m.n_layers = n_layers;
  m.n_heads = n_heads;
  m.n_visual = n_visual;
  m.top_layers = top_layers;
  m.n_adapt = n_adapt;
  m.n_prefix = n_prefix;
  m.max_seq = max_seq;
  m.lm_ffn = lm_ffn;
  m.vis_ffn = vis_ffn;
  m.vis_heads = vis_heads;
  m.image_px = image_px;
  m.patch_px = patch_px;
  m.channels = channels;
  m.vocab = Tokenizer::instance().size();
  return m;
}

SyntheticSpec RunConfig::synthetic_spec() const {
  SyntheticSpec s;
  s.grid = static_cast<int>(grid);
  s.train_images = static_cast<int>(train_images);
  s.val_images = static_cast<int>(val_images);
  s.test_images = static_cast<int>(test_images);
  s.seed = data_seed;
  s.target_rate = target_rate;
  s.image_px = static_cast<int>(image_px);
  s.patch_px = static_cast<int>(patch_px);
  s.channels = static_cast<int>(channels);
  return s;
}

}  // namespace evqa
