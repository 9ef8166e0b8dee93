#include "wavediff/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace wavediff {

DiffusionSchedule RunConfig::schedule() const {
  ScheduleParams p;
  p.beta_min = beta_min;
  p.alpha_bar_T = alpha_bar_T;
  p.beta_max = beta_max;
  return make_schedule(diffusion_steps, schedule_kind_from_string(schedule_kind), p);
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw std::invalid_argument("config: bad integer for " + key + ": '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw std::invalid_argument("config: bad unsigned integer for " + key + ": '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw std::invalid_argument("config: bad number for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (trim(v).empty() || v == "none") return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(key, trim(item)));
  return out;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  cfg.raw_text = text;

  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = line;
    size_t hash = s.find('#');
    if (hash != std::string::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not key=value: '" + line + "'");
    }
    std::string key = trim(s.substr(0, eq));
    std::string val = trim(s.substr(eq + 1));

    if (key == "model.levels") cfg.model.levels = parse_int(key, val);
    else if (key == "model.base_channels") cfg.model.base_channels = parse_int(key, val);
    else if (key == "model.channel_mult") cfg.model.channel_mult = parse_int_list(key, val);
    else if (key == "model.resblocks_per_scale") cfg.model.resblocks_per_scale = parse_int(key, val);
    else if (key == "model.attention_resolutions")
      cfg.model.attention_resolutions = parse_int_list(key, val);
    else if (key == "model.latent_dim") cfg.model.latent_dim = parse_int(key, val);
    else if (key == "model.latent_mapping_layers")
      cfg.model.latent_mapping_layers = parse_int(key, val);
    else if (key == "model.latent_embed_dim") cfg.model.latent_embed_dim = parse_int(key, val);
    else if (key == "diffusion.steps") cfg.diffusion_steps = parse_int(key, val);
    else if (key == "diffusion.schedule") cfg.schedule_kind = val;
    else if (key == "diffusion.beta_min") cfg.beta_min = parse_double(key, val);
    else if (key == "diffusion.alpha_bar_T") cfg.alpha_bar_T = parse_double(key, val);
    else if (key == "diffusion.beta_max") cfg.beta_max = parse_double(key, val);
    else if (key == "train.lr_g") cfg.train.lr_g = parse_double(key, val);
    else if (key == "train.lr_d") cfg.train.lr_d = parse_double(key, val);
    else if (key == "train.batch") cfg.train.batch = parse_int(key, val);
    else if (key == "train.epochs") cfg.train.epochs = parse_int(key, val);
    else if (key == "train.lambda_rec") cfg.train.lambda_rec = parse_double(key, val);
    else if (key == "train.ema_decay") cfg.train.ema_decay = parse_double(key, val);
    else if (key == "train.r1_gamma") cfg.train.r1_gamma = parse_double(key, val);
    else if (key == "train.r1_every") cfg.train.r1_every = parse_int(key, val);
    else if (key == "train.adam_beta1") cfg.train.adam_beta1 = parse_double(key, val);
    else if (key == "train.adam_beta2") cfg.train.adam_beta2 = parse_double(key, val);
    else if (key == "train.seed") cfg.train.seed = parse_u64(key, val);
    else if (key == "train.reuse_draws") cfg.train.reuse_draws = parse_bool(key, val);
    else if (key == "train.checkpoint_every") cfg.train.checkpoint_every = parse_int(key, val);
    else if (key == "train.eval_every") cfg.train.eval_every = parse_int(key, val);
    else if (key == "train.eval_samples") cfg.train.eval_samples = parse_int(key, val);
    else if (key == "data.source") cfg.data_source = val;
    else if (key == "data.resolution") cfg.data_resolution = parse_int(key, val);
    else if (key == "data.channels") cfg.data_channels = parse_int(key, val);
    else if (key == "data.count") cfg.data_count = parse_int(key, val);
    else if (key == "data.seed") cfg.data_seed = parse_u64(key, val);
    else throw std::invalid_argument("config: unknown key '" + key + "'");
  }

  cfg.model.image_channels = cfg.data_channels;
  cfg.model.image_resolution = cfg.data_resolution;
  cfg.model.validate();
  if (cfg.diffusion_steps < 1) throw std::invalid_argument("config: diffusion.steps must be >= 1");
  schedule_kind_from_string(cfg.schedule_kind);  // validates the name
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string default_config_text() {
  return
      "# wavediff run configuration (defaults)\n"
      "model.levels = 3\n"
      "model.base_channels = 32\n"
      "model.channel_mult = 1,2,2\n"
      "model.resblocks_per_scale = 2\n"
      "model.attention_resolutions = 8\n"
      "model.latent_dim = 100\n"
      "model.latent_mapping_layers = 4\n"
      "model.latent_embed_dim = 256\n"
      "diffusion.steps = 4\n"
      "diffusion.schedule = geometric-alpha-bar\n"
      "diffusion.beta_min = 0.1\n"
      "diffusion.alpha_bar_T = 0.001\n"
      "diffusion.beta_max = 0.7\n"
      "train.lr_g = 1.6e-4\n"
      "train.lr_d = 1.25e-4\n"
      "train.batch = 16\n"
      "train.epochs = 200\n"
      "train.lambda_rec = 1\n"
      "train.ema_decay = 0.999\n"
      "train.r1_gamma = 0.05\n"
      "train.r1_every = 4\n"
      "train.adam_beta1 = 0.5\n"
      "train.adam_beta2 = 0.9\n"
      "train.seed = 0\n"
      "train.reuse_draws = true\n"
      "train.checkpoint_every = 0\n"
      "train.eval_every = 0\n"
      "train.eval_samples = 256\n"
      "data.source = two-mode-gaussian-images\n"
      "data.resolution = 32\n"
      "data.channels = 3\n"
      "data.count = 1024\n"
      "data.seed = 0\n";
}

}  // namespace wavediff
