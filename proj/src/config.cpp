#include "lvrl/config.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace lvrl::config {

grpo::GrpoConfig RunConfig::grpo_config() const {
  grpo::GrpoConfig g;
  g.group_size = group_size;
  g.clip_eps = clip_eps;
  g.kl_beta = kl_beta;
  g.learning_rate = learning_rate;
  g.max_len = max_len;
  g.temperature = temperature;
  g.std_floor = std_floor;
  g.sampled_kl = sampled_kl;
  return g;
}

rewards::RewardConfig RunConfig::reward_config() const { return {w_acc, w_fmt}; }

policy::PolicyDims RunConfig::policy_dims() const {
  return {vocab_size, embed_dim, hidden_dim, feature_dim};
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string serialize(const RunConfig& c) {
  std::ostringstream os;
  os << "# model\n";
  os << "vocab_size = " << c.vocab_size << "\n";
  os << "embed_dim = " << c.embed_dim << "\n";
  os << "hidden_dim = " << c.hidden_dim << "\n";
  os << "feature_dim = " << c.feature_dim << "\n";
  os << "frames = " << c.frames << "\n";
  os << "# grpo\n";
  os << "group_size = " << c.group_size << "\n";
  os << "clip_eps = " << fmt_double(c.clip_eps) << "\n";
  os << "kl_beta = " << fmt_double(c.kl_beta) << "\n";
  os << "learning_rate = " << fmt_double(c.learning_rate) << "\n";
  os << "max_len = " << c.max_len << "\n";
  os << "temperature = " << fmt_double(c.temperature) << "\n";
  os << "init_scale = " << fmt_double(c.init_scale) << "\n";
  os << "std_floor = " << fmt_double(c.std_floor) << "\n";
  os << "sampled_kl = " << (c.sampled_kl ? "on" : "off") << "\n";
  os << "# rewards\n";
  os << "w_acc = " << fmt_double(c.w_acc) << "\n";
  os << "w_fmt = " << fmt_double(c.w_fmt) << "\n";
  os << "# stages\n";
  os << "sft_steps = " << c.sft_steps << "\n";
  os << "rl_steps = " << c.rl_steps << "\n";
  os << "batch_samples = " << c.batch_samples << "\n";
  os << "checkpoint_interval = " << c.checkpoint_interval << "\n";
  os << "# engine\n";
  os << "sp_degree = " << c.sp_degree << "\n";
  os << "cache = " << (c.cache ? "on" : "off") << "\n";
  os << "# seeds\n";
  os << "data_seed = " << c.data_seed << "\n";
  os << "encoder_seed = " << c.encoder_seed << "\n";
  os << "train_seed = " << c.train_seed << "\n";
  os << "# paths\n";
  os << "dataset = " << c.dataset << "\n";
  os << "out_dir = " << c.out_dir << "\n";
  os << "init_checkpoint = " << c.init_checkpoint << "\n";
  return os.str();
}

RunConfig parse(const std::string& text) {
  RunConfig c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": missing '='");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    auto as_bool = [&] {
      if (value == "on" || value == "true" || value == "1") return true;
      if (value == "off" || value == "false" || value == "0") return false;
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": bad flag " + value);
    };
    try {
      if (key == "vocab_size") c.vocab_size = std::stoi(value);
      else if (key == "embed_dim") c.embed_dim = std::stoi(value);
      else if (key == "hidden_dim") c.hidden_dim = std::stoi(value);
      else if (key == "feature_dim") c.feature_dim = std::stoi(value);
      else if (key == "frames") c.frames = std::stoi(value);
      else if (key == "group_size") c.group_size = std::stoi(value);
      else if (key == "clip_eps") c.clip_eps = std::stod(value);
      else if (key == "kl_beta") c.kl_beta = std::stod(value);
      else if (key == "learning_rate") c.learning_rate = std::stod(value);
      else if (key == "max_len") c.max_len = std::stoi(value);
      else if (key == "temperature") c.temperature = std::stod(value);
      else if (key == "init_scale") c.init_scale = std::stod(value);
      else if (key == "std_floor") c.std_floor = std::stod(value);
      else if (key == "sampled_kl") c.sampled_kl = as_bool();
      else if (key == "w_acc") c.w_acc = std::stod(value);
      else if (key == "w_fmt") c.w_fmt = std::stod(value);
      else if (key == "sft_steps") c.sft_steps = std::stoi(value);
      else if (key == "rl_steps") c.rl_steps = std::stoi(value);
      else if (key == "batch_samples") c.batch_samples = std::stoi(value);
      else if (key == "checkpoint_interval") c.checkpoint_interval = std::stoi(value);
      else if (key == "sp_degree") c.sp_degree = std::stoi(value);
      else if (key == "cache") c.cache = as_bool();
      else if (key == "data_seed") c.data_seed = std::stoull(value);
      else if (key == "encoder_seed") c.encoder_seed = std::stoull(value);
      else if (key == "train_seed") c.train_seed = std::stoull(value);
      else if (key == "dataset") c.dataset = value;
      else if (key == "out_dir") c.out_dir = value;
      else if (key == "init_checkpoint") c.init_checkpoint = value;
      else throw std::invalid_argument("unknown key: " + key);
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": bad value for " +
                                  key);
    }
  }
  return c;
}

RunConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void save(const std::string& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << serialize(cfg);
}

std::string metrics_to_json(const grpo::StepMetrics& m) {
  nlohmann::ordered_json j;
  j["step"] = m.step;
  j["stage"] = m.stage;
  j["mean_reward"] = m.mean_reward;
  j["mean_format"] = m.mean_format;
  j["mean_accuracy"] = m.mean_accuracy;
  j["mean_kl"] = m.mean_kl;
  j["clip_fraction"] = m.clip_fraction;
  if (m.stage == "sft") j["loss"] = m.sft_loss;
  return j.dump();
}

}  // namespace lvrl::config
