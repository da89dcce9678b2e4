#pragma once

#include <string>

#include "lvrl/grpo.hpp"
#include "lvrl/rewards.hpp"

namespace lvrl::config {

// A run is reproducible from this struct alone: all randomness flows from
// the three named seeds.
struct RunConfig {
  // model dims
  int vocab_size = 32;
  int embed_dim = 16;
  int hidden_dim = 32;
  int feature_dim = 32;
  int frames = 32;

  // grpo / optimization
  int group_size = 8;
  double clip_eps = 0.2;
  double kl_beta = 0.04;
  double learning_rate = 1e-2;
  int max_len = 12;
  double temperature = 1.0;
  double init_scale = 0.1;  // scale of the random parameter init
  double std_floor = 1e-8;
  bool sampled_kl = false;

  // rewards
  double w_acc = 1.0;
  double w_fmt = 0.5;

  // stages
  int sft_steps = 0;
  int rl_steps = 0;
  int batch_samples = 4;
  int checkpoint_interval = 50;

  // engine
  int sp_degree = 2;
  bool cache = true;

  // seeds
  std::uint64_t data_seed = 1;
  std::uint64_t encoder_seed = 2;
  std::uint64_t train_seed = 3;

  // paths
  std::string dataset;
  std::string out_dir = "run";
  std::string init_checkpoint;  // optional starting parameters

  bool operator==(const RunConfig&) const = default;

  grpo::GrpoConfig grpo_config() const;
  rewards::RewardConfig reward_config() const;
  policy::PolicyDims policy_dims() const;
};

// Flat "key = value" text with '#' comments.
std::string serialize(const RunConfig& cfg);
RunConfig parse(const std::string& text);
RunConfig load(const std::string& path);
void save(const std::string& path, const RunConfig& cfg);

std::string metrics_to_json(const grpo::StepMetrics& m);

}  // namespace lvrl::config
