#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lvrl/common.hpp"
#include "lvrl/engine.hpp"
#include "lvrl/mmseq.hpp"
#include "lvrl/policy.hpp"
#include "lvrl/rewards.hpp"

namespace lvrl::grpo {

struct GrpoConfig {
  int group_size = 8;
  double clip_eps = 0.2;
  double kl_beta = 0.04;
  double learning_rate = 1e-2;
  int max_len = 12;
  double temperature = 1.0;
  double std_floor = 1e-8;
  bool sampled_kl = false;  // k3 estimator at sampled tokens instead of exact KL
};

struct Advantages {
  Vec values;
};

// Group-normalized rewards with population std; degenerate groups
// (std <= std_floor) come back all-zero, which removes their policy term.
Advantages compute_advantages(const Vec& rewards, double std_floor);

struct RolloutGroup {
  std::string sample_id;
  std::vector<policy::Rollout> rollouts;
  Advantages advantages;
};

struct GroupStats {
  double objective = 0.0;
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
  std::size_t token_count = 0;
};

// Clipped surrogate with KL penalty: per-token ratios averaged per
// sequence, group-averaged, minus beta times the mean per-position KL.
double grpo_objective(const RolloutGroup& group, const policy::PolicyParams& theta,
                      const policy::PolicyParams& ref, const mmseq::MultimodalSequence& seq,
                      const GrpoConfig& cfg, GroupStats* stats = nullptr);

// Exact gradient of grpo_objective in theta, treating recorded old
// log-probs and advantages as constants. Tokens where the min selects the
// clipped constant branch contribute nothing through the ratio.
Vec grpo_gradient(const RolloutGroup& group, const policy::PolicyParams& theta,
                  const policy::PolicyParams& ref, const mmseq::MultimodalSequence& seq,
                  const GrpoConfig& cfg, GroupStats* stats = nullptr);

// Mean teacher-forced cross-entropy and its exact gradient.
std::pair<double, Vec> sft_loss_and_grad(const policy::PolicyParams& theta,
                                         const mmseq::MultimodalSequence& seq,
                                         const std::vector<TokenId>& target_tokens);

struct StepMetrics {
  int step = 0;
  std::string stage;
  double mean_reward = 0.0;
  double mean_format = 0.0;
  double mean_accuracy = 0.0;
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
  double wall_ms = 0.0;
  double sft_loss = 0.0;  // populated for stage == "sft"
};

struct GroupWithSeq {
  RolloutGroup group;
  mmseq::MultimodalSequence seq;
};

// Plain gradient ascent averaged over the batch. Throws on a non-finite
// gradient. When an engine worker group is supplied, the policy and
// reference prefill passes that feed the metrics run through the padded
// token-sharded parallel path (bit-identical to the serial one).
StepMetrics train_step(policy::PolicyParams& theta, const policy::PolicyParams& ref,
                       const std::vector<GroupWithSeq>& batch, const GrpoConfig& cfg,
                       mrsp::WorkerGroup* engine = nullptr);

// Fixed synthetic CoT target: think tags around a stub content token,
// then the gold letter in answer tags, then EOS.
std::vector<TokenId> sft_target(const mmseq::Sample& sample);

struct StageConfig {
  int sft_steps = 0;
  int rl_steps = 0;
  int batch_samples = 4;
  int checkpoint_interval = 50;
};

struct TrainSinks {
  std::function<void(const StepMetrics&)> on_metrics;
  // (global step, stage, params, rng state) at every checkpoint interval.
  std::function<void(int, const std::string&, const policy::PolicyParams&, const std::string&)>
      on_checkpoint;
};

struct TrainResult {
  policy::PolicyParams theta;
  std::vector<StepMetrics> history;
};

// Optional SFT warm-up, then RL with the reference snapshot frozen at RL
// start. Every rollout fetches the frame embeddings for its video; with a
// cache those fetches collapse to one encode per unique video, without
// one (cache == nullptr) each fetch re-encodes.
// resume_ref supplies the frozen reference snapshot when resuming a run
// that is already past the SFT stage.
TrainResult train_loop(const std::vector<mmseq::Sample>& dataset, const mmseq::Vocab& vocab,
                       mrsp::WorkerGroup& engine, mrsp::EmbeddingCache* cache,
                       const GrpoConfig& cfg, const rewards::RewardConfig& reward_cfg,
                       const StageConfig& stages, Rng& rng, const TrainSinks& sinks,
                       policy::PolicyParams initial, int start_step = 0,
                       const policy::PolicyParams* resume_ref = nullptr);

}  // namespace lvrl::grpo
