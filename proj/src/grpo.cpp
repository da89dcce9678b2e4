#include "lvrl/grpo.hpp"

#include <chrono>
#include <cmath>

namespace lvrl::grpo {

Advantages compute_advantages(const Vec& rewards, double std_floor) {
  if (rewards.size() < 2) throw std::invalid_argument("compute_advantages: need G >= 2 rewards");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  double sd = std::sqrt(var / n);  // population std
  Advantages adv;
  adv.values.assign(rewards.size(), 0.0);
  if (sd > std_floor)
    for (std::size_t i = 0; i < rewards.size(); ++i) adv.values[i] = (rewards[i] - mean) / sd;
  return adv;
}

namespace {

// Per-rollout, per-position logits for one parameter set.
std::vector<std::vector<Vec>> serial_group_logits(const RolloutGroup& group,
                                                  const policy::PolicyParams& params,
                                                  const mmseq::MultimodalSequence& seq) {
  Vec ctx = policy::context_vector(seq, params);
  std::vector<std::vector<Vec>> out(group.rollouts.size());
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const auto& tokens = group.rollouts[i].tokens;
    out[i].reserve(tokens.size());
    TokenId prev = mmseq::Vocab::kEos;
    for (TokenId tok : tokens) {
      out[i].push_back(policy::step_logits(params, ctx, prev));
      prev = tok;
    }
  }
  return out;
}

std::vector<std::vector<Vec>> engine_group_logits(const RolloutGroup& group,
                                                  const policy::PolicyParams& params,
                                                  const mmseq::MultimodalSequence& seq,
                                                  mrsp::WorkerGroup& engine) {
  std::vector<std::vector<TokenId>> rows;
  rows.reserve(group.rollouts.size());
  for (const auto& r : group.rollouts) rows.push_back(r.tokens);
  mrsp::PaddedBatch batch = mrsp::pad_batch(rows);
  mrsp::ShardPlan plan = mrsp::plan_shards(batch.max_len, engine.degree());
  std::vector<Vec> contexts(rows.size(), policy::context_vector(seq, params));
  return engine.parallel_prefill(params, contexts, batch, plan);
}

void check_group(const RolloutGroup& group) {
  if (group.advantages.values.size() != group.rollouts.size())
    throw std::logic_error("grpo: advantages not computed for this group");
  if (group.rollouts.empty()) throw std::invalid_argument("grpo: empty rollout group");
  for (const auto& r : group.rollouts) {
    if (r.tokens.empty()) throw std::invalid_argument("grpo: empty rollout");
    if (r.old_logprobs.size() != r.tokens.size())
      throw std::logic_error("grpo: old_logprobs missing");
  }
}

GroupStats evaluate_from_logits(const RolloutGroup& group,
                                const std::vector<std::vector<Vec>>& logits_theta,
                                const std::vector<std::vector<Vec>>& logits_ref,
                                const GrpoConfig& cfg) {
  const double G = static_cast<double>(group.rollouts.size());
  double policy_term = 0.0;
  double kl_sum = 0.0;
  std::size_t n_tokens = 0;
  std::size_t n_clipped = 0;
  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const auto& rollout = group.rollouts[i];
    const double adv = group.advantages.values[i];
    double seq_term = 0.0;
    for (std::size_t t = 0; t < rollout.tokens.size(); ++t) {
      Vec lp = log_softmax(logits_theta[i][t]);
      Vec lp_ref = log_softmax(logits_ref[i][t]);
      TokenId y = rollout.tokens[t];
      double ratio = std::exp(lp[y] - rollout.old_logprobs[t]);
      double clipped = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
      seq_term += std::min(ratio * adv, clipped * adv);
      if ((adv > 0 && ratio > 1.0 + cfg.clip_eps) || (adv < 0 && ratio < 1.0 - cfg.clip_eps))
        ++n_clipped;
      if (cfg.sampled_kl) {
        double lr = lp_ref[y] - lp[y];
        kl_sum += std::exp(lr) - 1.0 - lr;  // k3 estimator at the sampled token
      } else {
        double kl = 0.0;
        for (std::size_t v = 0; v < lp.size(); ++v) kl += std::exp(lp[v]) * (lp[v] - lp_ref[v]);
        kl_sum += kl;
      }
      ++n_tokens;
    }
    policy_term += seq_term / static_cast<double>(rollout.tokens.size()) / G;
  }
  GroupStats stats;
  stats.token_count = n_tokens;
  stats.mean_kl = kl_sum / static_cast<double>(n_tokens);
  stats.clip_fraction = static_cast<double>(n_clipped) / static_cast<double>(n_tokens);
  stats.objective = policy_term - cfg.kl_beta * stats.mean_kl;
  return stats;
}

}  // namespace

double grpo_objective(const RolloutGroup& group, const policy::PolicyParams& theta,
                      const policy::PolicyParams& ref, const mmseq::MultimodalSequence& seq,
                      const GrpoConfig& cfg, GroupStats* stats) {
  check_group(group);
  GroupStats s = evaluate_from_logits(group, serial_group_logits(group, theta, seq),
                                      serial_group_logits(group, ref, seq), cfg);
  if (stats) *stats = s;
  return s.objective;
}

Vec grpo_gradient(const RolloutGroup& group, const policy::PolicyParams& theta,
                  const policy::PolicyParams& ref, const mmseq::MultimodalSequence& seq,
                  const GrpoConfig& cfg, GroupStats* stats) {
  check_group(group);
  const double G = static_cast<double>(group.rollouts.size());
  std::size_t n_tokens = 0;
  for (const auto& r : group.rollouts) n_tokens += r.tokens.size();

  Vec ctx_ref = policy::context_vector(seq, ref);
  policy::GradAccumulator acc(theta, seq);
  Vec ctx_theta = policy::context_vector(seq, theta);

  double kl_sum = 0.0;
  std::size_t n_clipped = 0;
  double policy_term = 0.0;
  const int V = theta.dims.V;
  const double kl_w = -cfg.kl_beta / static_cast<double>(n_tokens);

  for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
    const auto& rollout = group.rollouts[i];
    const double adv = group.advantages.values[i];
    const double tok_w = 1.0 / (G * static_cast<double>(rollout.tokens.size()));
    double seq_term = 0.0;
    TokenId prev = mmseq::Vocab::kEos;
    for (std::size_t t = 0; t < rollout.tokens.size(); ++t) {
      TokenId y = rollout.tokens[t];
      Vec lp = log_softmax(policy::step_logits(theta, ctx_theta, prev));
      Vec lp_ref = log_softmax(policy::step_logits(ref, ctx_ref, prev));
      Vec pi(V);
      for (int v = 0; v < V; ++v) pi[v] = std::exp(lp[v]);

      double ratio = std::exp(lp[y] - rollout.old_logprobs[t]);
      double clipped_ratio = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
      seq_term += std::min(ratio * adv, clipped_ratio * adv);
      bool plateau =
          (adv > 0 && ratio > 1.0 + cfg.clip_eps) || (adv < 0 && ratio < 1.0 - cfg.clip_eps);
      if (plateau) ++n_clipped;

      Vec g(V, 0.0);
      if (adv != 0.0 && !plateau) {
        double coeff = tok_w * adv * ratio;  // d(ratio * adv)/dlogp = adv * ratio
        for (int v = 0; v < V; ++v) g[v] -= coeff * pi[v];
        g[y] += coeff;
      }
      if (cfg.kl_beta != 0.0) {
        if (cfg.sampled_kl) {
          double lr = lp_ref[y] - lp[y];
          kl_sum += std::exp(lr) - 1.0 - lr;
          double coeff = kl_w * (1.0 - std::exp(lr));
          for (int v = 0; v < V; ++v) g[v] -= coeff * pi[v];
          g[y] += coeff;
        } else {
          double kl = 0.0;
          for (int v = 0; v < V; ++v) kl += pi[v] * (lp[v] - lp_ref[v]);
          kl_sum += kl;
          for (int v = 0; v < V; ++v) g[v] += kl_w * pi[v] * (lp[v] - lp_ref[v] - kl);
        }
      } else if (cfg.sampled_kl) {
        double lr = lp_ref[y] - lp[y];
        kl_sum += std::exp(lr) - 1.0 - lr;
      } else {
        double kl = 0.0;
        for (int v = 0; v < V; ++v) kl += pi[v] * (lp[v] - lp_ref[v]);
        kl_sum += kl;
      }
      acc.add_position(prev, g);
      prev = y;
    }
    policy_term += seq_term / static_cast<double>(rollout.tokens.size()) / G;
  }

  if (stats) {
    stats->token_count = n_tokens;
    stats->mean_kl = kl_sum / static_cast<double>(n_tokens);
    stats->clip_fraction = static_cast<double>(n_clipped) / static_cast<double>(n_tokens);
    stats->objective = policy_term - cfg.kl_beta * stats->mean_kl;
  }
  return acc.take();
}

std::pair<double, Vec> sft_loss_and_grad(const policy::PolicyParams& theta,
                                         const mmseq::MultimodalSequence& seq,
                                         const std::vector<TokenId>& target_tokens) {
  if (target_tokens.empty()) throw std::invalid_argument("sft_loss_and_grad: empty targets");
  const int V = theta.dims.V;
  const double inv_t = 1.0 / static_cast<double>(target_tokens.size());
  Vec ctx = policy::context_vector(seq, theta);
  policy::GradAccumulator acc(theta, seq);
  double loss = 0.0;
  TokenId prev = mmseq::Vocab::kEos;
  for (TokenId y : target_tokens) {
    if (y < 0 || y >= V) throw std::invalid_argument("sft_loss_and_grad: token out of range");
    Vec lp = log_softmax(policy::step_logits(theta, ctx, prev));
    loss += -lp[y];
    Vec g(V);
    for (int v = 0; v < V; ++v) g[v] = inv_t * std::exp(lp[v]);  // d(-logp)/dlogits = pi - onehot
    g[y] -= inv_t;
    acc.add_position(prev, g);
    prev = y;
  }
  return {loss * inv_t, acc.take()};
}

std::vector<TokenId> sft_target(const mmseq::Sample& sample) {
  constexpr TokenId kThinkStub = 15;
  return {mmseq::Vocab::kThinkOpen, kThinkStub,          mmseq::Vocab::kThinkClose,
          mmseq::Vocab::kAnsOpen,   sample.gold_answer,  mmseq::Vocab::kAnsClose,
          mmseq::Vocab::kEos};
}

StepMetrics train_step(policy::PolicyParams& theta, const policy::PolicyParams& ref,
                       const std::vector<GroupWithSeq>& batch, const GrpoConfig& cfg,
                       mrsp::WorkerGroup* engine) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  auto t0 = std::chrono::steady_clock::now();

  Vec grad(theta.theta.size(), 0.0);
  StepMetrics metrics;
  std::size_t n_rollouts = 0;
  std::size_t n_tokens = 0;
  double kl_token_sum = 0.0;
  double clipped_token_sum = 0.0;

  for (const auto& item : batch) {
    GroupStats stats;
    Vec g = grpo_gradient(item.group, theta, ref, item.seq, cfg, &stats);
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += g[k];

    if (engine) {
      // Evaluation pass through the sharded prefill path; bit-identical to
      // the serial logits the gradient walk just used.
      stats = evaluate_from_logits(item.group,
                                   engine_group_logits(item.group, theta, item.seq, *engine),
                                   engine_group_logits(item.group, ref, item.seq, *engine), cfg);
    }
    kl_token_sum += stats.mean_kl * static_cast<double>(stats.token_count);
    clipped_token_sum += stats.clip_fraction * static_cast<double>(stats.token_count);
    n_tokens += stats.token_count;

    for (const auto& r : item.group.rollouts) {
      metrics.mean_reward += r.reward.total;
      metrics.mean_format += r.reward.format;
      metrics.mean_accuracy += r.reward.accuracy;
      ++n_rollouts;
    }
  }

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (double& g : grad) {
    g *= inv_b;
    if (!std::isfinite(g)) throw std::runtime_error("train_step: non-finite gradient");
  }
  for (std::size_t k = 0; k < grad.size(); ++k) theta.theta[k] += cfg.learning_rate * grad[k];

  metrics.stage = "rl";
  metrics.mean_reward /= static_cast<double>(n_rollouts);
  metrics.mean_format /= static_cast<double>(n_rollouts);
  metrics.mean_accuracy /= static_cast<double>(n_rollouts);
  metrics.mean_kl = kl_token_sum / static_cast<double>(n_tokens);
  metrics.clip_fraction = clipped_token_sum / static_cast<double>(n_tokens);
  metrics.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return metrics;
}

namespace {

mrsp::Embeddings fetch_embeddings(const mmseq::Video& video, mrsp::WorkerGroup& engine,
                                  mrsp::EmbeddingCache* cache) {
  mrsp::ShardPlan plan = mrsp::plan_shards(video.frames.size(), engine.degree());
  if (cache) return cache->get_or_encode(engine, video, plan).first;
  return std::make_shared<const std::vector<Vec>>(
      mrsp::all_gather(engine.parallel_encode(video, plan), engine.degree(), &engine.stats()));
}

}  // namespace

TrainResult train_loop(const std::vector<mmseq::Sample>& dataset, const mmseq::Vocab& vocab,
                       mrsp::WorkerGroup& engine, mrsp::EmbeddingCache* cache,
                       const GrpoConfig& cfg, const rewards::RewardConfig& reward_cfg,
                       const StageConfig& stages, Rng& rng, const TrainSinks& sinks,
                       policy::PolicyParams initial, int start_step,
                       const policy::PolicyParams* resume_ref) {
  if (dataset.empty()) throw std::invalid_argument("train_loop: empty dataset");

  TrainResult result{std::move(initial), {}};
  const int total_steps = stages.sft_steps + stages.rl_steps;

  // Deterministic epoch order: step s draws batch slots in dataset order,
  // continuing from where step s-1 left off. Keeps batch composition
  // independent of the rollout RNG and reproducible across resumes.
  auto pick = [&](int step, int b) -> const mmseq::Sample& {
    std::uint64_t cursor = static_cast<std::uint64_t>(step - 1) *
                               static_cast<std::uint64_t>(stages.batch_samples) +
                           static_cast<std::uint64_t>(b);
    return dataset[cursor % dataset.size()];
  };
  auto emit = [&](StepMetrics m, int step) {
    m.step = step;
    result.history.push_back(m);
    if (sinks.on_metrics) sinks.on_metrics(m);
    if (sinks.on_checkpoint &&
        (step % stages.checkpoint_interval == 0 || step == total_steps))
      sinks.on_checkpoint(step, m.stage, result.theta, rng.save_state());
  };

  bool ref_taken = start_step > stages.sft_steps;
  if (ref_taken && start_step < total_steps && !resume_ref)
    throw std::invalid_argument("train_loop: resuming mid-RL requires the reference snapshot");
  policy::PolicyParams ref = resume_ref ? *resume_ref : result.theta;

  for (int step = start_step + 1; step <= total_steps; ++step) {
    auto t0 = std::chrono::steady_clock::now();
    if (step <= stages.sft_steps) {
      Vec grad(result.theta.theta.size(), 0.0);
      double loss = 0.0;
      for (int b = 0; b < stages.batch_samples; ++b) {
        const mmseq::Sample& sample = pick(step, b);
        mmseq::Video video = mmseq::video_for(sample);
        auto seq = mmseq::build_sequence(*fetch_embeddings(video, engine, cache), sample);
        auto [l, g] = sft_loss_and_grad(result.theta, seq, sft_target(sample));
        loss += l;
        for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += g[k];
      }
      const double inv_b = 1.0 / static_cast<double>(stages.batch_samples);
      for (std::size_t k = 0; k < grad.size(); ++k) {
        double g = grad[k] * inv_b;
        if (!std::isfinite(g)) throw std::runtime_error("train_loop: non-finite SFT gradient");
        result.theta.theta[k] -= cfg.learning_rate * g;
      }
      StepMetrics m;
      m.stage = "sft";
      m.sft_loss = loss * inv_b;
      m.wall_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      emit(m, step);
      continue;
    }

    if (!ref_taken) {
      ref = result.theta;  // frozen reference for the whole RL stage
      ref_taken = true;
      if (sinks.on_checkpoint)
        sinks.on_checkpoint(step - 1, "ref", ref, rng.save_state());
    }

    std::vector<GroupWithSeq> batch;
    batch.reserve(stages.batch_samples);
    for (int b = 0; b < stages.batch_samples; ++b) {
      const mmseq::Sample& sample = pick(step, b);
      GroupWithSeq item;
      item.group.sample_id = sample.id;
      mmseq::Video video = mmseq::video_for(sample);
      Vec rewards_vec;
      for (int g = 0; g < cfg.group_size; ++g) {
        // One embedding fetch per rollout: hits when the cache is on, a
        // full re-encode when it is off.
        auto seq = mmseq::build_sequence(*fetch_embeddings(video, engine, cache), sample);
        if (g == 0) item.seq = seq;
        policy::Rollout rollout =
            policy::sample_rollout(result.theta, seq, cfg.temperature, cfg.max_len, rng);
        rollout.reward = rewards::score(rollout.tokens, vocab, sample.gold_answer, reward_cfg);
        rewards_vec.push_back(rollout.reward.total);
        item.group.rollouts.push_back(std::move(rollout));
      }
      item.group.advantages = compute_advantages(rewards_vec, cfg.std_floor);
      batch.push_back(std::move(item));
    }
    StepMetrics m = train_step(result.theta, ref, batch, cfg, &engine);
    m.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    emit(m, step);
  }

  if (sinks.on_checkpoint && total_steps == start_step)
    sinks.on_checkpoint(start_step, "final", result.theta, rng.save_state());
  return result;
}

}  // namespace lvrl::grpo
