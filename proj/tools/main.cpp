#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "lvrl/config.hpp"
#include "lvrl/engine.hpp"
#include "lvrl/filter.hpp"
#include "lvrl/grpo.hpp"
#include "lvrl/mmseq.hpp"
#include "lvrl/policy.hpp"
#include "lvrl/rewards.hpp"

namespace fs = std::filesystem;
using namespace lvrl;

namespace {

enum class LogLevel { Error = 0, Info = 1, Debug = 2 };

LogLevel log_level() {
  const char* env = std::getenv("MRSP_LOG");
  if (!env) return LogLevel::Info;
  std::string v = env;
  if (v == "error") return LogLevel::Error;
  if (v == "debug") return LogLevel::Debug;
  return LogLevel::Info;
}

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::Info) std::cerr << "[info] " << msg << "\n";
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::Debug) std::cerr << "[debug] " << msg << "\n";
}

// ---------------------------------------------------------------- gen ----

int cmd_gen(const std::string& out, int n_samples, int frames, const std::string& family,
            std::uint64_t seed, int feature_dim) {
  std::vector<mmseq::Sample> samples;
  Rng seeder = Rng::substream(seed, "gen");
  std::map<std::string, int> counts;
  for (int i = 0; i < n_samples; ++i) {
    std::uint64_t vseed = seeder.next_u64();
    mmseq::TaskFamily fam;
    if (family == "mixed")
      fam = i % 2 == 0 ? mmseq::TaskFamily::ArgmaxChannel : mmseq::TaskFamily::TemporalHalf;
    else
      fam = mmseq::family_from_string(family);
    mmseq::Video video = mmseq::gen_video(vseed, frames, feature_dim);
    mmseq::Sample s = mmseq::gen_task(video, fam);
    s.id = std::to_string(i) + "_" + s.id;
    ++counts[mmseq::to_string(fam)];
    samples.push_back(std::move(s));
  }
  mmseq::save_dataset(out, samples);
  for (const auto& [fam, n] : counts) std::cout << fam << ": " << n << "\n";
  std::cout << "wrote " << samples.size() << " samples to " << out << "\n";
  return 0;
}

// ------------------------------------------------------------- shared ----

filter::AnswerModel policy_answer_model(const policy::PolicyParams& params,
                                        mrsp::WorkerGroup& engine, mrsp::EmbeddingCache& cache,
                                        double temperature, int max_len) {
  return [&params, &engine, &cache, temperature, max_len](const mmseq::Sample& sample,
                                                          Rng& rng) {
    mmseq::Video video = mmseq::video_for(sample);
    mrsp::ShardPlan plan = mrsp::plan_shards(video.frames.size(), engine.degree());
    auto [emb, hit] = cache.get_or_encode(engine, video, plan);
    (void)hit;
    auto seq = mmseq::build_sequence(*emb, sample);
    return policy::sample_rollout(params, seq, temperature, max_len, rng).tokens;
  };
}

// ------------------------------------------------------------- filter ----

int cmd_filter(const std::string& data, const std::string& checkpoint, std::uint64_t encoder_seed,
               int n_runs, const std::string& keep_arg, const std::string& band_arg,
               const std::string& out, const std::string& summary_path, std::uint64_t seed,
               int sp_degree, double temperature, int max_len) {
  auto samples = mmseq::load_dataset(data);
  policy::PolicyParams params = policy::load_checkpoint(checkpoint);
  mmseq::Vocab vocab(params.dims.V);
  auto enc = policy::EncoderParams::generate(encoder_seed, params.dims.d, params.dims.p);
  mrsp::WorkerGroup engine(sp_degree, enc);
  mrsp::EmbeddingCache cache;

  auto model = policy_answer_model(params, engine, cache, temperature, max_len);
  auto probes = filter::probe_dataset(model, samples, vocab, n_runs, seed);

  std::pair<std::vector<mmseq::Sample>, filter::FilterSummary> result;
  if (!band_arg.empty()) {
    auto colon = band_arg.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("--band expects lo:hi");
    int lo = std::stoi(band_arg.substr(0, colon));
    int hi = std::stoi(band_arg.substr(colon + 1));
    result = filter::filter_dataset_band(std::move(samples), probes, lo, hi);
  } else {
    std::set<mmseq::Difficulty> keep;
    std::stringstream ss(keep_arg);
    std::string item;
    while (std::getline(ss, item, ',')) keep.insert(mmseq::difficulty_from_string(item));
    result = filter::filter_dataset(std::move(samples), probes, keep);
  }

  if (!summary_path.empty()) {
    std::ofstream sf(summary_path);
    if (!sf) throw std::runtime_error("cannot open for writing: " + summary_path);
    for (const auto& p : probes) sf << filter::probe_to_json(p) << "\n";
  }
  mmseq::save_dataset(out, result.first);
  const auto& s = result.second;
  std::cout << "easy: " << s.easy << " medium: " << s.medium << " hard: " << s.hard
            << " retained: " << s.retained << "\n";
  return 0;
}

// -------------------------------------------------------------- train ----

struct TrainState {
  int step = 0;
  std::string stage;
  std::string rng_state;
};

void save_state(const fs::path& path, const TrainState& st) {
  std::ofstream out(path);
  out << st.step << "\n" << st.stage << "\n" << st.rng_state << "\n";
}

TrainState load_state(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open state file: " + path.string());
  TrainState st;
  in >> st.step >> st.stage;
  std::getline(in, st.rng_state);  // rest of the stage line
  std::getline(in, st.rng_state);
  return st;
}

// Keep only the metrics lines at or below `step` (resume truncation).
void truncate_metrics(const fs::path& path, int step) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    if (j.at("step").get<int>() <= step) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << "\n";
}

int cmd_train(const std::string& config_path, bool dry_run, bool resume) {
  config::RunConfig cfg = config::load(config_path);
  if (cfg.dataset.empty()) throw std::invalid_argument("config: dataset path required");

  auto dataset = mmseq::load_dataset(cfg.dataset);
  if (dataset.empty()) throw std::invalid_argument("dataset is empty: " + cfg.dataset);

  if (dry_run) {
    std::cout << "resolved config:\n" << config::serialize(cfg);
    std::cout << "dataset samples: " << dataset.size() << "\n";
    std::cout << "plan: " << cfg.sft_steps << " sft steps, " << cfg.rl_steps << " rl steps, batch "
              << cfg.batch_samples << ", G " << cfg.group_size << ", sp_degree " << cfg.sp_degree
              << ", cache " << (cfg.cache ? "on" : "off") << "\n";
    return 0;
  }

  fs::create_directories(cfg.out_dir);
  fs::path out_dir(cfg.out_dir);
  fs::path metrics_path = out_dir / "metrics.jsonl";
  fs::path latest_ckpt = out_dir / "checkpoint_latest.bin";
  fs::path state_path = out_dir / "state_latest.txt";
  fs::path ref_path = out_dir / "ref.bin";
  config::save((out_dir / "config.resolved").string(), cfg);

  mmseq::Vocab vocab(cfg.vocab_size);
  auto enc = policy::EncoderParams::generate(cfg.encoder_seed, cfg.embed_dim, cfg.feature_dim);
  mrsp::WorkerGroup engine(cfg.sp_degree, enc);
  mrsp::EmbeddingCache cache;
  mrsp::EmbeddingCache* cache_ptr = cfg.cache ? &cache : nullptr;
  if (!cfg.cache) log_info("embedding cache disabled by config; encoding per fetch");

  Rng rng = Rng::substream(cfg.train_seed, "train");
  policy::PolicyParams theta =
      cfg.init_checkpoint.empty()
          ? policy::PolicyParams::random(cfg.policy_dims(), cfg.train_seed, cfg.init_scale)
          : policy::load_checkpoint(cfg.init_checkpoint);

  int start_step = 0;
  std::optional<policy::PolicyParams> resume_ref;
  if (resume) {
    TrainState st = load_state(state_path);
    start_step = st.step;
    rng.load_state(st.rng_state);
    theta = policy::load_checkpoint(latest_ckpt.string());
    if (fs::exists(ref_path)) resume_ref = policy::load_checkpoint(ref_path.string());
    truncate_metrics(metrics_path, start_step);
    log_info("resuming from step " + std::to_string(start_step));
  } else {
    std::ofstream(metrics_path, std::ios::trunc);
  }

  std::ofstream metrics_out(metrics_path, std::ios::app);
  if (!metrics_out) throw std::runtime_error("cannot open metrics file");

  grpo::TrainSinks sinks;
  sinks.on_metrics = [&](const grpo::StepMetrics& m) {
    metrics_out << config::metrics_to_json(m) << "\n";
    metrics_out.flush();
    log_debug("step " + std::to_string(m.step) + " stage " + m.stage);
  };
  sinks.on_checkpoint = [&](int step, const std::string& stage, const policy::PolicyParams& p,
                            const std::string& rng_state) {
    if (stage == "ref") {
      policy::save_checkpoint(ref_path.string(), p);
      return;
    }
    policy::save_checkpoint(latest_ckpt.string(), p);
    save_state(state_path, {step, stage, rng_state});
  };

  grpo::StageConfig stages{cfg.sft_steps, cfg.rl_steps, cfg.batch_samples,
                           cfg.checkpoint_interval};

  // The cache outlives both stages and the frozen encoder keeps it valid
  // for the whole run, so each unique video is encoded at most once.
  auto result = grpo::train_loop(dataset, vocab, engine, cache_ptr, cfg.grpo_config(),
                                 cfg.reward_config(), stages, rng, sinks, std::move(theta),
                                 start_step, resume_ref ? &*resume_ref : nullptr);

  policy::save_checkpoint((out_dir / "checkpoint_final.bin").string(), result.theta);
  policy::save_checkpoint(latest_ckpt.string(), result.theta);
  save_state(state_path, {cfg.sft_steps + cfg.rl_steps, "final", rng.save_state()});

  if (!result.history.empty()) {
    const auto& last = result.history.back();
    std::cout << "final step " << last.step << " stage " << last.stage << " mean_reward "
              << last.mean_reward << " mean_accuracy " << last.mean_accuracy << "\n";
  } else {
    std::cout << "no steps executed\n";
  }
  std::cout << "encoder_invocations " << engine.stats().encoder_invocations.load()
            << " cache_hits " << engine.stats().cache_hits.load() << " cache_misses "
            << engine.stats().cache_misses.load() << "\n";
  return 0;
}

// --------------------------------------------------------------- eval ----

int cmd_eval(const std::string& checkpoint, const std::string& data, std::uint64_t encoder_seed,
             bool greedy, std::uint64_t seed, const std::string& transcripts, int sp_degree,
             int max_len) {
  auto samples = mmseq::load_dataset(data);
  rewards::RewardConfig reward_cfg;

  if (!transcripts.empty()) {
    // Externally produced rendered transcripts, one line per sample.
    std::ifstream in(transcripts);
    if (!in) throw std::runtime_error("cannot open transcripts: " + transcripts);
    std::size_t correct = 0, well_formed = 0, n = 0;
    std::string line;
    for (const auto& s : samples) {
      if (!std::getline(in, line))
        throw std::runtime_error("transcripts file has fewer lines than the dataset");
      auto parsed = rewards::parse_format_text(line);
      if (parsed) {
        ++well_formed;
        TokenId ans = mmseq::Vocab::answer_letter(parsed->second - 'A');
        if (ans == s.gold_answer) ++correct;
      }
      ++n;
    }
    std::cout << "transcripts: " << n << " format " << static_cast<double>(well_formed) / n
              << " accuracy " << static_cast<double>(correct) / n << "\n";
    return 0;
  }

  policy::PolicyParams params = policy::load_checkpoint(checkpoint);
  mmseq::Vocab vocab(params.dims.V);
  auto enc = policy::EncoderParams::generate(encoder_seed, params.dims.d, params.dims.p);
  mrsp::WorkerGroup engine(sp_degree, enc);
  mrsp::EmbeddingCache cache;
  Rng rng = Rng::substream(seed, "eval");

  struct Agg {
    double fmt = 0, acc = 0, choice = 0;
    int n = 0;
  };
  Agg total;
  std::map<std::string, Agg> by_family;
  std::map<std::string, Agg> by_difficulty;

  for (const auto& s : samples) {
    mmseq::Video video = mmseq::video_for(s);
    mrsp::ShardPlan plan = mrsp::plan_shards(video.frames.size(), engine.degree());
    auto [emb, hit] = cache.get_or_encode(engine, video, plan);
    (void)hit;
    auto seq = mmseq::build_sequence(*emb, s);

    // Free generation, scored by the reward rules.
    std::vector<TokenId> tokens =
        greedy ? policy::greedy_rollout(params, seq, max_len)
               : policy::sample_rollout(params, seq, 1.0, max_len, rng).tokens;
    auto r = rewards::score(tokens, vocab, s.gold_answer, reward_cfg);

    // Constrained multiple choice: distribution over the sample's choice
    // letters at the answer slot.
    Vec ctx = policy::context_vector(seq, params);
    Vec logits = policy::step_logits(params, ctx, mmseq::Vocab::kAnsOpen);
    TokenId picked;
    if (greedy) {
      picked = s.choices.front();
      for (TokenId c : s.choices)
        if (logits[c] > logits[picked]) picked = c;
    } else {
      Vec weights;
      for (TokenId c : s.choices) weights.push_back(std::exp(logits[c]));
      picked = s.choices[rng.categorical(weights)];
    }

    auto update = [&](Agg& a) {
      a.fmt += r.format;
      a.acc += r.accuracy;
      a.choice += picked == s.gold_answer ? 1.0 : 0.0;
      ++a.n;
    };
    update(total);
    update(by_family[mmseq::to_string(s.family)]);
    update(by_difficulty[mmseq::to_string(s.difficulty)]);
  }

  auto report = [](const std::string& name, const Agg& a) {
    std::cout << name << ": n " << a.n << " format " << a.fmt / a.n << " accuracy " << a.acc / a.n
              << " choice_accuracy " << a.choice / a.n << "\n";
  };
  report("overall", total);
  for (const auto& [k, a] : by_family) report("family/" + k, a);
  for (const auto& [k, a] : by_difficulty) report("difficulty/" + k, a);
  return 0;
}

// -------------------------------------------------------------- bench ----

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
  return out;
}

int cmd_bench(const std::string& frames_grid, const std::string& sp_grid,
              const std::string& cache_grid, int reps, int group_size, const std::string& out) {
  mrsp::BenchOptions opts;
  opts.frames_grid = parse_int_list(frames_grid);
  opts.sp_grid = parse_int_list(sp_grid);
  opts.cache_grid.clear();
  {
    std::stringstream ss(cache_grid);
    std::string item;
    while (std::getline(ss, item, ',')) opts.cache_grid.push_back(item == "on");
  }
  opts.reps = reps;
  opts.group_size = group_size;
  auto cells = mrsp::bench(opts);
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot open for writing: " + out);
    for (const auto& c : cells) f << mrsp::bench_cell_to_json(c) << "\n";
  }
  std::cout << mrsp::render_bench_table(cells);

  // Speedup of the full configuration (cache on, max sp) over the plain
  // one (cache off, sp 1), per frame count.
  for (int frames : opts.frames_grid) {
    const mrsp::BenchCell* plain = nullptr;
    const mrsp::BenchCell* full = nullptr;
    for (const auto& c : cells) {
      if (c.frames != frames) continue;
      if (!c.cache && c.sp_degree == 1) plain = &c;
      if (c.cache && (!full || c.sp_degree > full->sp_degree)) full = &c;
    }
    if (plain && full && full->median_ms > 0)
      std::cout << "speedup@" << frames << "f: " << plain->median_ms / full->median_ms << "x\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"long-video RL training harness"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic video-QA dataset");
  std::string gen_out = "dataset.jsonl", gen_family = "argmax_channel";
  int gen_n = 100, gen_frames = 32, gen_fdim = 32;
  std::uint64_t gen_seed = 1;
  gen->add_option("--out", gen_out, "output JSONL path");
  gen->add_option("--n-samples", gen_n, "number of samples");
  gen->add_option("--frames", gen_frames, "frames per video");
  gen->add_option("--family", gen_family, "argmax_channel | temporal_half | mixed");
  gen->add_option("--seed", gen_seed, "data seed");
  gen->add_option("--feature-dim", gen_fdim, "frame feature dimension");

  // filter
  auto* flt = app.add_subcommand("filter", "difficulty-probe and filter a dataset");
  std::string flt_data, flt_ckpt, flt_keep = "medium", flt_band, flt_out = "filtered.jsonl",
              flt_summary;
  int flt_runs = 10, flt_sp = 2, flt_maxlen = 12;
  std::uint64_t flt_seed = 7, flt_enc_seed = 2;
  double flt_temp = 1.0;
  flt->add_option("--data", flt_data, "dataset JSONL")->required();
  flt->add_option("--checkpoint", flt_ckpt, "probe model checkpoint")->required();
  flt->add_option("--encoder-seed", flt_enc_seed, "frozen encoder seed");
  flt->add_option("--n-runs", flt_runs, "probe runs per sample");
  flt->add_option("--keep", flt_keep, "comma list of labels to keep");
  flt->add_option("--band", flt_band, "lo:hi band on n_correct (overrides --keep)");
  flt->add_option("--out", flt_out, "filtered dataset path");
  flt->add_option("--summary", flt_summary, "probe summary JSONL path");
  flt->add_option("--seed", flt_seed, "probe seed");
  flt->add_option("--sp-degree", flt_sp, "engine SP degree");
  flt->add_option("--temperature", flt_temp, "probe sampling temperature");
  flt->add_option("--max-len", flt_maxlen, "rollout length cap");

  // train
  auto* trn = app.add_subcommand("train", "run the two-stage training loop");
  std::string trn_config;
  bool trn_dry = false, trn_resume = false;
  trn->add_option("--config", trn_config, "run config file")->required();
  trn->add_flag("--dry-run", trn_dry, "validate config and print the plan");
  trn->add_flag("--resume", trn_resume, "continue from the latest checkpoint");

  // eval
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string evl_ckpt, evl_data, evl_transcripts;
  bool evl_greedy = false;
  int evl_sp = 2, evl_maxlen = 12;
  std::uint64_t evl_seed = 11, evl_enc_seed = 2;
  evl->add_option("--checkpoint", evl_ckpt, "model checkpoint");
  evl->add_option("--data", evl_data, "dataset JSONL")->required();
  evl->add_option("--encoder-seed", evl_enc_seed, "frozen encoder seed");
  evl->add_flag("--greedy", evl_greedy, "deterministic argmax decoding");
  evl->add_option("--seed", evl_seed, "sampling seed");
  evl->add_option("--transcripts", evl_transcripts, "score rendered transcripts instead");
  evl->add_option("--sp-degree", evl_sp, "engine SP degree");
  evl->add_option("--max-len", evl_maxlen, "rollout length cap");

  // bench
  auto* bch = app.add_subcommand("bench", "benchmark the parallel engine");
  std::string bch_frames = "64,256", bch_sp = "1,2,4", bch_cache = "off,on", bch_out;
  int bch_reps = 5, bch_g = 8;
  bch->add_option("--frames-grid", bch_frames, "comma list of frame counts");
  bch->add_option("--sp-grid", bch_sp, "comma list of SP degrees");
  bch->add_option("--cache-grid", bch_cache, "comma list of on/off");
  bch->add_option("--reps", bch_reps, "repetitions per cell");
  bch->add_option("--g", bch_g, "rollouts per step");
  bch->add_option("--out", bch_out, "bench report JSONL path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(gen_out, gen_n, gen_frames, gen_family, gen_seed, gen_fdim);
    if (flt->parsed())
      return cmd_filter(flt_data, flt_ckpt, flt_enc_seed, flt_runs, flt_keep, flt_band, flt_out,
                        flt_summary, flt_seed, flt_sp, flt_temp, flt_maxlen);
    if (trn->parsed()) return cmd_train(trn_config, trn_dry, trn_resume);
    if (evl->parsed())
      return cmd_eval(evl_ckpt, evl_data, evl_enc_seed, evl_greedy, evl_seed, evl_transcripts,
                      evl_sp, evl_maxlen);
    if (bch->parsed()) return cmd_bench(bch_frames, bch_sp, bch_cache, bch_reps, bch_g, bch_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
