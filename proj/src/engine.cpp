#include "lvrl/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <iomanip>

#include <omp.h>

#include "json.hpp"

namespace lvrl::mrsp {

ShardPlan plan_shards(std::size_t n_items, int sp_degree) {
  if (sp_degree < 1) throw std::invalid_argument("plan_shards: sp_degree must be >= 1");
  ShardPlan plan;
  plan.total = n_items;
  std::size_t k = static_cast<std::size_t>(sp_degree);
  std::size_t base = n_items / k;
  std::size_t extra = n_items % k;
  std::size_t pos = 0;
  for (std::size_t w = 0; w < k; ++w) {
    std::size_t len = base + (w < extra ? 1 : 0);
    plan.ranges.emplace_back(pos, pos + len);
    pos += len;
  }
  return plan;
}

PaddedBatch pad_batch(const std::vector<std::vector<TokenId>>& sequences, TokenId pad) {
  if (sequences.empty()) throw std::invalid_argument("pad_batch: empty batch");
  PaddedBatch batch;
  batch.max_len = 0;
  for (const auto& s : sequences) batch.max_len = std::max(batch.max_len, s.size());
  for (const auto& s : sequences) {
    batch.lengths.push_back(s.size());
    auto row = s;
    row.resize(batch.max_len, pad);
    batch.rows.push_back(std::move(row));
  }
  return batch;
}

std::vector<std::vector<TokenId>> unpad_batch(const PaddedBatch& batch) {
  std::vector<std::vector<TokenId>> out;
  for (std::size_t i = 0; i < batch.rows.size(); ++i)
    out.emplace_back(batch.rows[i].begin(), batch.rows[i].begin() + batch.lengths[i]);
  return out;
}

std::vector<Vec> serial_encode(const policy::EncoderParams& enc, const mmseq::Video& video) {
  std::vector<Vec> out;
  out.reserve(video.frames.size());
  for (const auto& f : video.frames) out.push_back(policy::encode_frame(enc, f));
  return out;
}

std::vector<std::vector<Vec>> serial_prefill(const policy::PolicyParams& params,
                                             const std::vector<Vec>& contexts,
                                             const PaddedBatch& batch) {
  std::vector<std::vector<Vec>> out(batch.rows.size());
  for (std::size_t r = 0; r < batch.rows.size(); ++r) {
    out[r].resize(batch.lengths[r]);
    for (std::size_t t = 0; t < batch.lengths[r]; ++t) {
      TokenId prev = t == 0 ? mmseq::Vocab::kEos : batch.rows[r][t - 1];
      out[r][t] = policy::step_logits(params, contexts[r], prev);
    }
  }
  return out;
}

WorkerGroup::WorkerGroup(int sp_degree, policy::EncoderParams enc) {
  if (sp_degree < 1) throw std::invalid_argument("WorkerGroup: sp_degree must be >= 1");
  encoders_.assign(static_cast<std::size_t>(sp_degree), std::move(enc));
}

std::vector<EncodedSlice> WorkerGroup::parallel_encode(const mmseq::Video& video,
                                                       const ShardPlan& plan) const {
  if (plan.total != video.frames.size())
    throw std::invalid_argument("parallel_encode: plan does not cover the video frames");
  if (static_cast<int>(plan.ranges.size()) != degree())
    throw std::invalid_argument("parallel_encode: plan degree mismatch");
  std::vector<EncodedSlice> slices(plan.ranges.size());
#pragma omp parallel num_threads(degree())
  {
    int w = omp_get_thread_num();
    auto [begin, end] = plan.ranges[w];
    EncodedSlice slice;
    slice.worker = w;
    slice.begin = begin;
    slice.end = end;
    slice.embeddings.reserve(end - begin);
    const policy::EncoderParams& enc = encoders_[w];
    for (std::size_t i = begin; i < end; ++i)
      slice.embeddings.push_back(policy::encode_frame(enc, video.frames[i]));
    stats_.encoder_invocations.fetch_add(end - begin, std::memory_order_relaxed);
    slices[w] = std::move(slice);
  }
  return slices;
}

std::vector<std::vector<Vec>> WorkerGroup::parallel_prefill(const policy::PolicyParams& params,
                                                            const std::vector<Vec>& contexts,
                                                            const PaddedBatch& batch,
                                                            const ShardPlan& plan) const {
  if (plan.total != batch.max_len)
    throw std::invalid_argument("parallel_prefill: plan does not cover the padded length");
  if (static_cast<int>(plan.ranges.size()) != degree())
    throw std::invalid_argument("parallel_prefill: plan degree mismatch");
  if (contexts.size() != batch.rows.size())
    throw std::invalid_argument("parallel_prefill: one context per row required");

  std::vector<std::vector<Vec>> out(batch.rows.size());
  for (std::size_t r = 0; r < batch.rows.size(); ++r) out[r].resize(batch.lengths[r]);

#pragma omp parallel num_threads(degree())
  {
    int w = omp_get_thread_num();
    auto [begin, end] = plan.ranges[w];
    for (std::size_t r = 0; r < batch.rows.size(); ++r) {
      std::size_t stop = std::min(end, batch.lengths[r]);
      for (std::size_t t = begin; t < stop; ++t) {
        TokenId prev = t == 0 ? mmseq::Vocab::kEos : batch.at(r, t - 1, &stats_);
        out[r][t] = policy::step_logits(params, contexts[r], prev);
      }
    }
  }
  return out;
}

std::vector<Vec> all_gather(std::vector<EncodedSlice> slices, int sp_degree, EngineStats* stats) {
  if (slices.empty()) throw std::runtime_error("all_gather: no slices");
  std::sort(slices.begin(), slices.end(),
            [](const EncodedSlice& a, const EncodedSlice& b) { return a.begin < b.begin; });
  std::size_t expect = 0;
  std::size_t values = 0;
  std::vector<Vec> out;
  for (auto& slice : slices) {
    if (slice.begin != expect) throw std::runtime_error("all_gather: missing or overlapping slice");
    if (slice.embeddings.size() != slice.end - slice.begin)
      throw std::runtime_error("all_gather: slice length mismatch");
    expect = slice.end;
    for (auto& e : slice.embeddings) {
      values += e.size();
      out.push_back(std::move(e));
    }
  }
  if (stats)
    stats->gather_bytes.fetch_add(values * static_cast<std::size_t>(sp_degree - 1) * 8,
                                  std::memory_order_relaxed);
  return out;
}

std::pair<Embeddings, bool> EmbeddingCache::get_or_encode(WorkerGroup& group,
                                                          const mmseq::Video& video,
                                                          const ShardPlan& plan) {
  std::shared_ptr<Entry> entry;
  bool filler = false;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = map_.find(video.id);
    if (it == map_.end()) {
      entry = std::make_shared<Entry>();
      map_.emplace(video.id, entry);
      filler = true;
      group.stats().cache_misses.fetch_add(1, std::memory_order_relaxed);
    } else {
      entry = it->second;
      group.stats().cache_hits.fetch_add(1, std::memory_order_relaxed);
    }
  }
  if (filler) {
    auto gathered = all_gather(group.parallel_encode(video, plan), group.degree(), &group.stats());
    auto value = std::make_shared<const std::vector<Vec>>(std::move(gathered));
    {
      std::lock_guard<std::mutex> lock(entry->m);
      entry->value = value;
      entry->ready = true;
    }
    entry->cv.notify_all();
    return {value, false};
  }
  std::unique_lock<std::mutex> lock(entry->m);
  entry->cv.wait(lock, [&] { return entry->ready; });
  return {entry->value, true};
}

std::size_t EmbeddingCache::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return map_.size();
}

void EmbeddingCache::clear() {
  std::lock_guard<std::mutex> lock(mu_);
  map_.clear();
}

namespace {

// One simulated RL step: fetch embeddings once per rollout, then prefill
// policy and reference over the padded rollout batch.
double run_step(WorkerGroup& group, EmbeddingCache* cache, const mmseq::Video& video,
                const ShardPlan& frame_plan, const policy::PolicyParams& params,
                const std::vector<Vec>& contexts, const PaddedBatch& batch,
                const ShardPlan& token_plan, int group_size) {
  double t0 = omp_get_wtime();
  Embeddings emb;
  for (int g = 0; g < group_size; ++g) {
    if (cache) {
      emb = cache->get_or_encode(group, video, frame_plan).first;
    } else {
      emb = std::make_shared<const std::vector<Vec>>(
          all_gather(group.parallel_encode(video, frame_plan), group.degree(), &group.stats()));
    }
  }
  (void)emb;
  auto policy_logits = group.parallel_prefill(params, contexts, batch, token_plan);
  auto ref_logits = group.parallel_prefill(params, contexts, batch, token_plan);
  (void)policy_logits;
  (void)ref_logits;
  return (omp_get_wtime() - t0) * 1000.0;
}

}  // namespace

std::vector<BenchCell> bench(const BenchOptions& opts) {
  std::vector<BenchCell> cells;
  policy::PolicyDims dims{32, opts.embed_dim, 64, opts.feature_dim};
  policy::PolicyParams params = policy::PolicyParams::random(dims, opts.seed, 0.05);
  for (int frames : opts.frames_grid) {
    // Fresh video per step, as in a training run; the cache pays one encode
    // per video and serves the remaining G - 1 rollouts from memory.
    std::vector<mmseq::Video> videos;
    for (int i = 0; i < opts.warmup + opts.reps; ++i)
      videos.push_back(mmseq::gen_video(opts.seed + frames * 100 + i, frames, opts.feature_dim));
    // Synthetic rollout rows (length 8 apiece) for the prefill phase.
    std::vector<std::vector<TokenId>> rows(opts.group_size);
    Rng row_rng = Rng::substream(opts.seed, "bench-rows");
    for (auto& row : rows) {
      row.resize(8);
      for (auto& t : row) t = static_cast<TokenId>(row_rng.next_u64() % dims.V);
    }
    PaddedBatch batch = pad_batch(rows);
    for (int sp : opts.sp_grid) {
      for (bool use_cache : opts.cache_grid) {
        WorkerGroup group(sp, policy::EncoderParams::generate(opts.seed, opts.embed_dim,
                                                              opts.feature_dim));
        ShardPlan frame_plan = plan_shards(frames, sp);
        ShardPlan token_plan = plan_shards(batch.max_len, sp);
        std::vector<Vec> contexts(rows.size(), Vec(dims.d, 0.1));
        EmbeddingCache cache;
        for (int i = 0; i < opts.warmup; ++i)
          run_step(group, use_cache ? &cache : nullptr, videos[i], frame_plan, params, contexts,
                   batch, token_plan, opts.group_size);
        group.stats().reset();
        std::vector<double> times;
        for (int i = 0; i < opts.reps; ++i)
          times.push_back(run_step(group, use_cache ? &cache : nullptr, videos[opts.warmup + i],
                                   frame_plan, params, contexts, batch, token_plan,
                                   opts.group_size));
        std::sort(times.begin(), times.end());
        BenchCell cell;
        cell.frames = frames;
        cell.sp_degree = sp;
        cell.cache = use_cache;
        cell.group_size = opts.group_size;
        cell.median_ms = times[times.size() / 2];
        cell.encoder_invocations = group.stats().encoder_invocations.load() / opts.reps;
        cell.gather_bytes = group.stats().gather_bytes.load() / opts.reps;
        // Idle estimate from shard imbalance: the widest shard paces the rest.
        std::size_t mx = 0, mn = SIZE_MAX;
        for (auto [b, e] : frame_plan.ranges) {
          mx = std::max(mx, e - b);
          mn = std::min(mn, e - b);
        }
        cell.idle_frac = mx == 0 ? 0.0 : 1.0 - static_cast<double>(mn) / static_cast<double>(mx);
        cells.push_back(cell);
      }
    }
  }
  return cells;
}

std::string bench_cell_to_json(const BenchCell& c) {
  nlohmann::ordered_json j;
  j["frames"] = c.frames;
  j["sp_degree"] = c.sp_degree;
  j["cache"] = c.cache;
  j["G"] = c.group_size;
  j["median_ms"] = c.median_ms;
  j["encoder_invocations"] = c.encoder_invocations;
  j["gather_bytes"] = c.gather_bytes;
  j["idle_frac"] = c.idle_frac;
  return j.dump();
}

std::string render_bench_table(const std::vector<BenchCell>& cells) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "frames" << std::setw(10) << "sp_degree" << std::setw(7)
     << "cache" << std::setw(5) << "G" << std::setw(12) << "median_ms" << std::setw(14)
     << "enc_invocs" << std::setw(14) << "gather_bytes" << std::setw(10) << "idle_frac" << "\n";
  for (const auto& c : cells) {
    os << std::left << std::setw(8) << c.frames << std::setw(10) << c.sp_degree << std::setw(7)
       << (c.cache ? "on" : "off") << std::setw(5) << c.group_size << std::setw(12) << std::fixed
       << std::setprecision(3) << c.median_ms << std::setw(14) << c.encoder_invocations
       << std::setw(14) << c.gather_bytes << std::setw(10) << std::setprecision(3) << c.idle_frac
       << "\n";
  }
  return os.str();
}

}  // namespace lvrl::mrsp
