#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <condition_variable>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lvrl/common.hpp"
#include "lvrl/mmseq.hpp"
#include "lvrl/policy.hpp"

namespace lvrl::mrsp {

// Contiguous block partition of [0, total): the first (total mod k) ranges
// get the extra item, so max - min <= 1. Empty ranges are legal when
// total < k.
struct ShardPlan {
  std::vector<std::pair<std::size_t, std::size_t>> ranges;  // [begin, end)
  std::size_t total = 0;
};

ShardPlan plan_shards(std::size_t n_items, int sp_degree);

struct EngineStats {
  std::atomic<std::uint64_t> encoder_invocations{0};  // one per frame encoded
  std::atomic<std::uint64_t> cache_hits{0};
  std::atomic<std::uint64_t> cache_misses{0};
  std::atomic<std::uint64_t> gather_bytes{0};  // simulated all-gather traffic
  std::atomic<std::uint64_t> pad_reads{0};     // accesses past a row's true length

  void reset() {
    encoder_invocations = 0;
    cache_hits = 0;
    cache_misses = 0;
    gather_bytes = 0;
    pad_reads = 0;
  }
};

struct EncodedSlice {
  int worker = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::vector<Vec> embeddings;
};

struct PaddedBatch {
  std::vector<std::vector<TokenId>> rows;  // padded with PAD to max_len
  std::vector<std::size_t> lengths;        // true lengths
  std::size_t max_len = 0;

  // Instrumented access: reads past the true length are counted so tests
  // can assert PAD positions are never consumed.
  TokenId at(std::size_t row, std::size_t pos, EngineStats* stats) const {
    if (pos >= lengths[row] && stats) stats->pad_reads.fetch_add(1, std::memory_order_relaxed);
    return rows[row][pos];
  }
};

PaddedBatch pad_batch(const std::vector<std::vector<TokenId>>& sequences,
                      TokenId pad = mmseq::Vocab::kPad);
std::vector<std::vector<TokenId>> unpad_batch(const PaddedBatch& batch);

// Serial reference implementations, kept as oracles for the parallel paths.
std::vector<Vec> serial_encode(const policy::EncoderParams& enc, const mmseq::Video& video);
std::vector<std::vector<Vec>> serial_prefill(const policy::PolicyParams& params,
                                             const std::vector<Vec>& contexts,
                                             const PaddedBatch& batch);

// In-process stand-in for a group of SP ranks: OpenMP threads, one per
// worker, each with its own copy of the frozen encoder.
class WorkerGroup {
 public:
  WorkerGroup(int sp_degree, policy::EncoderParams enc);

  int degree() const { return static_cast<int>(encoders_.size()); }
  const policy::EncoderParams& encoder(int worker) const { return encoders_.at(worker); }
  EngineStats& stats() { return stats_; }
  const EngineStats& stats() const { return stats_; }

  // Worker w encodes exactly its plan range; workers run concurrently.
  std::vector<EncodedSlice> parallel_encode(const mmseq::Video& video,
                                            const ShardPlan& plan) const;

  // Teacher-forced logits for every real position, sharded over token
  // positions of the padded batch. Result [row][pos] covers pos <
  // lengths[row] only and matches serial_prefill bit-exactly.
  std::vector<std::vector<Vec>> parallel_prefill(const policy::PolicyParams& params,
                                                 const std::vector<Vec>& contexts,
                                                 const PaddedBatch& batch,
                                                 const ShardPlan& plan) const;

 private:
  std::vector<policy::EncoderParams> encoders_;
  mutable EngineStats stats_;
};

// Concatenation in range order, independent of delivery order. Records
// simulated traffic: total values * (sp_degree - 1) * 8 bytes.
std::vector<Vec> all_gather(std::vector<EncodedSlice> slices, int sp_degree, EngineStats* stats);

using Embeddings = std::shared_ptr<const std::vector<Vec>>;

// Unbounded per-run cache of gathered embeddings keyed by video id.
// Exactly-once fill per key under concurrent callers: late arrivals block
// on the filling caller instead of re-encoding.
class EmbeddingCache {
 public:
  // Returns (embeddings, hit). A hit never touches the encoder.
  std::pair<Embeddings, bool> get_or_encode(WorkerGroup& group, const mmseq::Video& video,
                                            const ShardPlan& plan);

  std::size_t size() const;
  void clear();

 private:
  struct Entry {
    std::mutex m;
    std::condition_variable cv;
    bool ready = false;
    Embeddings value;
  };
  mutable std::mutex mu_;
  std::unordered_map<std::string, std::shared_ptr<Entry>> map_;
};

// One bench grid cell: a simulated RL step (embedding fetch for G
// rollouts plus policy/reference prefill over the padded rollout batch).
struct BenchCell {
  int frames = 0;
  int sp_degree = 1;
  bool cache = false;
  int group_size = 8;
  double median_ms = 0.0;
  std::uint64_t encoder_invocations = 0;
  std::uint64_t gather_bytes = 0;
  double idle_frac = 0.0;
};

struct BenchOptions {
  std::vector<int> frames_grid = {64, 256};
  std::vector<int> sp_grid = {1, 2, 4};
  std::vector<bool> cache_grid = {false, true};
  int group_size = 8;
  int reps = 5;
  int warmup = 2;
  int feature_dim = 256;   // heavier dims than the training defaults so the
  int embed_dim = 128;     // kernels dominate threading overhead
  std::uint64_t seed = 1234;
};

std::vector<BenchCell> bench(const BenchOptions& opts);
std::string render_bench_table(const std::vector<BenchCell>& cells);
std::string bench_cell_to_json(const BenchCell& c);

}  // namespace lvrl::mrsp
