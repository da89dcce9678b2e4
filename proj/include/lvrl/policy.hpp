#pragma once

#include <string>
#include <vector>

#include "lvrl/common.hpp"
#include "lvrl/mmseq.hpp"
#include "lvrl/rewards.hpp"

namespace lvrl::policy {

// Frozen frame encoder (the stand-in vision tower): e = tanh(W x).
// Never updated during SFT or RL; identical across policy, reference, and
// all SP workers. The first four rows are channel-group pooling rows so
// the embedding exposes the pooled channel structure of the frames; the
// remaining rows are seeded Gaussian.
struct EncoderParams {
  int d = 0;  // embedding dim
  int p = 0;  // frame feature dim
  Vec w;      // d x p, row-major

  static EncoderParams generate(std::uint64_t seed, int d, int p);
};

Vec encode_frame(const EncoderParams& enc, const mmseq::Frame& frame);

struct PolicyDims {
  int V = 32;  // vocab
  int d = 16;  // embedding dim
  int h = 32;  // hidden dim
  int p = 32;  // frame feature dim (carried for checkpoint compatibility)

  std::size_t param_count() const {
    return static_cast<std::size_t>(V) * d + 2ull * h * d + h + static_cast<std::size_t>(V) * h + V;
  }
  bool operator==(const PolicyDims&) const = default;
};

// Flat parameter vector theta with fixed layout:
//   E_txt (V x d) | A (h x d) | B (h x d) | c (h) | U (V x h) | b (V)
struct PolicyParams {
  PolicyDims dims;
  Vec theta;

  static PolicyParams zeros(const PolicyDims& dims);
  static PolicyParams random(const PolicyDims& dims, std::uint64_t seed, double scale);

  std::size_t off_e_txt() const { return 0; }
  std::size_t off_a() const { return static_cast<std::size_t>(dims.V) * dims.d; }
  std::size_t off_b_mat() const { return off_a() + static_cast<std::size_t>(dims.h) * dims.d; }
  std::size_t off_c() const { return off_b_mat() + static_cast<std::size_t>(dims.h) * dims.d; }
  std::size_t off_u() const { return off_c() + dims.h; }
  std::size_t off_bias() const { return off_u() + static_cast<std::size_t>(dims.V) * dims.h; }

  const double* e_txt_row(TokenId t) const { return theta.data() + off_e_txt() + static_cast<std::size_t>(t) * dims.d; }
};

struct Rollout {
  std::vector<TokenId> tokens;
  Vec old_logprobs;  // temperature-1 log-probs recorded at sampling time
  rewards::RewardBreakdown reward;
};

// Mean over position vectors: frame positions contribute their embedding,
// text positions the matching E_txt row.
Vec context_vector(const mmseq::MultimodalSequence& seq, const PolicyParams& params);

// s = tanh(A ctx + B E_txt[prev] + c); logits = U s + b.
Vec step_logits(const PolicyParams& params, const Vec& context, TokenId prev);

// Autoregressive categorical sampling from softmax(logits / temperature)
// until EOS or max_len. old_logprobs are always recorded at temperature 1.
Rollout sample_rollout(const PolicyParams& params, const mmseq::MultimodalSequence& seq,
                       double temperature, int max_len, Rng& rng);

// Deterministic argmax decoding until EOS or max_len (ties -> lowest id).
std::vector<TokenId> greedy_rollout(const PolicyParams& params, const mmseq::MultimodalSequence& seq,
                                    int max_len);

// Teacher-forced per-position log-probs (temperature 1); same code path as
// the sampling bookkeeping, so replaying a rollout reproduces its
// old_logprobs bit-exactly.
Vec sequence_logprobs(const PolicyParams& params, const mmseq::MultimodalSequence& seq,
                      const std::vector<TokenId>& tokens);

// Exact per-position KL(pi_theta || pi_ref) over the full vocabulary.
Vec kl_per_position(const PolicyParams& theta, const PolicyParams& ref,
                    const mmseq::MultimodalSequence& seq, const std::vector<TokenId>& tokens);

// Gradient accumulation for losses expressed as dL/dlogits at generated
// positions. Backpropagates through the hidden layer, the previous-token
// embedding, and the context mean (text rows of E_txt).
class GradAccumulator {
 public:
  GradAccumulator(const PolicyParams& params, const mmseq::MultimodalSequence& seq);

  // g_logits has size V; prev is the previous token at this position.
  void add_position(TokenId prev, const Vec& g_logits);

  // Flushes the accumulated context gradient into E_txt rows and returns
  // the gradient vector (same layout/length as theta).
  Vec take();

 private:
  const PolicyParams& params_;
  const mmseq::MultimodalSequence& seq_;
  Vec context_;
  Vec grad_;
  Vec d_context_;
};

// Checkpoint file: header {V, d, h, p} as int32 little-endian, then theta
// as float64 little-endian.
void save_checkpoint(const std::string& path, const PolicyParams& params);
PolicyParams load_checkpoint(const std::string& path);

}  // namespace lvrl::policy
