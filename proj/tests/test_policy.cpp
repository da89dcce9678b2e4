#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "doctest.h"
#include "lvrl/mmseq.hpp"
#include "lvrl/policy.hpp"

using namespace lvrl;
using namespace lvrl::policy;

namespace {

mmseq::MultimodalSequence make_seq(const EncoderParams& enc, std::uint64_t seed, int frames) {
  mmseq::Video v = mmseq::gen_video(seed, frames, enc.p);
  mmseq::Sample t = mmseq::gen_task(v, mmseq::TaskFamily::ArgmaxChannel);
  std::vector<Vec> embs;
  for (const auto& f : v.frames) embs.push_back(encode_frame(enc, f));
  return mmseq::build_sequence(std::move(embs), t);
}

}  // namespace

TEST_CASE("encode_frame is tanh(W x), computed longhand") {
  EncoderParams enc = EncoderParams::generate(3, 8, 12);
  REQUIRE(enc.d == 8);
  REQUIRE(enc.p == 12);
  REQUIRE(enc.w.size() == 96);
  mmseq::Video v = mmseq::gen_video(11, 1, 12);
  Vec e = encode_frame(enc, v.frames[0]);
  REQUIRE(static_cast<int>(e.size()) == 8);
  for (int i = 0; i < 8; ++i) {
    double acc = 0.0;
    for (int j = 0; j < 12; ++j) acc += enc.w[i * 12 + j] * v.frames[0].features[j];
    CHECK(e[i] == doctest::Approx(std::tanh(acc)).epsilon(1e-15));
  }
}

TEST_CASE("encoder pooling rows expose the channel-group means") {
  // With d >= 4 and p % 4 == 0 the first four rows are group indicators
  // with gain 0.3, so row g of W x is 0.3 times the mean of channel group
  // g, kept well inside tanh's linear range.
  EncoderParams enc = EncoderParams::generate(17, 16, 32);
  mmseq::Video v = mmseq::gen_video(23, 1, 32);
  Vec e = encode_frame(enc, v.frames[0]);
  for (int g = 0; g < 4; ++g) {
    double mean = 0.0;
    for (int j = g * 8; j < (g + 1) * 8; ++j) mean += v.frames[0].features[j];
    mean /= 8.0;
    CHECK(e[g] == doctest::Approx(std::tanh(0.3 * mean)).epsilon(1e-15));
  }
}

TEST_CASE("encoder generation is deterministic per seed") {
  EncoderParams a = EncoderParams::generate(5, 16, 32);
  EncoderParams b = EncoderParams::generate(5, 16, 32);
  EncoderParams c = EncoderParams::generate(6, 16, 32);
  CHECK(a.w == b.w);
  CHECK(a.w != c.w);
}

TEST_CASE("context_vector is the mean over frame embeddings and text rows") {
  PolicyDims dims{16, 4, 6, 8};
  PolicyParams params = PolicyParams::random(dims, 42, 0.5);
  mmseq::MultimodalSequence seq;
  seq.frame_embeddings = {{1.0, 0.0, -1.0, 2.0}, {0.5, 0.5, 0.5, 0.5}};
  seq.text_tokens = {10, 11};
  Vec ctx = context_vector(seq, params);
  REQUIRE(static_cast<int>(ctx.size()) == 4);
  for (int j = 0; j < 4; ++j) {
    double want = (seq.frame_embeddings[0][j] + seq.frame_embeddings[1][j] +
                   params.e_txt_row(10)[j] + params.e_txt_row(11)[j]) /
                  4.0;
    CHECK(ctx[j] == doctest::Approx(want).epsilon(1e-15));
  }
}

TEST_CASE("step_logits matches the longhand formula") {
  PolicyDims dims{16, 4, 6, 8};
  PolicyParams params = PolicyParams::random(dims, 7, 0.3);
  Vec ctx = {0.2, -0.4, 0.9, 0.1};
  TokenId prev = 12;
  Vec logits = step_logits(params, ctx, prev);
  REQUIRE(static_cast<int>(logits.size()) == dims.V);

  const double* A = params.theta.data() + params.off_a();
  const double* B = params.theta.data() + params.off_b_mat();
  const double* c = params.theta.data() + params.off_c();
  const double* U = params.theta.data() + params.off_u();
  const double* b = params.theta.data() + params.off_bias();
  const double* ep = params.e_txt_row(prev);
  Vec s(dims.h);
  for (int i = 0; i < dims.h; ++i) {
    double acc = c[i];
    for (int j = 0; j < dims.d; ++j) acc += A[i * dims.d + j] * ctx[j] + B[i * dims.d + j] * ep[j];
    s[i] = std::tanh(acc);
  }
  for (int v = 0; v < dims.V; ++v) {
    double acc = b[v];
    for (int i = 0; i < dims.h; ++i) acc += U[v * dims.h + i] * s[i];
    CHECK(logits[v] == doctest::Approx(acc).epsilon(1e-14));
  }
}

TEST_CASE("softmax is shift invariant and normalized") {
  Vec l = {1.0, -2.0, 0.5, 3.0};
  Vec p = softmax(l);
  Vec shifted = l;
  for (double& x : shifted) x += 100.0;
  Vec q = softmax(shifted);
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(p[i] == doctest::Approx(q[i]).epsilon(1e-12));
    sum += p[i];
    CHECK(log_softmax(l)[i] == doctest::Approx(std::log(p[i])).epsilon(1e-12));
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sample_rollout frequencies match softmax within 3 sigma") {
  // Tiny vocab so every token's probability is sizable at the first step.
  PolicyDims dims{16, 4, 6, 8};
  PolicyParams params = PolicyParams::random(dims, 99, 0.8);
  EncoderParams enc = EncoderParams::generate(1, 4, 8);
  mmseq::MultimodalSequence seq = make_seq(enc, 2, 3);
  Vec ctx = context_vector(seq, params);
  Vec probs = softmax(step_logits(params, ctx, mmseq::Vocab::kEos));

  const int n = 20000;
  std::vector<int> counts(dims.V, 0);
  Rng rng(555);
  for (int i = 0; i < n; ++i) {
    Rollout r = sample_rollout(params, seq, 1.0, 1, rng);
    REQUIRE(r.tokens.size() == 1);
    counts[r.tokens[0]]++;
  }
  for (int v = 0; v < dims.V; ++v) {
    double expect = n * probs[v];
    double sigma = std::sqrt(n * probs[v] * (1.0 - probs[v]));
    CHECK(std::abs(counts[v] - expect) <= 3.0 * sigma + 1.0);
  }
}

TEST_CASE("temperature reshapes sampling but old_logprobs stay at temperature 1") {
  PolicyDims dims{16, 4, 6, 8};
  PolicyParams params = PolicyParams::random(dims, 31, 0.5);
  EncoderParams enc = EncoderParams::generate(1, 4, 8);
  mmseq::MultimodalSequence seq = make_seq(enc, 4, 3);

  Rng rng(77);
  for (int i = 0; i < 50; ++i) {
    Rollout r = sample_rollout(params, seq, 0.5, 6, rng);
    Vec replay = sequence_logprobs(params, seq, r.tokens);
    REQUIRE(replay.size() == r.old_logprobs.size());
    for (std::size_t t = 0; t < replay.size(); ++t) CHECK(replay[t] == r.old_logprobs[t]);
  }
}

TEST_CASE("sequence_logprobs replays sampled rollouts bit-exactly") {
  PolicyDims dims{32, 8, 12, 16};
  PolicyParams params = PolicyParams::random(dims, 13, 0.4);
  EncoderParams enc = EncoderParams::generate(2, 8, 16);
  mmseq::MultimodalSequence seq = make_seq(enc, 6, 5);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    Rollout r = sample_rollout(params, seq, 1.0, 10, rng);
    Vec replay = sequence_logprobs(params, seq, r.tokens);
    REQUIRE(replay.size() == r.old_logprobs.size());
    for (std::size_t t = 0; t < replay.size(); ++t) CHECK(replay[t] == r.old_logprobs[t]);
  }
}

TEST_CASE("greedy_rollout is deterministic and argmax at each step") {
  PolicyDims dims{32, 8, 12, 16};
  PolicyParams params = PolicyParams::random(dims, 21, 0.4);
  EncoderParams enc = EncoderParams::generate(2, 8, 16);
  mmseq::MultimodalSequence seq = make_seq(enc, 8, 4);
  auto a = greedy_rollout(params, seq, 8);
  auto b = greedy_rollout(params, seq, 8);
  CHECK(a == b);
  Vec ctx = context_vector(seq, params);
  TokenId prev = mmseq::Vocab::kEos;
  for (TokenId t : a) {
    Vec logits = step_logits(params, ctx, prev);
    TokenId best = 0;
    for (int v = 1; v < dims.V; ++v)
      if (logits[v] > logits[best]) best = static_cast<TokenId>(v);
    CHECK(t == best);
    prev = t;
  }
}

TEST_CASE("KL identities") {
  PolicyDims dims{16, 4, 6, 8};
  PolicyParams theta = PolicyParams::random(dims, 3, 0.5);
  PolicyParams other = PolicyParams::random(dims, 4, 0.5);
  EncoderParams enc = EncoderParams::generate(1, 4, 8);
  mmseq::MultimodalSequence seq = make_seq(enc, 10, 3);
  std::vector<TokenId> toks = {10, 11, 6, mmseq::Vocab::kEos};

  Vec self_kl = kl_per_position(theta, theta, seq, toks);
  for (double k : self_kl) CHECK(std::abs(k) < 1e-14);

  Vec kl = kl_per_position(theta, other, seq, toks);
  REQUIRE(kl.size() == toks.size());
  for (double k : kl) CHECK(k >= -1e-14);

  // Closed form check at one position against direct summation.
  Vec ctx = context_vector(seq, theta);
  Vec ctx_o = context_vector(seq, other);
  Vec lp = log_softmax(step_logits(theta, ctx, mmseq::Vocab::kEos));
  Vec lq = log_softmax(step_logits(other, ctx_o, mmseq::Vocab::kEos));
  double direct = 0.0;
  for (int v = 0; v < dims.V; ++v) direct += std::exp(lp[v]) * (lp[v] - lq[v]);
  CHECK(kl[0] == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("checkpoint round trip is bit-exact") {
  PolicyDims dims{32, 8, 12, 16};
  PolicyParams params = PolicyParams::random(dims, 2718, 0.7);
  std::string path = "/tmp/lvrl_ckpt_" + std::to_string(::getpid()) + ".bin";
  save_checkpoint(path, params);
  PolicyParams back = load_checkpoint(path);
  CHECK(back.dims == params.dims);
  REQUIRE(back.theta.size() == params.theta.size());
  for (std::size_t i = 0; i < params.theta.size(); ++i) CHECK(back.theta[i] == params.theta[i]);
  std::remove(path.c_str());
}

TEST_CASE("load_checkpoint rejects truncated files") {
  PolicyDims dims{16, 4, 6, 8};
  PolicyParams params = PolicyParams::random(dims, 1, 0.1);
  std::string path = "/tmp/lvrl_ckpt_trunc_" + std::to_string(::getpid()) + ".bin";
  save_checkpoint(path, params);
  FILE* f = std::fopen(path.c_str(), "r+");
  REQUIRE(f);
  std::fseek(f, 0, SEEK_END);
  long sz = std::ftell(f);
  std::fclose(f);
  REQUIRE(truncate(path.c_str(), sz - 9) == 0);
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("param layout offsets tile theta exactly") {
  PolicyDims dims{16, 4, 6, 8};
  PolicyParams p = PolicyParams::zeros(dims);
  CHECK(p.off_a() == 64);
  CHECK(p.off_b_mat() == 64 + 24);
  CHECK(p.off_c() == 64 + 48);
  CHECK(p.off_u() == 64 + 48 + 6);
  CHECK(p.off_bias() == 64 + 48 + 6 + 96);
  CHECK(p.theta.size() == dims.param_count());
  CHECK(dims.param_count() == 64 + 48 + 6 + 96 + 16);
}

TEST_CASE("Rng state save/load resumes the identical stream") {
  Rng a(123);
  for (int i = 0; i < 17; ++i) a.uniform();
  std::string st = a.save_state();
  Rng b(0);
  b.load_state(st);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("Rng substreams differ by tag and are stable") {
  Rng a = Rng::substream(5, "alpha");
  Rng a2 = Rng::substream(5, "alpha");
  Rng b = Rng::substream(5, "beta");
  CHECK(a.next_u64() == a2.next_u64());
  CHECK(Rng::substream(5, "alpha").next_u64() != b.next_u64());
}
