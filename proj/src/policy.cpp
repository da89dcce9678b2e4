#include "lvrl/policy.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace lvrl::policy {

EncoderParams EncoderParams::generate(std::uint64_t seed, int d, int p) {
  if (d < 1 || p < 4) throw std::invalid_argument("EncoderParams: d >= 1 and p >= 4 required");
  EncoderParams enc;
  enc.d = d;
  enc.p = p;
  enc.w.assign(static_cast<std::size_t>(d) * p, 0.0);
  Rng rng = Rng::substream(seed, "encoder");
  double scale = 1.0 / std::sqrt(static_cast<double>(p));
  for (int r = 0; r < d; ++r)
    for (int k = 0; k < p; ++k) enc.w[static_cast<std::size_t>(r) * p + k] = scale * rng.normal();
  // Channel-group pooling rows: row g averages channel group g. The small
  // gain keeps tanh in its linear range so averaging these embeddings over
  // frames preserves the ordering of the true channel-group means.
  if (d >= 4 && p % 4 == 0) {
    int group = p / 4;
    for (int g = 0; g < 4; ++g) {
      for (int k = 0; k < p; ++k)
        enc.w[static_cast<std::size_t>(g) * p + k] =
            (k >= g * group && k < (g + 1) * group) ? 0.3 / group : 0.0;
    }
  }
  return enc;
}

Vec encode_frame(const EncoderParams& enc, const mmseq::Frame& frame) {
  if (static_cast<int>(frame.features.size()) != enc.p)
    throw std::invalid_argument("encode_frame: frame dimension mismatch");
  Vec e(enc.d);
  for (int r = 0; r < enc.d; ++r) {
    double z = 0.0;
    const double* row = enc.w.data() + static_cast<std::size_t>(r) * enc.p;
    for (int k = 0; k < enc.p; ++k) z += row[k] * frame.features[k];
    e[r] = std::tanh(z);
  }
  return e;
}

PolicyParams PolicyParams::zeros(const PolicyDims& dims) {
  PolicyParams p;
  p.dims = dims;
  p.theta.assign(dims.param_count(), 0.0);
  return p;
}

PolicyParams PolicyParams::random(const PolicyDims& dims, std::uint64_t seed, double scale) {
  PolicyParams p = zeros(dims);
  Rng rng = Rng::substream(seed, "policy-init");
  for (double& x : p.theta) x = scale * rng.normal();
  return p;
}

Vec context_vector(const mmseq::MultimodalSequence& seq, const PolicyParams& params) {
  if (seq.total_len() == 0) throw std::invalid_argument("context_vector: empty sequence");
  const int d = params.dims.d;
  Vec ctx(d, 0.0);
  for (const auto& e : seq.frame_embeddings) {
    if (static_cast<int>(e.size()) != d)
      throw std::invalid_argument("context_vector: embedding dimension mismatch");
    for (int k = 0; k < d; ++k) ctx[k] += e[k];
  }
  for (TokenId t : seq.text_tokens) {
    if (t < 0 || t >= params.dims.V) throw std::invalid_argument("context_vector: token out of range");
    const double* row = params.e_txt_row(t);
    for (int k = 0; k < d; ++k) ctx[k] += row[k];
  }
  double inv = 1.0 / static_cast<double>(seq.total_len());
  for (double& x : ctx) x *= inv;
  return ctx;
}

namespace {

// Hidden activation s = tanh(A ctx + B E_txt[prev] + c).
Vec hidden_state(const PolicyParams& params, const Vec& context, TokenId prev) {
  const int d = params.dims.d, h = params.dims.h;
  const double* A = params.theta.data() + params.off_a();
  const double* B = params.theta.data() + params.off_b_mat();
  const double* c = params.theta.data() + params.off_c();
  const double* e_prev = params.e_txt_row(prev);
  Vec s(h);
  for (int r = 0; r < h; ++r) {
    double z = c[r];
    const double* arow = A + static_cast<std::size_t>(r) * d;
    const double* brow = B + static_cast<std::size_t>(r) * d;
    for (int k = 0; k < d; ++k) z += arow[k] * context[k] + brow[k] * e_prev[k];
    s[r] = std::tanh(z);
  }
  return s;
}

}  // namespace

Vec step_logits(const PolicyParams& params, const Vec& context, TokenId prev) {
  if (prev < 0 || prev >= params.dims.V)
    throw std::invalid_argument("step_logits: prev token out of range");
  const int V = params.dims.V, h = params.dims.h;
  Vec s = hidden_state(params, context, prev);
  const double* U = params.theta.data() + params.off_u();
  const double* b = params.theta.data() + params.off_bias();
  Vec logits(V);
  for (int v = 0; v < V; ++v) {
    double z = b[v];
    const double* urow = U + static_cast<std::size_t>(v) * h;
    for (int r = 0; r < h; ++r) z += urow[r] * s[r];
    logits[v] = z;
  }
  return logits;
}

Rollout sample_rollout(const PolicyParams& params, const mmseq::MultimodalSequence& seq,
                       double temperature, int max_len, Rng& rng) {
  if (temperature <= 0.0) throw std::invalid_argument("sample_rollout: temperature must be > 0");
  if (max_len < 1) throw std::invalid_argument("sample_rollout: max_len must be >= 1");
  Vec ctx = context_vector(seq, params);
  Rollout out;
  TokenId prev = mmseq::Vocab::kEos;  // begin-of-answer marker
  for (int t = 0; t < max_len; ++t) {
    Vec logits = step_logits(params, ctx, prev);
    Vec scaled(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / temperature;
    int tok = rng.categorical(softmax(scaled));
    out.tokens.push_back(tok);
    out.old_logprobs.push_back(log_softmax(logits)[tok]);
    if (tok == mmseq::Vocab::kEos) break;
    prev = tok;
  }
  return out;
}

std::vector<TokenId> greedy_rollout(const PolicyParams& params, const mmseq::MultimodalSequence& seq,
                                    int max_len) {
  if (max_len < 1) throw std::invalid_argument("greedy_rollout: max_len must be >= 1");
  Vec ctx = context_vector(seq, params);
  std::vector<TokenId> tokens;
  TokenId prev = mmseq::Vocab::kEos;
  for (int t = 0; t < max_len; ++t) {
    Vec logits = step_logits(params, ctx, prev);
    TokenId best = 0;
    for (int v = 1; v < params.dims.V; ++v)
      if (logits[v] > logits[best]) best = v;
    tokens.push_back(best);
    if (best == mmseq::Vocab::kEos) break;
    prev = best;
  }
  return tokens;
}

Vec sequence_logprobs(const PolicyParams& params, const mmseq::MultimodalSequence& seq,
                      const std::vector<TokenId>& tokens) {
  if (tokens.empty()) throw std::invalid_argument("sequence_logprobs: tokens empty");
  Vec ctx = context_vector(seq, params);
  Vec out;
  out.reserve(tokens.size());
  TokenId prev = mmseq::Vocab::kEos;
  for (TokenId tok : tokens) {
    if (tok < 0 || tok >= params.dims.V)
      throw std::invalid_argument("sequence_logprobs: token out of range");
    Vec logits = step_logits(params, ctx, prev);
    out.push_back(log_softmax(logits)[tok]);
    prev = tok;
  }
  return out;
}

Vec kl_per_position(const PolicyParams& theta, const PolicyParams& ref,
                    const mmseq::MultimodalSequence& seq, const std::vector<TokenId>& tokens) {
  if (theta.dims.V != ref.dims.V) throw std::invalid_argument("kl_per_position: vocab mismatch");
  Vec ctx_t = context_vector(seq, theta);
  Vec ctx_r = context_vector(seq, ref);
  Vec out;
  out.reserve(tokens.size());
  TokenId prev = mmseq::Vocab::kEos;
  for (TokenId tok : tokens) {
    Vec lp_t = log_softmax(step_logits(theta, ctx_t, prev));
    Vec lp_r = log_softmax(step_logits(ref, ctx_r, prev));
    double kl = 0.0;
    for (int v = 0; v < theta.dims.V; ++v) kl += std::exp(lp_t[v]) * (lp_t[v] - lp_r[v]);
    out.push_back(kl);
    prev = tok;
  }
  return out;
}

GradAccumulator::GradAccumulator(const PolicyParams& params, const mmseq::MultimodalSequence& seq)
    : params_(params),
      seq_(seq),
      context_(context_vector(seq, params)),
      grad_(params.theta.size(), 0.0),
      d_context_(params.dims.d, 0.0) {}

void GradAccumulator::add_position(TokenId prev, const Vec& g_logits) {
  const int V = params_.dims.V, d = params_.dims.d, h = params_.dims.h;
  Vec s = hidden_state(params_, context_, prev);
  const double* U = params_.theta.data() + params_.off_u();
  const double* A = params_.theta.data() + params_.off_a();
  const double* B = params_.theta.data() + params_.off_b_mat();
  const double* e_prev = params_.e_txt_row(prev);

  double* gU = grad_.data() + params_.off_u();
  double* gb = grad_.data() + params_.off_bias();
  double* gA = grad_.data() + params_.off_a();
  double* gB = grad_.data() + params_.off_b_mat();
  double* gc = grad_.data() + params_.off_c();
  double* gE = grad_.data() + params_.off_e_txt();

  // logits = U s + b
  Vec ds(h, 0.0);
  for (int v = 0; v < V; ++v) {
    double g = g_logits[v];
    if (g == 0.0) continue;
    gb[v] += g;
    double* gurow = gU + static_cast<std::size_t>(v) * h;
    const double* urow = U + static_cast<std::size_t>(v) * h;
    for (int r = 0; r < h; ++r) {
      gurow[r] += g * s[r];
      ds[r] += g * urow[r];
    }
  }
  // s = tanh(z), z = A ctx + B e_prev + c
  for (int r = 0; r < h; ++r) {
    double dz = ds[r] * (1.0 - s[r] * s[r]);
    if (dz == 0.0) continue;
    gc[r] += dz;
    double* garow = gA + static_cast<std::size_t>(r) * d;
    double* gbrow = gB + static_cast<std::size_t>(r) * d;
    const double* arow = A + static_cast<std::size_t>(r) * d;
    const double* brow = B + static_cast<std::size_t>(r) * d;
    double* ge_prev = gE + static_cast<std::size_t>(prev) * d;
    for (int k = 0; k < d; ++k) {
      garow[k] += dz * context_[k];
      gbrow[k] += dz * e_prev[k];
      ge_prev[k] += dz * brow[k];
      d_context_[k] += dz * arow[k];
    }
  }
}

Vec GradAccumulator::take() {
  // Context mean: text rows receive d_context / total_len each.
  const int d = params_.dims.d;
  double inv = 1.0 / static_cast<double>(seq_.total_len());
  double* gE = grad_.data() + params_.off_e_txt();
  for (TokenId t : seq_.text_tokens) {
    double* row = gE + static_cast<std::size_t>(t) * d;
    for (int k = 0; k < d; ++k) row[k] += inv * d_context_[k];
  }
  std::fill(d_context_.begin(), d_context_.end(), 0.0);
  return std::move(grad_);
}

void save_checkpoint(const std::string& path, const PolicyParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  std::int32_t header[4] = {params.dims.V, params.dims.d, params.dims.h, params.dims.p};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(params.theta.data()),
            static_cast<std::streamsize>(params.theta.size() * sizeof(double)));
  if (!out) throw std::runtime_error("write failed: " + path);
}

PolicyParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::int32_t header[4];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
  PolicyDims dims{header[0], header[1], header[2], header[3]};
  if (dims.V < 1 || dims.d < 1 || dims.h < 1 || dims.p < 1)
    throw std::runtime_error("bad checkpoint header: " + path);
  PolicyParams params = PolicyParams::zeros(dims);
  in.read(reinterpret_cast<char*>(params.theta.data()),
          static_cast<std::streamsize>(params.theta.size() * sizeof(double)));
  if (!in) throw std::runtime_error("truncated checkpoint payload: " + path);
  return params;
}

}  // namespace lvrl::policy
