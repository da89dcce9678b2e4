#pragma once

#include <functional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "lvrl/common.hpp"
#include "lvrl/mmseq.hpp"
#include "lvrl/rewards.hpp"

namespace lvrl::filter {

struct ProbeResult {
  std::string sample_id;
  int n_runs = 0;
  int n_correct = 0;
  mmseq::Difficulty label = mmseq::Difficulty::Unlabeled;
};

// Label rule: Easy iff all runs correct, Hard iff none, Medium otherwise.
mmseq::Difficulty label_for(int n_correct, int n_runs);

// Abstract answer-producing interface: returns the response tokens for a
// sample. Stubs with forced outcomes drive the deterministic tests.
using AnswerModel = std::function<std::vector<TokenId>(const mmseq::Sample&, Rng&)>;

// n_runs stochastic attempts; a run counts correct iff the accuracy
// reward is 1 (so malformed output counts as incorrect).
ProbeResult probe(const AnswerModel& model, const mmseq::Sample& sample,
                  const mmseq::Vocab& vocab, int n_runs, Rng& rng);

// Probes every sample; distinct samples run concurrently on per-sample
// PRNG substreams derived from base_seed.
std::vector<ProbeResult> probe_dataset(const AnswerModel& model,
                                       const std::vector<mmseq::Sample>& samples,
                                       const mmseq::Vocab& vocab, int n_runs,
                                       std::uint64_t base_seed);

struct FilterSummary {
  int easy = 0;
  int medium = 0;
  int hard = 0;
  int retained = 0;
};

// Writes the probed difficulty onto every sample and returns those whose
// label is in `keep` (default {Medium}).
std::pair<std::vector<mmseq::Sample>, FilterSummary> filter_dataset(
    std::vector<mmseq::Sample> samples, const std::vector<ProbeResult>& probes,
    const std::set<mmseq::Difficulty>& keep = {mmseq::Difficulty::Medium});

// Band variant: keep samples with lo <= n_correct <= hi. Defaults lo=1,
// hi=n-1 coincide with the Medium label.
std::pair<std::vector<mmseq::Sample>, FilterSummary> filter_dataset_band(
    std::vector<mmseq::Sample> samples, const std::vector<ProbeResult>& probes, int lo, int hi);

std::string probe_to_json(const ProbeResult& p);

}  // namespace lvrl::filter
