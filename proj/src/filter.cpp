#include "lvrl/filter.hpp"

#include <omp.h>

#include "json.hpp"

namespace lvrl::filter {

mmseq::Difficulty label_for(int n_correct, int n_runs) {
  if (n_correct < 0 || n_correct > n_runs) throw std::invalid_argument("label_for: bad counts");
  if (n_correct == n_runs) return mmseq::Difficulty::Easy;
  if (n_correct == 0) return mmseq::Difficulty::Hard;
  return mmseq::Difficulty::Medium;
}

ProbeResult probe(const AnswerModel& model, const mmseq::Sample& sample,
                  const mmseq::Vocab& vocab, int n_runs, Rng& rng) {
  if (n_runs < 1) throw std::invalid_argument("probe: n_runs must be >= 1");
  ProbeResult result;
  result.sample_id = sample.id;
  result.n_runs = n_runs;
  rewards::RewardConfig cfg;
  for (int i = 0; i < n_runs; ++i) {
    auto tokens = model(sample, rng);
    if (rewards::score(tokens, vocab, sample.gold_answer, cfg).accuracy == 1.0)
      ++result.n_correct;
  }
  result.label = label_for(result.n_correct, n_runs);
  return result;
}

std::vector<ProbeResult> probe_dataset(const AnswerModel& model,
                                       const std::vector<mmseq::Sample>& samples,
                                       const mmseq::Vocab& vocab, int n_runs,
                                       std::uint64_t base_seed) {
  std::vector<ProbeResult> results(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(samples.size()); ++i) {
    Rng rng = Rng::substream(base_seed, "probe:" + samples[i].id);
    results[i] = probe(model, samples[i], vocab, n_runs, rng);
  }
  return results;
}

namespace {

std::pair<std::vector<mmseq::Sample>, FilterSummary> apply(
    std::vector<mmseq::Sample> samples, const std::vector<ProbeResult>& probes,
    const std::function<bool(const ProbeResult&)>& keep) {
  std::unordered_map<std::string, const ProbeResult*> by_id;
  for (const auto& p : probes) by_id[p.sample_id] = &p;

  FilterSummary summary;
  std::vector<mmseq::Sample> retained;
  for (auto& s : samples) {
    auto it = by_id.find(s.id);
    if (it == by_id.end()) throw std::logic_error("filter_dataset: unprobed sample " + s.id);
    const ProbeResult& p = *it->second;
    s.difficulty = p.label;
    switch (p.label) {
      case mmseq::Difficulty::Easy: ++summary.easy; break;
      case mmseq::Difficulty::Medium: ++summary.medium; break;
      case mmseq::Difficulty::Hard: ++summary.hard; break;
      default: break;
    }
    if (keep(p)) retained.push_back(s);
  }
  summary.retained = static_cast<int>(retained.size());
  return {std::move(retained), summary};
}

}  // namespace

std::pair<std::vector<mmseq::Sample>, FilterSummary> filter_dataset(
    std::vector<mmseq::Sample> samples, const std::vector<ProbeResult>& probes,
    const std::set<mmseq::Difficulty>& keep) {
  return apply(std::move(samples), probes,
               [&](const ProbeResult& p) { return keep.count(p.label) > 0; });
}

std::pair<std::vector<mmseq::Sample>, FilterSummary> filter_dataset_band(
    std::vector<mmseq::Sample> samples, const std::vector<ProbeResult>& probes, int lo, int hi) {
  return apply(std::move(samples), probes, [&](const ProbeResult& p) {
    return p.n_correct >= lo && p.n_correct <= hi;
  });
}

std::string probe_to_json(const ProbeResult& p) {
  nlohmann::ordered_json j;
  j["sample_id"] = p.sample_id;
  j["n_runs"] = p.n_runs;
  j["n_correct"] = p.n_correct;
  j["label"] = mmseq::to_string(p.label);
  return j.dump();
}

}  // namespace lvrl::filter
