#include "lvrl/mmseq.hpp"

#include <fstream>

#include "json.hpp"

namespace lvrl::mmseq {

std::string Vocab::render(TokenId t) const {
  if (!valid(t)) throw std::invalid_argument("Vocab::render: token out of range");
  switch (t) {
    case kPad: return "<pad>";
    case kEos: return "<eos>";
    case kThinkOpen: return "<think>";
    case kThinkClose: return "</think>";
    case kAnsOpen: return "<answer>";
    case kAnsClose: return "</answer>";
    default: break;
  }
  if (is_answer_letter(t)) return std::string(1, static_cast<char>('A' + answer_index(t)));
  return "t" + std::to_string(t);
}

std::string Vocab::render(const std::vector<TokenId>& tokens) const {
  std::string out;
  for (TokenId t : tokens) out += render(t);
  return out;
}

std::string to_string(TaskFamily f) {
  return f == TaskFamily::ArgmaxChannel ? "argmax_channel" : "temporal_half";
}

TaskFamily family_from_string(const std::string& s) {
  if (s == "argmax_channel") return TaskFamily::ArgmaxChannel;
  if (s == "temporal_half") return TaskFamily::TemporalHalf;
  throw std::invalid_argument("unknown task family: " + s);
}

std::string to_string(Difficulty d) {
  switch (d) {
    case Difficulty::Unlabeled: return "unlabeled";
    case Difficulty::Easy: return "easy";
    case Difficulty::Medium: return "medium";
    case Difficulty::Hard: return "hard";
  }
  throw std::logic_error("bad difficulty");
}

Difficulty difficulty_from_string(const std::string& s) {
  if (s == "unlabeled") return Difficulty::Unlabeled;
  if (s == "easy") return Difficulty::Easy;
  if (s == "medium") return Difficulty::Medium;
  if (s == "hard") return Difficulty::Hard;
  throw std::invalid_argument("unknown difficulty: " + s);
}

Video gen_video(std::uint64_t seed, int num_frames, int feature_dim) {
  if (num_frames < 1) throw std::invalid_argument("gen_video: num_frames must be >= 1");
  if (feature_dim < 4) throw std::invalid_argument("gen_video: feature_dim must be >= 4");
  Video v;
  v.seed = seed;
  v.feature_dim = feature_dim;
  v.id = "v" + std::to_string(seed) + "f" + std::to_string(num_frames);
  Rng rng = Rng::substream(seed, "video");
  v.frames.resize(num_frames);
  for (auto& frame : v.frames) {
    frame.features.resize(feature_dim);
    for (double& x : frame.features) x = 2.0 * rng.uniform() - 1.0;
  }
  return v;
}

namespace {

// Per-family fixed question templates (content-token ids).
const std::vector<TokenId> kArgmaxQuestion = {10, 11, 12};
const std::vector<TokenId> kTemporalQuestion = {10, 13, 14};

Vec pooled_mean(const Video& video) {
  Vec pooled(video.feature_dim, 0.0);
  for (const auto& f : video.frames)
    for (int k = 0; k < video.feature_dim; ++k) pooled[k] += f.features[k];
  for (double& x : pooled) x /= static_cast<double>(video.frames.size());
  return pooled;
}

double energy(const std::vector<Frame>& frames, std::size_t begin, std::size_t end) {
  double e = 0.0;
  for (std::size_t i = begin; i < end; ++i)
    for (double x : frames[i].features) e += x * x;
  return e;
}

}  // namespace

Sample gen_task(const Video& video, TaskFamily family) {
  if (video.frames.empty()) throw std::invalid_argument("gen_task: empty video");
  Sample s;
  s.video_id = video.id;
  s.video_seed = video.seed;
  s.num_frames = static_cast<int>(video.frames.size());
  s.feature_dim = video.feature_dim;
  s.family = family;
  s.id = to_string(family) + "_" + video.id;

  if (family == TaskFamily::ArgmaxChannel) {
    if (video.feature_dim % 4 != 0)
      throw std::invalid_argument("gen_task: ArgmaxChannel requires feature_dim divisible by 4");
    Vec pooled = pooled_mean(video);
    int group = video.feature_dim / 4;
    int best = 0;
    double best_mean = -1e300;
    for (int g = 0; g < 4; ++g) {
      double m = 0.0;
      for (int k = 0; k < group; ++k) m += pooled[g * group + k];
      m /= group;
      if (m > best_mean) {  // ties keep the lowest letter
        best_mean = m;
        best = g;
      }
    }
    s.question_tokens = kArgmaxQuestion;
    s.choices = {Vocab::answer_letter(0), Vocab::answer_letter(1), Vocab::answer_letter(2),
                 Vocab::answer_letter(3)};
    s.gold_answer = Vocab::answer_letter(best);
  } else {
    std::size_t n = video.frames.size();
    std::size_t half = n / 2;  // odd n: middle frame excluded from both halves
    double first = energy(video.frames, 0, half);
    double second = energy(video.frames, n - half, n);
    s.question_tokens = kTemporalQuestion;
    s.choices = {Vocab::answer_letter(0), Vocab::answer_letter(1)};
    s.gold_answer = first > second ? Vocab::answer_letter(0) : Vocab::answer_letter(1);
  }
  return s;
}

MultimodalSequence build_sequence(std::vector<Vec> frame_embeddings, const Sample& sample) {
  if (frame_embeddings.empty())
    throw std::invalid_argument("build_sequence: at least one frame embedding required");
  std::size_t dim = frame_embeddings.front().size();
  for (const auto& e : frame_embeddings)
    if (e.size() != dim) throw std::invalid_argument("build_sequence: embedding dimension mismatch");
  if (sample.question_tokens.empty())
    throw std::invalid_argument("build_sequence: question tokens required");
  MultimodalSequence seq;
  seq.frame_embeddings = std::move(frame_embeddings);
  seq.text_tokens = sample.question_tokens;
  return seq;
}

std::string sample_to_json(const Sample& s) {
  nlohmann::ordered_json j;
  j["id"] = s.id;
  j["video_seed"] = s.video_seed;
  j["num_frames"] = s.num_frames;
  j["feature_dim"] = s.feature_dim;
  j["family"] = to_string(s.family);
  j["question_tokens"] = s.question_tokens;
  j["choices"] = s.choices;
  j["gold_answer"] = s.gold_answer;
  j["difficulty"] = to_string(s.difficulty);
  return j.dump();
}

Sample sample_from_json(const std::string& line) {
  auto j = nlohmann::json::parse(line);
  Sample s;
  s.id = j.at("id").get<std::string>();
  s.video_seed = j.at("video_seed").get<std::uint64_t>();
  s.num_frames = j.at("num_frames").get<int>();
  s.feature_dim = j.at("feature_dim").get<int>();
  s.family = family_from_string(j.at("family").get<std::string>());
  s.question_tokens = j.at("question_tokens").get<std::vector<TokenId>>();
  s.choices = j.at("choices").get<std::vector<TokenId>>();
  s.gold_answer = j.at("gold_answer").get<TokenId>();
  s.difficulty = difficulty_from_string(j.at("difficulty").get<std::string>());
  s.video_id = "v" + std::to_string(s.video_seed) + "f" + std::to_string(s.num_frames);
  return s;
}

void save_dataset(const std::string& path, const std::vector<Sample>& samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& s : samples) out << sample_to_json(s) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<Sample> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::vector<Sample> samples;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      samples.push_back(sample_from_json(line));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return samples;
}

Video video_for(const Sample& s) { return gen_video(s.video_seed, s.num_frames, s.feature_dim); }

}  // namespace lvrl::mmseq
