#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lvrl/common.hpp"

namespace lvrl::mmseq {

// Reserved token ids. Content tokens occupy [kContentBase, vocab size).
struct Vocab {
  int size = 32;

  static constexpr TokenId kPad = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kThinkOpen = 2;
  static constexpr TokenId kThinkClose = 3;
  static constexpr TokenId kAnsOpen = 4;
  static constexpr TokenId kAnsClose = 5;
  static constexpr TokenId kAnswerA = 6;  // A..D are 6..9
  static constexpr int kNumAnswerLetters = 4;
  static constexpr TokenId kContentBase = kAnswerA + kNumAnswerLetters;

  explicit Vocab(int v = 32) : size(v) {
    if (v < 16) throw std::invalid_argument("Vocab: size must be >= 16");
  }

  bool valid(TokenId t) const { return t >= 0 && t < size; }
  bool is_answer_letter(TokenId t) const {
    return t >= kAnswerA && t < kAnswerA + kNumAnswerLetters;
  }
  static TokenId answer_letter(int idx) { return kAnswerA + idx; }
  static int answer_index(TokenId t) { return t - kAnswerA; }

  std::string render(TokenId t) const;
  std::string render(const std::vector<TokenId>& tokens) const;
};

struct Frame {
  Vec features;
};

struct Video {
  std::string id;
  std::uint64_t seed = 0;
  int feature_dim = 0;
  std::vector<Frame> frames;
};

enum class TaskFamily { ArgmaxChannel, TemporalHalf };
enum class Difficulty { Unlabeled, Easy, Medium, Hard };

std::string to_string(TaskFamily f);
TaskFamily family_from_string(const std::string& s);
std::string to_string(Difficulty d);
Difficulty difficulty_from_string(const std::string& s);

struct Sample {
  std::string id;
  std::string video_id;
  std::uint64_t video_seed = 0;
  int num_frames = 0;
  int feature_dim = 0;
  TaskFamily family = TaskFamily::ArgmaxChannel;
  std::vector<TokenId> question_tokens;
  std::vector<TokenId> choices;
  TokenId gold_answer = 0;
  Difficulty difficulty = Difficulty::Unlabeled;
};

// Frame embeddings first, then question tokens.
struct MultimodalSequence {
  std::vector<Vec> frame_embeddings;
  std::vector<TokenId> text_tokens;

  std::size_t total_len() const { return frame_embeddings.size() + text_tokens.size(); }
};

// Deterministic synthetic video: entries in [-1, 1] from a seeded PRNG.
Video gen_video(std::uint64_t seed, int num_frames, int feature_dim);

// Analytic gold labels, no model involved.
//   ArgmaxChannel: pool frames by mean, split into 4 contiguous channel
//   groups, gold = letter of the group with max mean (ties -> lowest letter).
//   TemporalHalf:  gold = A if the first half's energy exceeds the second
//   half's, else B (tie -> B). For odd frame counts the middle frame is
//   excluded so reversal exactly swaps the halves.
Sample gen_task(const Video& video, TaskFamily family);

MultimodalSequence build_sequence(std::vector<Vec> frame_embeddings, const Sample& sample);

// JSONL dataset file, one sample per line.
void save_dataset(const std::string& path, const std::vector<Sample>& samples);
std::vector<Sample> load_dataset(const std::string& path);

std::string sample_to_json(const Sample& s);
Sample sample_from_json(const std::string& line);

// Regenerate the sample's video from its recorded seed.
Video video_for(const Sample& s);

}  // namespace lvrl::mmseq
