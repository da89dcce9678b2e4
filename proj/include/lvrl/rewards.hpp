#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lvrl/common.hpp"
#include "lvrl/mmseq.hpp"

namespace lvrl::rewards {

struct RewardBreakdown {
  double format = 0.0;
  double accuracy = 0.0;
  double total = 0.0;
  std::optional<TokenId> extracted_answer;
};

struct RewardConfig {
  double w_acc = 1.0;
  double w_fmt = 0.5;
};

struct ParsedFormat {
  std::size_t think_begin = 0;  // [think_begin, think_end) indexes the content span
  std::size_t think_end = 0;
  TokenId answer = 0;
};

// Accepts exactly:
//   THINK_OPEN content* THINK_CLOSE ANS_OPEN letter ANS_CLOSE [EOS]
// where content tokens are anything except the four tags, EOS, and PAD.
// Any deviation (missing or reordered tags, multiple answers, trailing
// tokens) yields nullopt.
std::optional<ParsedFormat> parse_format(const std::vector<TokenId>& tokens,
                                         const mmseq::Vocab& vocab);

// Same grammar over rendered text: "<think>" content "</think>"
// "<answer>" letter "</answer>" optional "<eos>". Content may not contain
// any tag literal. Returns (content, letter).
std::optional<std::pair<std::string, char>> parse_format_text(const std::string& text);

// format = 1 iff the grammar matches; accuracy = 1 iff the extracted
// answer equals gold (so accuracy is gated on format).
RewardBreakdown score(const std::vector<TokenId>& tokens, const mmseq::Vocab& vocab,
                      TokenId gold_answer, const RewardConfig& cfg);

}  // namespace lvrl::rewards
