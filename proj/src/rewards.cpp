#include "lvrl/rewards.hpp"

namespace lvrl::rewards {

namespace {

bool is_content(TokenId t, const mmseq::Vocab& vocab) {
  if (!vocab.valid(t)) return false;
  switch (t) {
    case mmseq::Vocab::kPad:
    case mmseq::Vocab::kEos:
    case mmseq::Vocab::kThinkOpen:
    case mmseq::Vocab::kThinkClose:
    case mmseq::Vocab::kAnsOpen:
    case mmseq::Vocab::kAnsClose:
      return false;
    default:
      return true;
  }
}

}  // namespace

std::optional<ParsedFormat> parse_format(const std::vector<TokenId>& tokens,
                                         const mmseq::Vocab& vocab) {
  std::size_t i = 0;
  const std::size_t n = tokens.size();
  auto expect = [&](TokenId t) {
    if (i < n && tokens[i] == t) {
      ++i;
      return true;
    }
    return false;
  };

  if (!expect(mmseq::Vocab::kThinkOpen)) return std::nullopt;
  ParsedFormat out;
  out.think_begin = i;
  while (i < n && is_content(tokens[i], vocab)) ++i;
  out.think_end = i;
  if (!expect(mmseq::Vocab::kThinkClose)) return std::nullopt;
  if (!expect(mmseq::Vocab::kAnsOpen)) return std::nullopt;
  if (i >= n || !vocab.is_answer_letter(tokens[i])) return std::nullopt;
  out.answer = tokens[i++];
  if (!expect(mmseq::Vocab::kAnsClose)) return std::nullopt;
  if (i < n && tokens[i] == mmseq::Vocab::kEos) ++i;
  if (i != n) return std::nullopt;
  return out;
}

std::optional<std::pair<std::string, char>> parse_format_text(const std::string& text) {
  static const std::string kTags[] = {"<think>", "</think>", "<answer>", "</answer>", "<eos>",
                                      "<pad>"};
  std::size_t i = 0;
  auto expect = [&](const std::string& lit) {
    if (text.compare(i, lit.size(), lit) == 0) {
      i += lit.size();
      return true;
    }
    return false;
  };

  if (!expect("<think>")) return std::nullopt;
  std::size_t close = text.find("</think>", i);
  if (close == std::string::npos) return std::nullopt;
  std::string content = text.substr(i, close - i);
  for (const auto& tag : kTags)
    if (content.find(tag) != std::string::npos) return std::nullopt;
  i = close;
  expect("</think>");
  if (!expect("<answer>")) return std::nullopt;
  if (i >= text.size() || text[i] < 'A' || text[i] > 'D') return std::nullopt;
  char letter = text[i++];
  if (!expect("</answer>")) return std::nullopt;
  if (i < text.size()) expect("<eos>");
  if (i != text.size()) return std::nullopt;
  return std::make_pair(content, letter);
}

RewardBreakdown score(const std::vector<TokenId>& tokens, const mmseq::Vocab& vocab,
                      TokenId gold_answer, const RewardConfig& cfg) {
  if (!vocab.is_answer_letter(gold_answer))
    throw std::invalid_argument("score: gold_answer must be an answer letter");
  RewardBreakdown r;
  auto parsed = parse_format(tokens, vocab);
  if (parsed) {
    r.format = 1.0;
    r.extracted_answer = parsed->answer;
    r.accuracy = parsed->answer == gold_answer ? 1.0 : 0.0;
  }
  r.total = cfg.w_acc * r.accuracy + cfg.w_fmt * r.format;
  return r;
}

}  // namespace lvrl::rewards
