#include <optional>
#include <vector>

#include "doctest.h"
#include "lvrl/rewards.hpp"

using namespace lvrl;
using namespace lvrl::mmseq;
using namespace lvrl::rewards;

namespace {

constexpr TokenId TO = Vocab::kThinkOpen;
constexpr TokenId TC = Vocab::kThinkClose;
constexpr TokenId AO = Vocab::kAnsOpen;
constexpr TokenId AC = Vocab::kAnsClose;
constexpr TokenId EOS = Vocab::kEos;
constexpr TokenId PAD = Vocab::kPad;
constexpr TokenId A = 6, B = 7, C = 8, D = 9;

// Independent recognizer built as a hand-rolled state machine, no shared
// code with parse_format.
std::optional<TokenId> recognize(const std::vector<TokenId>& toks, const Vocab& vocab) {
  auto special = [&](TokenId t) {
    return t == TO || t == TC || t == AO || t == AC || t == EOS || t == PAD;
  };
  std::size_t i = 0;
  auto eat = [&](TokenId want) {
    if (i >= toks.size() || toks[i] != want) return false;
    ++i;
    return true;
  };
  if (!eat(TO)) return std::nullopt;
  while (i < toks.size() && !special(toks[i])) {
    if (!vocab.valid(toks[i])) return std::nullopt;
    ++i;
  }
  if (!eat(TC)) return std::nullopt;
  if (!eat(AO)) return std::nullopt;
  if (i >= toks.size() || !vocab.is_answer_letter(toks[i])) return std::nullopt;
  TokenId letter = toks[i++];
  if (!eat(AC)) return std::nullopt;
  if (i < toks.size() && toks[i] == EOS) ++i;
  if (i != toks.size()) return std::nullopt;
  return letter;
}

}  // namespace

TEST_CASE("parse_format accepts the canonical shapes") {
  Vocab v(32);
  auto r = parse_format({TO, 15, 20, TC, AO, B, AC, EOS}, v);
  REQUIRE(r.has_value());
  CHECK(r->answer == B);
  CHECK(r->think_begin == 1);
  CHECK(r->think_end == 3);

  CHECK(parse_format({TO, TC, AO, A, AC}, v).has_value());       // empty think, no EOS
  CHECK(parse_format({TO, 10, TC, AO, D, AC, EOS}, v).has_value());
  CHECK(parse_format({TO, A, B, TC, AO, C, AC}, v).has_value());  // letters legal as content
}

TEST_CASE("parse_format rejects deviations") {
  Vocab v(32);
  CHECK_FALSE(parse_format({}, v).has_value());
  CHECK_FALSE(parse_format({AO, A, AC}, v).has_value());                  // no think block
  CHECK_FALSE(parse_format({TO, 15, AO, A, AC}, v).has_value());          // unclosed think
  CHECK_FALSE(parse_format({TO, 15, TC, A, AC}, v).has_value());          // missing answer open
  CHECK_FALSE(parse_format({TO, 15, TC, AO, AC}, v).has_value());         // empty answer
  CHECK_FALSE(parse_format({TO, 15, TC, AO, 15, AC}, v).has_value());     // non-letter answer
  CHECK_FALSE(parse_format({TO, 15, TC, AO, A, B, AC}, v).has_value());   // two answers
  CHECK_FALSE(parse_format({TO, 15, TC, AO, A, AC, 15}, v).has_value());  // trailing junk
  CHECK_FALSE(parse_format({TO, 15, TC, AO, A, AC, EOS, EOS}, v).has_value());
  CHECK_FALSE(parse_format({TO, PAD, TC, AO, A, AC}, v).has_value());     // PAD in content
  CHECK_FALSE(parse_format({TO, EOS, TC, AO, A, AC}, v).has_value());     // EOS in content
  CHECK_FALSE(parse_format({AO, A, AC, TO, TC}, v).has_value());          // reordered blocks
  CHECK_FALSE(parse_format({TO, 15, TC, TO, TC, AO, A, AC}, v).has_value());
}

TEST_CASE("parse_format agrees with an independent recognizer on random token strings") {
  Vocab v(32);
  Rng rng(2024);
  // Mix of alphabet-weighted random strings; tags drawn often so the
  // grammar boundary region is well covered.
  for (int trial = 0; trial < 10000; ++trial) {
    int len = static_cast<int>(rng.uniform() * 10);
    std::vector<TokenId> toks;
    for (int i = 0; i < len; ++i) {
      double u = rng.uniform();
      if (u < 0.55)
        toks.push_back(static_cast<TokenId>(rng.uniform() * 6));  // specials + PAD/EOS
      else if (u < 0.8)
        toks.push_back(static_cast<TokenId>(6 + rng.uniform() * 4));  // letters
      else
        toks.push_back(static_cast<TokenId>(10 + rng.uniform() * 22));  // content
    }
    auto got = parse_format(toks, v);
    auto want = recognize(toks, v);
    REQUIRE(got.has_value() == want.has_value());
    if (want) CHECK(got->answer == *want);
  }
}

TEST_CASE("parse_format_text mirrors the token grammar") {
  auto ok = parse_format_text("<think>t15</think><answer>B</answer><eos>");
  REQUIRE(ok.has_value());
  CHECK(ok->first == "t15");
  CHECK(ok->second == 'B');

  auto empty = parse_format_text("<think></think><answer>A</answer>");
  REQUIRE(empty.has_value());
  CHECK(empty->first.empty());

  CHECK_FALSE(parse_format_text("").has_value());
  CHECK_FALSE(parse_format_text("<answer>A</answer>").has_value());
  CHECK_FALSE(parse_format_text("<think>x</think><answer>E</answer>").has_value());
  CHECK_FALSE(parse_format_text("<think>x</think><answer>AB</answer>").has_value());
  CHECK_FALSE(parse_format_text("<think>x</think><answer>A</answer>junk").has_value());
  CHECK_FALSE(parse_format_text("<think><answer>A</answer></think>").has_value());
  // content containing a tag literal is rejected
  CHECK_FALSE(parse_format_text("<think>a<eos>b</think><answer>A</answer>").has_value());
}

TEST_CASE("score weights and gating") {
  Vocab v(32);
  RewardConfig cfg;  // w_acc 1.0, w_fmt 0.5
  std::vector<TokenId> good = {TO, 15, TC, AO, B, AC, EOS};

  auto right = score(good, v, B, cfg);
  CHECK(right.format == 1.0);
  CHECK(right.accuracy == 1.0);
  CHECK(right.total == doctest::Approx(1.5));
  REQUIRE(right.extracted_answer.has_value());
  CHECK(*right.extracted_answer == B);

  auto wrong = score(good, v, C, cfg);
  CHECK(wrong.format == 1.0);
  CHECK(wrong.accuracy == 0.0);
  CHECK(wrong.total == doctest::Approx(0.5));

  // Correct letter present but malformed: accuracy is gated on format.
  auto malformed = score({AO, B, AC}, v, B, cfg);
  CHECK(malformed.format == 0.0);
  CHECK(malformed.accuracy == 0.0);
  CHECK(malformed.total == 0.0);
  CHECK_FALSE(malformed.extracted_answer.has_value());

  RewardConfig alt{2.0, 0.25};
  CHECK(score(good, v, B, alt).total == doctest::Approx(2.25));
  CHECK(score(good, v, C, alt).total == doctest::Approx(0.25));
}

TEST_CASE("score rejects a non-letter gold") {
  Vocab v(32);
  CHECK_THROWS_AS(score({TO, TC, AO, A, AC}, v, TokenId{15}, RewardConfig{}),
                  std::invalid_argument);
}

TEST_CASE("accuracy never exceeds format over random strings") {
  Vocab v(32);
  Rng rng(9);
  RewardConfig cfg;
  for (int trial = 0; trial < 2000; ++trial) {
    int len = static_cast<int>(rng.uniform() * 9);
    std::vector<TokenId> toks;
    for (int i = 0; i < len; ++i) toks.push_back(static_cast<TokenId>(rng.uniform() * 32));
    auto r = score(toks, v, B, cfg);
    CHECK(r.accuracy <= r.format);
    CHECK(r.total == doctest::Approx(cfg.w_acc * r.accuracy + cfg.w_fmt * r.format));
  }
}
