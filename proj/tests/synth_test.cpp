#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "flare/synth.hpp"

using flare::CipherLanguage;
using flare::Direction;
using flare::TaskInstance;
using flare::TaskKind;
using flare::VocabLayout;

namespace {

TEST(CipherLanguage, BijectionWithReservedFixedPoints) {
  auto lang = CipherLanguage::make("cipher-a", 0.1, 64, 42);
  std::set<int> seen(lang.perm.begin(), lang.perm.end());
  EXPECT_EQ(seen.size(), 64u);  // bijection
  EXPECT_EQ(lang.perm[VocabLayout::pad], VocabLayout::pad);
  EXPECT_EQ(lang.perm[VocabLayout::sep], VocabLayout::sep);
  EXPECT_EQ(lang.perm[VocabLayout::query_marker], VocabLayout::query_marker);
  for (int i = 0; i < 64; ++i) EXPECT_EQ(lang.inv_perm[lang.perm[i]], i);
  // stable across constructions, different per name
  auto again = CipherLanguage::make("cipher-a", 0.1, 64, 42);
  EXPECT_EQ(lang.perm, again.perm);
  auto other = CipherLanguage::make("cipher-b", 0.1, 64, 42);
  EXPECT_NE(lang.perm, other.perm);
}

TEST(ApplyCipher, PerfectQualityNoSwapsRoundTrips) {
  auto lang = CipherLanguage::make("cipher-a", 0.0, 64, 7);
  TaskInstance inst;
  inst.id = 3;
  inst.tokens = {5, 2, 9, 33, 63, 0};
  inst.label = 1;
  auto fwd = flare::apply_cipher(lang, inst, Direction::to_target, 1.0, 11);
  EXPECT_EQ(fwd.language, "cipher-a");
  EXPECT_EQ(fwd.tokens[1], 2);  // reserved id untouched
  EXPECT_EQ(fwd.tokens[5], 0);
  EXPECT_NE(fwd.tokens, inst.tokens);
  auto back = flare::apply_cipher(lang, fwd, Direction::to_english, 1.0, 12);
  EXPECT_EQ(back.tokens, inst.tokens);
  EXPECT_EQ(back.label, 1);
  EXPECT_EQ(back.language, "en");
}

TEST(ApplyCipher, QualityControlsCorruptionRate) {
  auto lang = CipherLanguage::make("cipher-a", 0.0, 64, 7);
  TaskInstance inst;
  inst.tokens.assign(2000, 10);
  auto noisy = flare::apply_cipher(lang, inst, Direction::to_target, 0.8, 5);
  int mapped = 0;
  for (int t : noisy.tokens) mapped += (t == lang.perm[10]);
  // Around 80% mapped faithfully (a corrupt draw can also hit perm[10]).
  EXPECT_GT(mapped, 1500);
  EXPECT_LT(mapped, 1900);
  auto clean = flare::apply_cipher(lang, inst, Direction::to_target, 1.0, 5);
  for (int t : clean.tokens) EXPECT_EQ(t, lang.perm[10]);
}

TEST(ApplyCipher, SwapRateOneSwapsDisjointAdjacentPairs) {
  auto lang = CipherLanguage::make("cipher-a", 1.0, 64, 7);
  TaskInstance inst;
  inst.tokens = {10, 11, 12, 13, 14, 15};
  auto out = flare::apply_cipher(lang, inst, Direction::to_target, 1.0, 3);
  // pairs (0,1), (2,3), (4,5) swap; mapping applied first
  auto pi = [&](int t) { return lang.perm[t]; };
  std::vector<int> want{pi(11), pi(10), pi(13), pi(12), pi(15), pi(14)};
  EXPECT_EQ(out.tokens, want);
}

TEST(ApplyCipher, ReservedTokensNeverMove) {
  auto lang = CipherLanguage::make("cipher-a", 1.0, 64, 7);
  TaskInstance inst;
  inst.tokens = {10, 2, 12, 13};
  auto out = flare::apply_cipher(lang, inst, Direction::to_target, 1.0, 3);
  EXPECT_EQ(out.tokens[1], 2);          // query marker pinned
  EXPECT_EQ(out.tokens[0], lang.perm[10]);  // pair (0,1) blocked by marker
  EXPECT_EQ(out.tokens[2], lang.perm[13]);  // pair (2,3) swapped
  EXPECT_EQ(out.tokens[3], lang.perm[12]);
}

TEST(ApplyCipher, SpanReProjection) {
  auto lang = CipherLanguage::make("cipher-a", 1.0, 64, 7);
  TaskInstance inst;
  inst.tokens = {10, 11, 12, 13, 14, 15};
  inst.span = {2, 3};  // swap (2,3) happens inside the span: still contiguous
  auto ok = flare::apply_cipher(lang, inst, Direction::to_target, 1.0, 3);
  EXPECT_TRUE(ok.span_valid);
  EXPECT_EQ(ok.span, (flare::Span{2, 3}));

  inst.span = {1, 2};  // swaps (0,1) and (2,3) tear the span apart
  auto broken = flare::apply_cipher(lang, inst, Direction::to_target, 1.0, 3);
  EXPECT_FALSE(broken.span_valid);

  auto langq = CipherLanguage::make("cipher-a", 0.0, 64, 7);
  inst.span = {1, 2};
  auto still = flare::apply_cipher(langq, inst, Direction::to_target, 1.0, 3);
  EXPECT_TRUE(still.span_valid);
  EXPECT_EQ(still.span, (flare::Span{1, 2}));
}

TEST(ApplyCipher, DeterministicInSeed) {
  auto lang = CipherLanguage::make("cipher-a", 0.3, 64, 7);
  TaskInstance inst;
  inst.tokens = {10, 11, 12, 13, 14, 15, 16, 17};
  auto a = flare::apply_cipher(lang, inst, Direction::to_target, 0.7, 9);
  auto b = flare::apply_cipher(lang, inst, Direction::to_target, 0.7, 9);
  auto c = flare::apply_cipher(lang, inst, Direction::to_target, 0.7, 10);
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_NE(a.tokens, c.tokens);
}

TEST(GenerateCorpus, ClassificationInvariants) {
  auto corpus = flare::generate_task_corpus(TaskKind::classification, 300, 5);
  std::vector<int> counts(3, 0);
  for (const auto& inst : corpus) {
    ASSERT_GE(inst.label, 0);
    ASSERT_LT(inst.label, 3);
    counts[inst.label]++;
    EXPECT_EQ(inst.tokens.size(), 12u);
    flare::GenOptions opt;
    int evidence_hi =
        VocabLayout::first_content + 3 * opt.evidence_per_class;
    int own_lo =
        VocabLayout::first_content + inst.label * opt.evidence_per_class;
    int own_markers = 0;
    int other_markers = 0;
    for (int t : inst.tokens) {
      EXPECT_GE(t, VocabLayout::first_content);
      EXPECT_LT(t, 64);
      if (t >= VocabLayout::first_content && t < evidence_hi) {
        if (t >= own_lo && t < own_lo + opt.evidence_per_class)
          ++own_markers;
        else
          ++other_markers;
      }
    }
    EXPECT_EQ(own_markers, opt.marker_count);
    EXPECT_EQ(other_markers, 0);
  }
  EXPECT_EQ(counts[0], 100);
  EXPECT_EQ(counts[1], 100);
  EXPECT_EQ(counts[2], 100);
}

TEST(GenerateCorpus, SpanInvariants) {
  flare::GenOptions opt;
  auto corpus = flare::generate_task_corpus(TaskKind::span, 200, 6, opt);
  for (const auto& inst : corpus) {
    ASSERT_GE(inst.span.start, 0);
    ASSERT_LE(inst.span.end, opt.seq_len - 1);
    ASSERT_LE(inst.span.start, inst.span.end);
    EXPECT_LE(inst.span.end - inst.span.start + 1, opt.max_span_len);
    EXPECT_EQ(inst.tokens[inst.span.start - 1], VocabLayout::query_marker);
    int answer_lo = opt.vocab_size - opt.answer_vocab;
    for (int k = 0; k < opt.seq_len; ++k) {
      bool in_span = k >= inst.span.start && k <= inst.span.end;
      if (in_span) {
        EXPECT_GE(inst.tokens[k], answer_lo);
      } else if (k != inst.span.start - 1) {
        EXPECT_LT(inst.tokens[k], answer_lo);  // answer block only in the span
      }
    }
  }
  // determinism
  auto again = flare::generate_task_corpus(TaskKind::span, 200, 6, opt);
  for (size_t i = 0; i < corpus.size(); ++i)
    EXPECT_EQ(corpus[i].tokens, again[i].tokens);
}

TEST(ParallelSplits, SizesDisjointAndAligned) {
  auto corpus = flare::generate_task_corpus(TaskKind::classification, 100, 5);
  auto lang = CipherLanguage::make("cipher-b", 0.1, 64, 5);
  auto splits =
      flare::make_parallel_splits(corpus, lang, 0.9, 0.9, {60, 20, 20}, 3);
  EXPECT_EQ(splits.train.size(), 60u);
  EXPECT_EQ(splits.val.size(), 20u);
  EXPECT_EQ(splits.test.size(), 20u);
  std::set<int> ids;
  for (const auto& p : splits.train) ids.insert(p.target.id);
  for (const auto& p : splits.val) ids.insert(p.target.id);
  for (const auto& p : splits.test) ids.insert(p.target.id);
  EXPECT_EQ(ids.size(), 100u);  // disjoint cover
  for (size_t i = 0; i < splits.test.size(); ++i) {
    EXPECT_EQ(splits.test[i].target.id, splits.en_test[i].id);
    EXPECT_EQ(splits.test[i].target.label, splits.en_test[i].label);
    EXPECT_EQ(splits.test[i].provenance, "eval");
    EXPECT_EQ(splits.test[i].target.language, "cipher-b");
    EXPECT_EQ(splits.test[i].source.language, "en");
  }
  EXPECT_EQ(splits.train[0].provenance, "train");
  EXPECT_THROW(
      flare::make_parallel_splits(corpus, lang, 0.9, 0.9, {90, 20, 20}, 3),
      flare::ContractError);
}

TEST(ParallelSplits, PerfectMtMakesEvalSourceEqualGoldEnglish) {
  auto corpus = flare::generate_task_corpus(TaskKind::classification, 50, 5);
  auto lang = CipherLanguage::make("cipher-a", 0.0, 64, 5);
  auto splits =
      flare::make_parallel_splits(corpus, lang, 1.0, 1.0, {10, 10, 30}, 3);
  for (size_t i = 0; i < splits.test.size(); ++i) {
    EXPECT_EQ(splits.test[i].source.tokens, splits.en_test[i].tokens);
    EXPECT_EQ(splits.test[i].source.label, splits.en_test[i].label);
  }
  // train target is the deterministic cipher of its English side
  for (const auto& p : splits.train) {
    for (size_t k = 0; k < p.source.tokens.size(); ++k)
      EXPECT_EQ(p.target.tokens[k], lang.perm[p.source.tokens[k]]);
  }
}

TEST(LowResource, StratifiedWithinOne) {
  auto corpus = flare::generate_task_corpus(TaskKind::classification, 300, 5);
  auto lang = CipherLanguage::make("cipher-a", 0.1, 64, 5);
  auto splits =
      flare::make_parallel_splits(corpus, lang, 0.9, 0.9, {200, 50, 50}, 3);
  auto sub = flare::low_resource_subsample(splits.train, 100, 17);
  EXPECT_EQ(sub.size(), 100u);
  std::vector<int> counts(3, 0);
  for (const auto& p : sub) counts[p.target.label]++;
  int lo = *std::min_element(counts.begin(), counts.end());
  int hi = *std::max_element(counts.begin(), counts.end());
  EXPECT_LE(hi - lo, 1);
  auto again = flare::low_resource_subsample(splits.train, 100, 17);
  for (size_t i = 0; i < sub.size(); ++i)
    EXPECT_EQ(sub[i].target.id, again[i].target.id);
  EXPECT_THROW(flare::low_resource_subsample(splits.train, 201, 17),
               flare::ContractError);
}

TEST(Jsonl, RoundTripWithSchemaHeader) {
  namespace fs = std::filesystem;
  auto dir = fs::temp_directory_path() / "flare_synth_test";
  fs::create_directories(dir);
  auto corpus = flare::generate_task_corpus(TaskKind::span, 20, 9);
  auto inst_path = (dir / "inst.jsonl").string();
  flare::save_instances_jsonl(inst_path, corpus);
  auto loaded = flare::load_instances_jsonl(inst_path);
  ASSERT_EQ(loaded.size(), corpus.size());
  for (size_t i = 0; i < corpus.size(); ++i) {
    EXPECT_EQ(loaded[i].tokens, corpus[i].tokens);
    EXPECT_EQ(loaded[i].span, corpus[i].span);
    EXPECT_EQ(loaded[i].language, corpus[i].language);
  }

  auto lang = CipherLanguage::make("cipher-a", 0.1, 64, 5);
  auto splits = flare::make_parallel_splits(corpus, lang, 0.9, 0.9, {10, 5, 5}, 3);
  auto pair_path = (dir / "pairs.jsonl").string();
  flare::save_pairs_jsonl(pair_path, splits.test);
  auto pairs = flare::load_pairs_jsonl(pair_path);
  ASSERT_EQ(pairs.size(), splits.test.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(pairs[i].target.tokens, splits.test[i].target.tokens);
    EXPECT_EQ(pairs[i].source.span, splits.test[i].source.span);
    EXPECT_EQ(pairs[i].provenance, "eval");
  }

  // wrong record kind rejected
  EXPECT_THROW(flare::load_pairs_jsonl(inst_path), flare::ContractError);
  fs::remove_all(dir);
}

}  // namespace
