#include <algorithm>
#include <map>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "opd/errors.hpp"
#include "opd/preprocess.hpp"
#include "support/fixtures.hpp"

namespace opd {
namespace {

using testing::TempDir;

Encounter enc(const std::string& pid, int day, std::vector<std::string> codes, std::string text = "x") {
  Encounter e;
  e.patient_id = pid;
  e.date = parse_date("2020-01-01") + std::chrono::days(day);
  e.dept = "D01";
  e.doctor = "DR001";
  e.text = std::move(text);
  e.codes = std::move(codes);
  std::sort(e.codes.begin(), e.codes.end());
  return e;
}

std::vector<int> days_of(const std::vector<Encounter>& es) {
  std::vector<int> out;
  for (const auto& e : es) out.push_back(static_cast<int>((e.date - parse_date("2020-01-01")).count()));
  return out;
}

TEST(Dedup, ConsecutiveRunCollapse) {
  const std::vector<Encounter> es = {enc("P", 1, {"A00"}), enc("P", 2, {"A00"}), enc("P", 3, {"A00", "B01"}),
                                     enc("P", 4, {"B01", "A00"}), enc("P", 5, {"A00"})};
  EXPECT_EQ(days_of(dedup_ditto(es)), (std::vector<int>{1, 3, 5}));
}

TEST(Dedup, AnyEarlierModeDropsLaterRepeats) {
  const std::vector<Encounter> es = {enc("P", 1, {"A00"}), enc("P", 2, {"A00"}), enc("P", 3, {"A00", "B01"}),
                                     enc("P", 4, {"B01", "A00"}), enc("P", 5, {"A00"})};
  EXPECT_EQ(days_of(dedup_ditto(es, DedupMode::kAnyEarlier)), (std::vector<int>{1, 3}));
}

TEST(Dedup, SingleAndSetEquality) {
  EXPECT_EQ(days_of(dedup_ditto(std::vector<Encounter>{enc("P", 1, {"A00"})})), (std::vector<int>{1}));
  std::vector<Encounter> es = {enc("P", 1, {"A00", "B01"}), enc("P", 2, {"A00", "B01"})};
  es[1].codes = {"B01", "A00"};  // unsorted on purpose
  EXPECT_EQ(days_of(dedup_ditto(es)), (std::vector<int>{1}));
}

TEST(Dedup, SortsByDateStably) {
  std::vector<Encounter> es = {enc("P", 3, {"C02"}, "late"), enc("P", 1, {"A00"}, "first"),
                               enc("P", 1, {"B01"}, "second")};
  const auto out = dedup_ditto(es);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].text, "first");
  EXPECT_EQ(out[1].text, "second");
  EXPECT_EQ(out[2].text, "late");
}

TEST(Dedup, MixedPatientsRejected) {
  EXPECT_THROW(dedup_ditto(std::vector<Encounter>{enc("P", 1, {"A00"}), enc("Q", 2, {"A00"})}), ContractError);
}

std::vector<Encounter> random_history(std::mt19937_64& rng, const std::string& pid) {
  const std::vector<std::vector<std::string>> sets = {{"A00"}, {"B01"}, {"A00", "B01"}, {"C02"}};
  std::vector<Encounter> es;
  const std::size_t n = testing::uniform_index(rng, 1, 12);
  for (std::size_t i = 0; i < n; ++i)
    es.push_back(enc(pid, static_cast<int>(testing::uniform_index(rng, 0, 6)), sets[testing::uniform_index(rng, 0, 3)],
                     "t" + std::to_string(i)));
  return es;
}

TEST(DedupProperty, IdempotentKeepsEarliestNoAdjacentRepeats) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 500; ++trial) {
    const auto es = random_history(rng, "P");
    for (DedupMode mode : {DedupMode::kConsecutive, DedupMode::kAnyEarlier}) {
      const auto once = dedup_ditto(es, mode);
      EXPECT_EQ(dedup_ditto(once, mode), once);
      ASSERT_FALSE(once.empty());
      auto sorted = es;
      std::stable_sort(sorted.begin(), sorted.end(), [](const Encounter& a, const Encounter& b) { return a.date < b.date; });
      EXPECT_EQ(once.front(), sorted.front());
      for (std::size_t i = 1; i < once.size(); ++i) EXPECT_NE(once[i].codes, once[i - 1].codes);
    }
  }
}

TEST(DedupCorpus, PatientsKeepFirstAppearanceOrder) {
  const std::vector<Encounter> es = {enc("B", 1, {"A00"}), enc("A", 1, {"A00"}), enc("B", 2, {"A00"}),
                                     enc("A", 2, {"B01"})};
  const auto out = dedup_corpus(es);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].patient_id, "B");
  EXPECT_EQ(out[1].patient_id, "A");
  EXPECT_EQ(out[2].patient_id, "A");
}

TEST(MinFrequency, ZeroIsIdentity) {
  const std::vector<Encounter> es = {enc("P", 1, {"A00"}), enc("Q", 1, {"B01", "C02"})};
  const auto r = filter_min_frequency(es, 0);
  EXPECT_EQ(r.train, es);
  EXPECT_EQ(r.labels, (std::vector<std::string>{"A00", "B01", "C02"}));
}

TEST(MinFrequency, RareLabelRemovedFromDocument) {
  const std::vector<Encounter> es = {enc("P", 1, {"A00"}), enc("P", 2, {"A00"}), enc("P", 3, {"A00"}),
                                     enc("Q", 1, {"A00", "B01"})};
  const auto r = filter_min_frequency(es, 2);
  ASSERT_EQ(r.train.size(), 4u);
  EXPECT_EQ(r.train[3].codes, (std::vector<std::string>{"A00"}));
  EXPECT_EQ(r.labels, (std::vector<std::string>{"A00"}));
  EXPECT_EQ(r.removed_label_occurrences, 1u);
  EXPECT_EQ(r.dropped_documents, 0u);
}

TEST(MinFrequency, DocumentLeftEmptyIsDropped) {
  const std::vector<Encounter> es = {enc("P", 1, {"A00"}), enc("P", 2, {"A00"}), enc("Q", 1, {"B01"})};
  const auto r = filter_min_frequency(es, 2);
  EXPECT_EQ(r.train.size(), 2u);
  EXPECT_EQ(r.dropped_documents, 1u);
}

TEST(MinFrequencyProperty, RetainedLabelsMeetThresholdOnRecount) {
  std::mt19937_64 rng(8);
  const std::vector<std::string> codes = {"A00", "A01", "B02", "C03", "D04", "E05", "F06", "G07"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Encounter> es;
    const std::size_t n = testing::uniform_index(rng, 1, 40);
    for (std::size_t i = 0; i < n; ++i) {
      std::set<std::string> s;
      const std::size_t k = testing::uniform_index(rng, 1, 3);
      while (s.size() < k) s.insert(codes[testing::uniform_index(rng, 0, codes.size() - 1)]);
      es.push_back(enc("P" + std::to_string(i), 1, {s.begin(), s.end()}));
    }
    const std::size_t min_count = testing::uniform_index(rng, 0, 6);
    const auto r = filter_min_frequency(es, min_count);
    std::map<std::string, std::size_t> recount;
    for (const auto& e : r.train) {
      EXPECT_FALSE(e.codes.empty());
      for (const auto& c : e.codes) ++recount[c];
    }
    for (const auto& label : r.labels) EXPECT_GE(recount[label], min_count) << label;
    EXPECT_EQ(recount.size(), r.labels.size());
  }
}

TEST(Tokens, SplitLowercasesAndKeepsNonAscii) {
  EXPECT_EQ(split_tokens("Hello, WORLD! a1-b2"), (std::vector<std::string>{"hello", "world", "a1", "b2"}));
  EXPECT_EQ(split_tokens("\xe9\xab\x98 x"), (std::vector<std::string>{"\xe9\xab\x98", "x"}));
  EXPECT_TRUE(split_tokens(" ,.; ").empty());
}

TEST(Vocab, FrequencyThenAlphabetical) {
  const std::vector<std::string> texts = {"a a b"};
  const Vocabulary v = build_vocab(texts, 1);
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.id("a"), 2);
  EXPECT_EQ(v.id("b"), 3);
  EXPECT_EQ(v.id("zzz"), Vocabulary::kUnknown);
  EXPECT_EQ(v.token(0), v.token(Vocabulary::kPad));

  const std::vector<std::string> ties = {"d c b a", "c d"};
  const Vocabulary t = build_vocab(ties, 1);
  EXPECT_EQ(t.token(2), "c");
  EXPECT_EQ(t.token(3), "d");
  EXPECT_EQ(t.token(4), "a");
  EXPECT_EQ(t.token(5), "b");
}

TEST(Vocab, MinCountAboveAllCountsLeavesReserved) {
  const std::vector<std::string> texts = {"one two three"};
  EXPECT_EQ(build_vocab(texts, 5).size(), 2u);
  EXPECT_THROW(build_vocab(texts, 0), ConfigError);
}

TEST(Vocab, DeterministicDenseAndSaveLoad) {
  TempDir dir("opd-vocab");
  const std::vector<std::string> texts = {"the cat sat on the mat", "The dog, the cat."};
  const Vocabulary a = build_vocab(texts), b = build_vocab(texts);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.hash(), b.hash());
  std::set<std::int32_t> ids;
  for (std::int32_t i = 0; i < static_cast<std::int32_t>(a.size()); ++i) {
    if (i >= 2) EXPECT_EQ(a.id(a.token(i)), i);
    ids.insert(i);
  }
  EXPECT_EQ(ids.size(), a.size());
  a.save(dir / "vocab.txt");
  EXPECT_EQ(Vocabulary::load(dir / "vocab.txt"), a);
}

TEST(Tokenize, EmptyUnknownAndTruncation) {
  const std::vector<std::string> texts = {"w"};
  const Vocabulary v = build_vocab(texts);
  EXPECT_EQ(tokenize("", v).token_ids, (std::vector<std::int32_t>{0}));
  EXPECT_EQ(tokenize("xyzzy", v).token_ids, (std::vector<std::int32_t>{1}));
  std::string long_text;
  for (int i = 0; i < 600; ++i) long_text += "w ";
  long_text += "xyzzy";
  const auto note = tokenize(long_text, v);
  EXPECT_EQ(note.token_ids.size(), kDefaultMaxTokens);
  EXPECT_TRUE(std::all_of(note.token_ids.begin(), note.token_ids.end(), [&](auto id) { return id == v.id("w"); }));
  EXPECT_EQ(tokenize("w xyzzy w", v, 2).token_ids, (std::vector<std::int32_t>{2, 1}));
}

TEST(TokenizeProperty, IdsBoundedAndLengthCapped) {
  std::mt19937_64 rng(2);
  const std::vector<std::string> train = {"alpha beta gamma delta", "beta beta epsilon"};
  const Vocabulary v = build_vocab(train);
  const std::vector<std::string> pool = {"alpha", "beta", "zeta", "eta", "GAMMA", "!!", "\xe9\xab\x98"};
  for (int trial = 0; trial < 300; ++trial) {
    std::string text;
    const std::size_t n = testing::uniform_index(rng, 0, 40);
    for (std::size_t i = 0; i < n; ++i) text += pool[testing::uniform_index(rng, 0, pool.size() - 1)] + " ";
    const std::size_t max_len = testing::uniform_index(rng, 1, 20);
    const auto ids = tokenize(text, v, max_len).token_ids;
    EXPECT_FALSE(ids.empty());
    EXPECT_LE(ids.size(), max_len);
    for (auto id : ids) EXPECT_LT(static_cast<std::size_t>(id), v.size());
  }
}

Split toy_split() {
  Split s;
  // train: P1 has a ditto repeat of {A00}; B01 occurs once after dedup
  s.train = {enc("P1", 1, {"A00"}), enc("P1", 2, {"A00"}), enc("P2", 1, {"A00"}), enc("P2", 2, {"A00", "B01"}),
             enc("P3", 1, {"B01"}), enc("P3", 2, {"B01"})};
  s.dev = {enc("P4", 1, {"Z99"}), enc("P4", 2, {"Z99"}), enc("P4", 3, {"A00"})};
  s.test = {enc("P5", 1, {"B01"})};
  return s;
}

TEST(Prepare, DedupBeforeFilterAndEvalKeepsLabels) {
  PreprocessOptions opt;
  opt.min_label_count = 2;
  const PreparedData d = prepare_data(toy_split(), opt);
  EXPECT_EQ(d.report.stages, (std::vector<std::string>{"dedup-train", "dedup-eval", "min-frequency-filter"}));
  // after dedup: A00 in P1d1, P2d1, P2d2 (3 docs); B01 in P2d2, P3d1 (2 docs)
  EXPECT_EQ(d.unfiltered_train_counts.at("A00"), 3u);
  EXPECT_EQ(d.unfiltered_train_counts.at("B01"), 2u);
  EXPECT_EQ(d.train.size(), 4u);
  EXPECT_EQ(d.labels.codes(), (std::vector<std::string>{"A00", "B01"}));
  // dev is de-duplicated but keeps the label unseen in train
  ASSERT_EQ(d.dev.size(), 2u);
  EXPECT_EQ(d.dev[0].codes, (std::vector<std::string>{"Z99"}));
  EXPECT_DOUBLE_EQ(*d.report.out_dev.pct_codes_unseen, 50.0);

  opt.min_label_count = 3;
  const PreparedData f = prepare_data(toy_split(), opt);
  EXPECT_EQ(f.labels.codes(), (std::vector<std::string>{"A00"}));
  EXPECT_EQ(f.report.documents_dropped_by_filter, 1u);
  EXPECT_EQ(f.test.front().codes, (std::vector<std::string>{"B01"}));
}

TEST(Prepare, WithoutTrainDedupFilterSeesRawCounts) {
  PreprocessOptions opt;
  opt.dedup_train = false;
  opt.min_label_count = 0;
  const PreparedData d = prepare_data(toy_split(), opt);
  EXPECT_EQ(d.unfiltered_train_counts.at("A00"), 4u);
  EXPECT_EQ(d.unfiltered_train_counts.at("B01"), 3u);
  EXPECT_EQ(d.report.stages.front(), "dedup-eval");
}

TEST(Prepare, ReportHasTableRows) {
  const PreparedData d = prepare_data(toy_split(), {});
  const std::string text = d.report.to_text();
  for (const char* row : {"Number of Documents", "Mean Document Length (characters)", "Mean # Codes per Document",
                          "Distinct % Codes Unseen in Train", "dedup-train -> dedup-eval -> min-frequency-filter"})
    EXPECT_NE(text.find(row), std::string::npos) << row;
  const std::string csv = d.report.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "statistic,raw_train,raw_dev,raw_test,out_train,out_dev,out_test");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

}  // namespace
}  // namespace opd
