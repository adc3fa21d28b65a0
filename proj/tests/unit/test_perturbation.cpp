#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "evasion/error.hpp"
#include "evasion/perturbation.hpp"
#include "evasion/stubs.hpp"
#include "evasion/text.hpp"
#include "support/fakes.hpp"
#include "support/oracles.hpp"
#include "support/pipeline.hpp"

namespace fs = std::filesystem;
using namespace evasion;
using support::essay;

namespace {

WordSubConfig cfg_k(int k) {
  WordSubConfig c;
  c.k = k;
  return c;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "evasion_unit" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::string> sentence_texts(const std::string& text) {
  std::vector<std::string> out;
  for (const auto& s : segment_sentences(text)) out.push_back(text.substr(s.begin, s.end - s.begin));
  return out;
}

// Straight-line copy of the selection contract: mt19937_64, rejection
// sampled bounded draws, partial Fisher-Yates, sorted result.
std::vector<std::size_t> reference_selection(std::size_t n, std::size_t m, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  auto below = [&](std::uint64_t bound) {
    const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
    const std::uint64_t limit = max - max % bound;
    std::uint64_t x;
    do x = g(); while (x >= limit);
    return x % bound;
  };
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < m; ++i) std::swap(idx[i], idx[i + below(n - i)]);
  std::vector<std::size_t> out(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST(TopFrequencyWords, InstructionWordFirst) {
  const auto& stop = stopwords("english");
  EXPECT_EQ(top_frequency_words("effects of technology", "technology helps. technology grows.", 1, stop),
            (std::vector<std::string>{"technology"}));
}

TEST(TopFrequencyWords, StopwordOnlyEssayIsEmpty) {
  EXPECT_TRUE(top_frequency_words("anything", "the and of it is was to", 3, stopwords("english")).empty());
}

TEST(TopFrequencyWords, TiesAreLexicographic) {
  const std::string e = "people computers people computers people computers";
  EXPECT_EQ(top_frequency_words("", e, 2, stopwords("english")),
            (std::vector<std::string>{"computers", "people"}));
  EXPECT_EQ(top_frequency_words("", e, 1, stopwords("english")), (std::vector<std::string>{"computers"}));
  // The instruction count outranks the essay count.
  EXPECT_EQ(top_frequency_words("people", e + " computers", 2, stopwords("english")),
            (std::vector<std::string>{"people", "computers"}));
  // Short tokens never qualify; instruction-only words are not eligible.
  EXPECT_EQ(top_frequency_words("robots", "ox ox ox cat", 5, stopwords("none")), (std::vector<std::string>{"cat"}));
}

TEST(MatchCase, FirstLetterShape) {
  EXPECT_EQ(match_case("Technology", "tech"), "Tech");
  EXPECT_EQ(match_case("technology", "Tech"), "tech");
  EXPECT_EQ(match_case("TECHNOLOGY", "tech"), "Tech");
  std::string s = "Cat cat CAT concat cat's";
  EXPECT_EQ(replace_word(s, "cat", "dog"), 4u);
  EXPECT_EQ(s, "Dog dog Dog concat dog's");
}

TEST(WordSubstitute, IntersectionBranch) {
  auto model = support::fixed_fill_mask({{"tech", 0.4}, {"science", 0.3}});
  JsonSynonymKB kb(std::map<std::string, std::vector<std::string>>{{"technology", {"tech", "innovation"}}});
  const auto in = essay("e1", 1, "Technology helps. technology grows.");
  const auto r = word_substitute(in, "effects of technology", cfg_k(1), *model, kb);
  EXPECT_EQ(r.essay.text, "Tech helps. tech grows.");
  ASSERT_EQ(r.plan.entries.size(), 1u);
  EXPECT_EQ(r.plan.entries[0],
            (PlanEntry{"technology", std::string("tech"), ReplacementSource::kIntersection, 2}));
  EXPECT_EQ(model->calls.load(), 2);  // one query per occurrence
  EXPECT_EQ(r.essay.origin, Origin::kWordSub);
  EXPECT_EQ(r.essay.parent_id, std::optional<std::string>("e1"));
  EXPECT_EQ(r.essay.author, "perturbed:word_sub");
}

TEST(WordSubstitute, KbEmptyFallsBackToModelTopOne) {
  auto model = support::fixed_fill_mask({{"machines", 0.7}, {"tools", 0.2}});
  JsonSynonymKB kb({});
  const auto in = essay("e2", 1, "Computers are fun. I like computers and Computers like me.");
  const auto r = word_substitute(in, "computers", cfg_k(1), *model, kb);
  EXPECT_EQ(r.essay.text, "Machines are fun. I like machines and Machines like me.");
  ASSERT_EQ(r.plan.entries.size(), 1u);
  EXPECT_EQ(r.plan.entries[0].source, ReplacementSource::kKbEmptyFallback);
  EXPECT_EQ(r.plan.entries[0].occurrences_replaced, 3u);
}

TEST(WordSubstitute, EmptyIntersectionLeavesWord) {
  auto model = support::fixed_fill_mask({{"machines", 0.7}});
  JsonSynonymKB kb(std::map<std::string, std::vector<std::string>>{{"computers", {"devices"}}});
  const auto in = essay("e3", 1, "Computers are fun.");
  const auto r = word_substitute(in, "computers", cfg_k(1), *model, kb);
  EXPECT_EQ(r.essay.text, in.text);
  EXPECT_EQ(r.plan.entries[0],
            (PlanEntry{"computers", std::nullopt, ReplacementSource::kNoCandidate, 0}));
}

TEST(WordSubstitute, NoEligibleWordsIsIdentity) {
  auto model = support::fixed_fill_mask({{"x", 1.0}});
  JsonSynonymKB kb({});
  const auto in = essay("e4", 1, "It is what it is, and so on.");
  const auto r = word_substitute(in, "anything", cfg_k(5), *model, kb);
  EXPECT_EQ(r.essay.text, in.text);
  EXPECT_TRUE(r.plan.entries.empty());
  EXPECT_EQ(model->calls.load(), 0);
}

TEST(WordSubstitute, CandidateFilter) {
  // Multi-word, non-alphabetic, identical and stopword candidates are skipped.
  auto model = support::fixed_fill_mask(
      {{"two words", 0.9}, {"c3po", 0.8}, {"Robots", 0.7}, {"the", 0.6}, {" Droids ", 0.5}});
  JsonSynonymKB kb({});
  const auto r = word_substitute(essay("e", 1, "Robots rule."), "robots", cfg_k(1), *model, kb);
  EXPECT_EQ(r.essay.text, "Droids rule.");
}

TEST(WordSubstitute, ScoresAveragedAcrossOccurrences) {
  // First occurrence favours "alpha", second favours "beta" more strongly.
  support::FunctionFillMask model([](std::string_view masked, int) -> std::vector<MaskCandidate> {
    if (masked.rfind("[MASK]", 0) == 0) return {{"alpha", 0.6}, {"beta", 0.1}};
    return {{"beta", 0.9}, {"alpha", 0.2}};
  });
  JsonSynonymKB kb({});
  const auto r = word_substitute(essay("e", 1, "Robots rule. Robots win."), "robots", cfg_k(1), model, kb);
  EXPECT_EQ(r.plan.entries[0].replacement, std::optional<std::string>("beta"));
}

TEST(WordSubstitute, ProviderContractViolations) {
  JsonSynonymKB kb({});
  support::FunctionFillMask rising([](std::string_view, int) -> std::vector<MaskCandidate> {
    return {{"a", 0.1}, {"b", 0.9}};
  });
  EXPECT_THROW(word_substitute(essay("e", 1, "Robots rule."), "", cfg_k(1), rising, kb), ProviderError);
  support::FunctionFillMask failing([](std::string_view, int) -> std::vector<MaskCandidate> {
    throw ProviderError(ProviderErrorKind::kTransport, "down");
  });
  try {
    word_substitute(essay("e", 1, "Robots rule."), "", cfg_k(1), failing, kb);
    FAIL();
  } catch (const ProviderError& e) {
    EXPECT_NE(std::string(e.what()).find("robots"), std::string::npos);
    EXPECT_EQ(e.kind(), ProviderErrorKind::kTransport);
  }
}

TEST(WordSubstitute, MatchesReferenceOnFixtureEssays) {
  const auto kb_json = nlohmann::json::parse(support::slurp(support::fixture("mini_kb.json")));
  const auto kb = JsonSynonymKB::from_json(kb_json);
  auto stub = HashedVocabularyFillMask::from_kb(kb, 3);
  const auto topics = load_topics(support::fixture("topics.json"));
  const auto essays = ingest_asap(support::fixture("human_essays.tsv"), ColumnMap{}, topics).records;
  const auto stop = stopwords("english");
  for (const auto& e : essays) {
    const auto& instruction = find_topic(topics, e.topic_id).prompt_text;
    const auto got = word_substitute(e, instruction, cfg_k(10), stub, kb);
    const auto ref = oracle::reference_word_substitution(
        e.text, instruction, 10, 20, 10, stop,
        [&](const std::string& masked, int top) {
          std::vector<oracle::Candidate> out;
          for (const auto& c : stub.predict(masked, top)) out.push_back({c.token, c.score});
          return out;
        },
        kb.entries());
    EXPECT_EQ(got.essay.text, ref.text) << e.id;
    ASSERT_EQ(got.plan.entries.size(), ref.steps.size());
    for (std::size_t i = 0; i < ref.steps.size(); ++i) {
      EXPECT_EQ(got.plan.entries[i].original_word, ref.steps[i].word);
      EXPECT_EQ(got.plan.entries[i].replacement, ref.steps[i].replacement);
      EXPECT_EQ(to_string(got.plan.entries[i].source), ref.steps[i].source);
      EXPECT_EQ(got.plan.entries[i].occurrences_replaced, ref.steps[i].replaced);
    }
  }
}

TEST(WordSubstitute, TraceIsPrefixConsistent) {
  const auto kb = JsonSynonymKB::from_file(support::fixture("mini_kb.json"));
  auto stub = HashedVocabularyFillMask::from_kb(kb, 1);
  const auto topics = load_topics(support::fixture("topics.json"));
  const auto essays = ingest_asap(support::fixture("human_essays.tsv"), ColumnMap{}, topics).records;
  for (const auto& e : essays) {
    const auto& instruction = find_topic(topics, e.topic_id).prompt_text;
    const auto trace = word_substitute_trace(e, instruction, cfg_k(10), stub, kb);
    ASSERT_EQ(trace.texts.size(), trace.plan.entries.size() + 1);
    for (int d = 1; d < static_cast<int>(trace.texts.size()); ++d) {
      EXPECT_EQ(word_substitute(e, instruction, cfg_k(d), stub, kb).essay.text,
                trace.texts[static_cast<std::size_t>(d)]);
    }
  }
}

TEST(SentenceSelection, CountRule) {
  EXPECT_EQ(selected_sentence_count(10, 0.0), 0u);
  EXPECT_EQ(selected_sentence_count(10, 0.2), 2u);
  EXPECT_EQ(selected_sentence_count(4, 0.2), 1u);
  EXPECT_EQ(selected_sentence_count(3, 1.0), 3u);
  EXPECT_EQ(selected_sentence_count(5, 0.5), 3u);
  EXPECT_EQ(selected_sentence_count(0, 0.5), 0u);
  EXPECT_THROW(selected_sentence_count(3, 1.5), InvalidArgument);
  EXPECT_THROW(selected_sentence_count(3, -0.1), InvalidArgument);
}

TEST(SentenceSelection, TenSentencesFixedSeed) {
  const std::uint64_t seed = 12345;
  const auto picked = select_sentences(10, 0.2, seed);
  EXPECT_EQ(picked, reference_selection(10, 2, seed));
  // Frozen from the reference above.
  EXPECT_EQ(picked, (std::vector<std::size_t>{0, 6}));
  EXPECT_EQ(select_sentences(10, 0.2, seed), picked);
  for (std::uint64_t s = 0; s < 200; ++s) {
    for (std::size_t n : {1u, 3u, 10u, 17u}) {
      EXPECT_EQ(select_sentences(n, 0.3, s), reference_selection(n, selected_sentence_count(n, 0.3), s));
    }
  }
}

TEST(SentenceSubstitute, RatioZeroIsIdentity) {
  support::ConstantInfill infill("Never used.");
  const auto in = essay("s0", 1, "One. Two! Three?");
  const auto out = sentence_substitute(in, 0.0, 9, infill);
  EXPECT_EQ(out.text, in.text);
  EXPECT_EQ(out.origin, Origin::kSentenceSub);
}

TEST(SentenceSubstitute, RatioOneReplacesEverySentence) {
  support::ConstantInfill infill("[X]");
  const auto out = sentence_substitute(essay("s1", 1, "First one. Second one! Third one?"), 1.0, 9, infill);
  const auto parts = sentence_texts(out.text);
  ASSERT_EQ(parts.size(), 3u);
  for (const auto& p : parts) EXPECT_EQ(p, "[X].");
  EXPECT_EQ(out.text, "[X]. [X]. [X].");
}

TEST(SentenceSubstitute, TenSentencesTwoReplacedDeterministically) {
  std::string text;
  for (int i = 0; i < 10; ++i) text += (i ? " " : "") + std::string("Sentence number ") + std::to_string(i) + ".";
  support::ConstantInfill infill("A brand new line here.");
  const auto in = essay("s10", 1, text);
  const auto a = sentence_substitute(in, 0.2, 12345, infill);
  const auto b = sentence_substitute(in, 0.2, 12345, infill);
  EXPECT_EQ(a.text, b.text);
  const auto before = sentence_texts(in.text);
  const auto after = sentence_texts(a.text);
  ASSERT_EQ(after.size(), 10u);
  std::vector<std::size_t> changed;
  for (std::size_t i = 0; i < 10; ++i) {
    if (after[i] != before[i]) {
      changed.push_back(i);
      EXPECT_EQ(after[i], "A brand new line here.");
    }
  }
  EXPECT_EQ(changed, select_sentences(10, 0.2, 12345));
}

TEST(SentenceSubstitute, SpanPlaceholdersAreNumberedInOrder) {
  std::string seen;
  class Recorder final : public InfillProvider {
   public:
    explicit Recorder(std::string& s) : s_(s) {}
    std::vector<std::string> infill(std::string_view text, int spans) override {
      s_ = std::string(text);
      std::vector<std::string> out;
      for (int i = 0; i < spans; ++i) out.push_back("Fill " + std::to_string(i));
      return out;
    }

   private:
    std::string& s_;
  } rec(seen);
  const auto out = sentence_substitute(essay("s", 1, "A. B. C."), 1.0, 0, rec);
  EXPECT_EQ(seen, "<extra_span_0> <extra_span_1> <extra_span_2>");
  EXPECT_EQ(out.text, "Fill 0. Fill 1. Fill 2.");
}

TEST(SentenceSubstitute, WrongSpanCountIsHardError) {
  support::ConstantInfill short_by_one("x.", -1);
  EXPECT_THROW(sentence_substitute(essay("s", 1, "A. B. C."), 1.0, 0, short_by_one), ProviderError);
  StubInfill stub;
  EXPECT_EQ(stub.infill("<extra_span_0> and <extra_span_1>", 2).size(), 2u);
  EXPECT_THROW(stub.infill("<extra_span_0>", 2), ProviderError);
}

TEST(NormalizeFill, KeepsOneClosedSentence) {
  EXPECT_EQ(normalize_fill("  hello   world  "), "hello world.");
  EXPECT_EQ(normalize_fill("One. Two."), "One.");
  EXPECT_EQ(normalize_fill("Ends with Mr."), "Ends with Mr..");
  EXPECT_EQ(normalize_fill("Question?"), "Question?");
  EXPECT_EQ(normalize_fill("   "), "");
}

TEST(Paraphrase, EchoProviderCarriesTemplateAndEssay) {
  const auto topics = load_topics(support::fixture("topics.json"));
  EchoProvider echo;
  GenerationParams params;
  params.model_name = "echo";
  const auto in = essay("h1", 1, "Computers help people learn");
  const auto out = paraphrase_essay(in, topics[0], echo, params);
  EXPECT_NE(out.text.find(kParaphraseSentence), std::string::npos);
  EXPECT_NE(out.text.find(kParaphraseClosing), std::string::npos);
  EXPECT_NE(out.text.find(in.text), std::string::npos);
  EXPECT_EQ(out.parent_id, std::optional<std::string>("h1"));
  EXPECT_EQ(out.origin, Origin::kParaphrase);
  EXPECT_THROW(paraphrase_essay(essay("g", 1, "x.", Origin::kInstructionWriting), topics[0], echo, params),
               InvalidArgument);
}

TEST(Paraphrase, ReplayProviderOutputEqualsFixture) {
  const auto topics = load_topics(support::fixture("topics.json"));
  auto replay = ReplayProvider::from_file(support::fixture("replay.json"));
  GenerationParams params;
  params.model_name = "replay";
  params.seed = 0;
  const auto in = essay("h1", 1, "Computers help people learn.");
  const auto out = paraphrase_essay(in, topics[0], replay, params);
  GenerationRequest req;
  req.prompt = build_prompt(PromptMode::kParaphrase, topics[0], &in);
  req.model_name = "replay";
  req.seed = 0;
  EXPECT_EQ(out.text, replay.generate(req));
  EXPECT_NO_THROW(check_lineage({in, out}));
}

namespace {

struct BatchFixture {
  std::vector<EssayRecord> records{essay("a", 1, "Computers help people. Computers are tools."),
                                   essay("b", 1, "People like computers. Computers teach people."),
                                   essay("c", 1, "Games on computers are fun for people.")};
  JsonSynonymKB kb{{{"computers", {"machines", "devices"}}, {"people", {"folks", "humans"}}}};
  PerturbConfig config;
  BatchFixture() {
    config.word.k = 2;
    config.instruction_by_topic = {{1, "computers and people"}};
    config.parallelism = 3;
  }
};

}  // namespace

TEST(PerturbBatch, WordSubHappyPath) {
  BatchFixture f;
  auto stub = HashedVocabularyFillMask::from_kb(f.kb);
  Providers providers;
  providers.fill_mask = &stub;
  providers.kb = &f.kb;
  const auto dir = scratch("batch_ok");
  const auto out = dir / "out.jsonl";
  const auto r = perturb_batch(f.records, PerturbMethod::kWordSub, f.config, providers, BatchOutput{out, false});
  EXPECT_EQ(r.summary, (BatchSummary{3, 0, 0}));
  EXPECT_EQ(r.records.size(), 3u);
  EXPECT_EQ(r.plans.size(), 3u);
  EXPECT_EQ(read_jsonl(out), r.records);
  const auto plans = nlohmann::json::parse(support::slurp(plans_path_for(out)));
  ASSERT_EQ(plans.size(), 3u);
  EXPECT_EQ(plans[0]["essay_id"], "a");
  EXPECT_EQ(plans[0]["params"]["k"], 2);
}

TEST(PerturbBatch, OneFailureOutOfThree) {
  BatchFixture f;
  support::FunctionFillMask flaky([](std::string_view masked, int) -> std::vector<MaskCandidate> {
    if (masked.find("Games") != std::string_view::npos) {
      throw ProviderError(ProviderErrorKind::kTransport, "timeout");
    }
    return {{"machines", 0.5}};
  });
  Providers providers;
  providers.fill_mask = &flaky;
  providers.kb = &f.kb;
  const auto r = perturb_batch(f.records, PerturbMethod::kWordSub, f.config, providers);
  EXPECT_EQ(r.summary, (BatchSummary{2, 0, 1}));
  ASSERT_EQ(r.diagnostics.size(), 1u);
  EXPECT_EQ(r.diagnostics[0].item, "c");
}

TEST(PerturbBatch, ResumeSkipsDoneIds) {
  BatchFixture f;
  auto stub = HashedVocabularyFillMask::from_kb(f.kb);
  Providers providers;
  providers.fill_mask = &stub;
  providers.kb = &f.kb;
  const auto dir = scratch("batch_resume");
  const auto out = dir / "out.jsonl";
  const auto full = perturb_batch(f.records, PerturbMethod::kWordSub, f.config, providers, BatchOutput{out, false});
  const auto full_plans = support::slurp(plans_path_for(out));

  auto partial = full.records;
  partial.erase(partial.begin() + 1);
  write_jsonl(out, partial);

  support::FunctionFillMask counting([&](std::string_view m, int top) { return stub.predict(m, top); });
  providers.fill_mask = &counting;
  const auto resumed = perturb_batch(f.records, PerturbMethod::kWordSub, f.config, providers, BatchOutput{out, true});
  EXPECT_EQ(resumed.summary, (BatchSummary{1, 2, 0}));
  EXPECT_EQ(resumed.records, full.records);
  EXPECT_EQ(read_jsonl(out), full.records);
  EXPECT_EQ(support::slurp(plans_path_for(out)), full_plans);
  // Only essay b was recomputed: its occurrences of the two top words.
  EXPECT_GT(counting.calls.load(), 0);
  EXPECT_LE(counting.calls.load(), 6);
}

TEST(PerturbBatch, SentenceSubUsesPerEssaySeeds) {
  BatchFixture f;
  StubInfill infill;
  Providers providers;
  providers.infill = &infill;
  f.config.sentence_ratio = 0.5;
  f.config.seed = 4;
  const auto a = perturb_batch(f.records, PerturbMethod::kSentenceSub, f.config, providers);
  f.config.parallelism = 1;
  const auto b = perturb_batch(f.records, PerturbMethod::kSentenceSub, f.config, providers);
  EXPECT_EQ(a.records, b.records);
  EXPECT_EQ(a.summary, (BatchSummary{3, 0, 0}));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(segment_sentences(a.records[i].text).size(), segment_sentences(f.records[i].text).size());
  }
}

TEST(PerturbBatch, MissingProviderIsRejectedUpFront) {
  BatchFixture f;
  EXPECT_THROW(perturb_batch(f.records, PerturbMethod::kWordSub, f.config, Providers{}), InvalidArgument);
  EXPECT_THROW(perturb_batch(f.records, PerturbMethod::kSentenceSub, f.config, Providers{}), InvalidArgument);
  EXPECT_THROW(perturb_batch(f.records, PerturbMethod::kParaphrase, f.config, Providers{}), InvalidArgument);
}

TEST(Stubs, HashedFillMaskIsDeterministicAndOrdered) {
  HashedVocabularyFillMask m({"Zeta", "alpha", "beta", "alpha", "gamma"}, 5);
  const auto a = m.predict("the [MASK] sat", 3);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 1; i < a.size(); ++i) EXPECT_GE(a[i - 1].score, a[i].score);
  const auto b = m.predict("the [MASK] sat", 3);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].token, b[i].token);
  EXPECT_EQ(m.predict("the [MASK] sat", 10).size(), 4u);
  EXPECT_THROW(m.predict("no mask", 3), ProviderError);
}
