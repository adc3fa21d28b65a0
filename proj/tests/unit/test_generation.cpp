#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>

#include "evasion/error.hpp"
#include "evasion/generation.hpp"
#include "evasion/stubs.hpp"
#include "support/pipeline.hpp"

namespace fs = std::filesystem;
using namespace evasion;

namespace {

std::vector<TopicSpec> topics() { return load_topics(support::fixture("topics.json")); }

EssayRecord human(const std::string& id, int topic, const std::string& text) {
  EssayRecord r;
  r.id = id;
  r.topic_id = topic;
  r.text = text;
  return r;
}

GenerationParams fast_params() {
  GenerationParams p;
  p.model_name = "stub";
  p.retry.base_delay = std::chrono::milliseconds(0);
  p.parallelism = 2;
  return p;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "evasion_unit" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(BuildPrompt, RefinedContainsTemplateSentenceThenEssay) {
  const auto t = topics();
  const auto e = human("1", 1, "E");
  const auto p = build_prompt(PromptMode::kRefined, t[0], &e);
  const auto at = p.instruction.find(kRefineSentence);
  ASSERT_NE(at, std::string::npos);
  EXPECT_EQ(p.instruction.substr(at + kRefineSentence.size()), " E.");
  EXPECT_FALSE(p.context.has_value());
}

TEST(BuildPrompt, InstructionWritingStartsWithRolePreamble) {
  const auto t = topics();
  for (const auto& topic : t) {
    const auto p = build_prompt(PromptMode::kInstructionWriting, topic, nullptr);
    EXPECT_EQ(p.instruction.rfind(kRolePreamble, 0), 0u);
    EXPECT_NE(p.instruction.find(topic.prompt_text), std::string::npos);
    EXPECT_FALSE(p.context.has_value());
  }
  const auto src = build_prompt(PromptMode::kInstructionWriting, t[1], nullptr);
  EXPECT_NE(src.instruction.find(*t[1].source_article), std::string::npos);
}

TEST(BuildPrompt, ContinuationUsesFirstSentenceAndTopicPrompt) {
  const auto t = topics();
  const auto e = human("1", 1, "A b. C d.");
  const auto p = build_prompt(PromptMode::kContinuation, t[0], &e);
  const std::string expected_instruction = std::string(kContinuationSentence) + " A b.";
  EXPECT_EQ(p.instruction, expected_instruction);
  ASSERT_TRUE(p.context.has_value());
  EXPECT_NE(p.context->find(t[0].prompt_text), std::string::npos);
  EXPECT_EQ(p.instruction.find("C d."), std::string::npos);
  EXPECT_NE(p.serialize().find("A b."), std::string::npos);
  EXPECT_NE(p.serialize().find(t[0].prompt_text), std::string::npos);
}

TEST(BuildPrompt, ParaphraseWrapsEssayBetweenSentences) {
  const auto t = topics();
  const auto e = human("1", 1, "My essay text");
  const auto p = build_prompt(PromptMode::kParaphrase, t[0], &e);
  EXPECT_EQ(p.instruction, std::string(kParaphraseSentence) + " My essay text. " + std::string(kParaphraseClosing));
}

TEST(BuildPrompt, TemplateFidelityAndPurity) {
  const auto t = topics();
  const auto e = human("1", 1, "Some essay. With two sentences!");
  for (auto mode : {PromptMode::kRefined, PromptMode::kContinuation, PromptMode::kParaphrase}) {
    const auto a = build_prompt(mode, t[0], &e);
    EXPECT_EQ(a, build_prompt(mode, t[0], &e));
  }
  EXPECT_NE(build_prompt(PromptMode::kRefined, t[0], &e).instruction.find(kRefineSentence), std::string::npos);
  EXPECT_NE(build_prompt(PromptMode::kContinuation, t[0], &e).instruction.find(kContinuationSentence),
            std::string::npos);
  const auto para = build_prompt(PromptMode::kParaphrase, t[0], &e).instruction;
  EXPECT_NE(para.find(kParaphraseSentence), std::string::npos);
  EXPECT_NE(para.find(kParaphraseClosing), std::string::npos);
  // The essay ends in '!', so the template's own period is dropped.
  EXPECT_NE(para.find("two sentences! Try"), std::string::npos);
}

TEST(BuildPrompt, MissingEssayIsAnError) {
  const auto t = topics();
  for (auto mode : {PromptMode::kRefined, PromptMode::kContinuation, PromptMode::kParaphrase}) {
    EXPECT_THROW(build_prompt(mode, t[0], nullptr), InvalidArgument);
  }
}

TEST(Templates, OverridesRequirePlaceholder) {
  const auto t = PromptTemplates::from_json({{"refine", "Improve: {essay}"}});
  EXPECT_EQ(t.refine, "Improve: {essay}");
  EXPECT_EQ(t.paraphrase, PromptTemplates::defaults().paraphrase);
  EXPECT_THROW(PromptTemplates::from_json({{"paraphrase", "no placeholder"}}), InvalidArgument);
}

TEST(GenerateSubset, EchoProviderOverTwoTopics) {
  const auto all = topics();
  const std::vector<TopicSpec> two{all[0], all[2]};
  EchoProvider echo;
  const auto result = generate_subset(two, echo, fast_params());
  ASSERT_EQ(result.records.size(), 2u);
  EXPECT_EQ(result.summary, (BatchSummary{2, 0, 0}));
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NE(result.records[i].text.find(two[i].prompt_text), std::string::npos);
    EXPECT_EQ(result.records[i].origin, Origin::kInstructionWriting);
    EXPECT_EQ(result.records[i].author, "stub");
    EXPECT_FALSE(result.records[i].parent_id.has_value());
  }
}

TEST(GenerateSubset, FailureOnSecondItemIsIsolated) {
  const std::vector<EssayRecord> essays{human("a", 1, "One."), human("b", 1, "Two."), human("c", 1, "Three.")};
  FunctionProvider provider([](const GenerationRequest& r) -> std::string {
    if (r.prompt.instruction.find("Two.") != std::string::npos) {
      throw ProviderError(ProviderErrorKind::kTransport, "connection reset");
    }
    return "rewritten";
  });
  auto params = fast_params();
  params.retry.max_attempts = 3;
  const auto result = generate_subset(essays, PromptMode::kRefined, topics(), provider, params);
  EXPECT_EQ(result.records.size(), 2u);
  ASSERT_EQ(result.diagnostics.size(), 1u);
  EXPECT_EQ(result.diagnostics[0].item, "b");
  EXPECT_EQ(result.diagnostics[0].kind, "transport");
  EXPECT_EQ(result.diagnostics[0].attempts, 3);
  EXPECT_EQ(result.summary, (BatchSummary{2, 0, 1}));
  for (const auto& r : result.records) {
    EXPECT_EQ(r.text, "rewritten");
    EXPECT_EQ(r.origin, Origin::kRefined);
    ASSERT_TRUE(r.parent_id.has_value());
  }
}

TEST(GenerateSubset, RefusalIsSkippedNotRetried) {
  std::atomic<int> calls{0};
  FunctionProvider provider([&](const GenerationRequest&) -> std::string {
    ++calls;
    throw ProviderError(ProviderErrorKind::kRefusal, "declined");
  });
  const auto result = generate_subset(std::vector<EssayRecord>{human("a", 1, "x.")}, PromptMode::kParaphrase,
                                      topics(), provider, fast_params());
  EXPECT_EQ(calls.load(), 1);
  EXPECT_EQ(result.summary, (BatchSummary{0, 1, 0}));
}

TEST(GenerateSubset, NonHumanInputIsPreconditionSkip) {
  auto derived = human("g", 1, "x.");
  derived.origin = Origin::kInstructionWriting;
  EchoProvider echo;
  const auto result = generate_subset(std::vector<EssayRecord>{derived, human("h", 1, "y.")},
                                      PromptMode::kContinuation, topics(), echo, fast_params());
  EXPECT_EQ(result.records.size(), 1u);
  EXPECT_EQ(result.summary, (BatchSummary{1, 1, 0}));
  ASSERT_EQ(result.diagnostics.size(), 1u);
  EXPECT_EQ(result.diagnostics[0].kind, "precondition");
}

TEST(GenerateSubset, ReplayProviderReproducesCannedEssays) {
  const auto replay_json = nlohmann::json::parse(support::slurp(support::fixture("replay.json")));
  auto replay = ReplayProvider::from_json(replay_json);
  auto params = fast_params();
  params.seed = 4;
  params.samples_per_topic = 3;
  const auto t = topics();
  const auto result = generate_subset(t, replay, params);
  ASSERT_EQ(result.records.size(), 9u);
  // Entry order in the fixture follows topic order.
  for (std::size_t topic = 0; topic < 3; ++topic) {
    const auto& texts = replay_json["entries"][topic]["texts"];
    for (std::size_t s = 0; s < 3; ++s) {
      const auto expected = texts[(4 + s) % texts.size()].get<std::string>();
      EXPECT_EQ(result.records[topic * 3 + s].text, expected);
    }
  }
}

TEST(GenerateSubset, IncrementalOutputAndResume) {
  const auto dir = scratch("gen_resume");
  const BatchOutput out{dir / "g.jsonl", false};
  std::atomic<int> calls{0};
  FunctionProvider provider([&](const GenerationRequest& r) {
    ++calls;
    return "text for " + r.prompt.instruction.substr(0, 10);
  });
  auto params = fast_params();
  params.samples_per_topic = 2;
  const auto first = generate_subset(topics(), provider, params, out);
  EXPECT_EQ(calls.load(), 6);
  EXPECT_EQ(read_jsonl(out.path), first.records);

  // Drop the last line, resume, and expect only that item to be regenerated.
  auto kept = first.records;
  kept.pop_back();
  write_jsonl(out.path, kept);
  calls = 0;
  const auto second = generate_subset(topics(), provider, params, BatchOutput{out.path, true});
  EXPECT_EQ(calls.load(), 1);
  EXPECT_EQ(second.summary, (BatchSummary{1, 5, 0}));
  EXPECT_EQ(second.records, first.records);
  EXPECT_EQ(read_jsonl(out.path), first.records);
}

TEST(Retry, TransportRetriesThenSucceeds) {
  int calls = 0;
  FunctionProvider provider([&](const GenerationRequest&) -> std::string {
    if (++calls < 3) throw ProviderError(ProviderErrorKind::kTransport, "503");
    return "ok";
  });
  GenerationRequest req;
  req.prompt.instruction = "x";
  req.model_name = "m";
  RetryPolicy retry{3, std::chrono::milliseconds(0), 2.0};
  EXPECT_EQ(generate_with_retry(provider, req, retry), "ok");
  EXPECT_EQ(calls, 3);
}

TEST(Retry, EmptyResponseIsNotRetried) {
  int calls = 0;
  FunctionProvider provider([&](const GenerationRequest&) -> std::string {
    ++calls;
    return "   ";
  });
  GenerationRequest req;
  req.prompt.instruction = "x";
  req.model_name = "m";
  try {
    generate_with_retry(provider, req, RetryPolicy{3, std::chrono::milliseconds(0), 2.0});
    FAIL();
  } catch (const ProviderError& e) {
    EXPECT_EQ(e.kind(), ProviderErrorKind::kEmpty);
    EXPECT_EQ(e.attempts(), 1);
  }
  EXPECT_EQ(calls, 1);
}

TEST(Retry, RequestValidation) {
  GenerationRequest req;
  req.model_name = "m";
  EXPECT_THROW(req.validate(), InvalidArgument);
  req.prompt.instruction = "x";
  req.max_tokens = 10;
  EXPECT_THROW(req.validate(), InvalidArgument);
  req.max_tokens = 64;
  req.temperature = -1;
  EXPECT_THROW(req.validate(), InvalidArgument);
}

TEST(Stubs, ReplayFallbackAndRefusal) {
  ReplayProvider with_fallback({{"cats", {"meow"}}}, {"f1", "f2"});
  GenerationRequest req;
  req.prompt.instruction = "about cats";
  req.model_name = "m";
  EXPECT_EQ(with_fallback.generate(req), "meow");
  req.prompt.instruction = "about dogs";
  const auto fb = with_fallback.generate(req);
  EXPECT_TRUE(fb == "f1" || fb == "f2");
  EXPECT_EQ(with_fallback.generate(req), fb);
  ReplayProvider strict({{"cats", {"meow"}}}, {});
  try {
    strict.generate(req);
    FAIL();
  } catch (const ProviderError& e) {
    EXPECT_EQ(e.kind(), ProviderErrorKind::kRefusal);
  }
}
