#include <gtest/gtest.h>

#include <random>

#include "groundcheck/judge.hpp"
#include "support.hpp"

using namespace gc_test;
using namespace groundcheck::judge;
using llm::FailureKind;
using llm::MockBackend;
using llm::MockStep;

namespace {

std::string reassemble(const std::vector<DocumentChunk>& chunks) {
  std::string out;
  for (const auto& c : chunks) {
    EXPECT_LE(c.offset, out.size());
    out += c.text.substr(out.size() - c.offset);
  }
  return out;
}

}  // namespace

TEST(ParseVerdict, StrictJson) {
  const auto v = parse_verdict(R"({"rationale": "The date matches.", "output": 1})");
  EXPECT_EQ(v.label, 1);
  EXPECT_EQ(v.rationale, "The date matches.");
  EXPECT_EQ(v.mode, ParseMode::Strict);
}

TEST(ParseVerdict, SalvagesFromProseAndTrailingCommas) {
  const auto v = parse_verdict("Sure! Here it is:\n```json\n{\n\"rationale\": \"No support.\",\n\"output\": 0,\n}\n```");
  EXPECT_EQ(v.label, 0);
  EXPECT_EQ(v.rationale, "No support.");
  EXPECT_EQ(v.mode, ParseMode::Salvaged);
}

TEST(ParseVerdict, StringDigitsAreAccepted) {
  EXPECT_EQ(parse_verdict(R"({"output": "1"})").label, 1);
}

TEST(ParseVerdict, RejectsMissingOrOutOfRange) {
  EXPECT_THROW(parse_verdict("I think it is supported."), VerdictParseError);
  EXPECT_THROW(parse_verdict(R"({"output": 2})"), VerdictParseError);
  EXPECT_THROW(parse_verdict(""), VerdictParseError);
}

TEST(Chunking, ShortDocumentIsOneChunk) {
  const auto chunks = chunk_document("short", ChunkingPolicy{});
  ASSERT_EQ(chunks.size(), 1u);
  EXPECT_EQ(chunks[0].text, "short");
}

TEST(Chunking, PrefersParagraphBreaks) {
  std::string doc = std::string(90, 'a') + "\n\n" + std::string(200, 'b');
  const auto chunks = chunk_document(doc, ChunkingPolicy{100, 10, ChunkBoundary::ParagraphPreferred});
  ASSERT_GE(chunks.size(), 2u);
  EXPECT_EQ(chunks[0].text, std::string(90, 'a') + "\n\n");
  EXPECT_EQ(reassemble(chunks), doc);
}

TEST(Chunking, NeverSplitsUtf8Sequences) {
  std::string doc;
  for (int i = 0; i < 500; ++i) doc += "\xc3\xa9\xe2\x82\xac";  // e-acute, euro sign
  const auto chunks = chunk_document(doc, ChunkingPolicy{97, 13, ChunkBoundary::ParagraphPreferred});
  for (const auto& c : chunks) {
    EXPECT_NE(static_cast<unsigned char>(c.text.front()) & 0xC0, 0x80);
    EXPECT_LE(c.text.size(), 97u);
  }
  EXPECT_EQ(reassemble(chunks), doc);
}

TEST(Chunking, RandomizedReassembly) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t len = 1 + rng() % 5000;
    std::string doc;
    while (doc.size() < len) doc += (rng() % 15 == 0) ? "\n\n" : std::string(1, static_cast<char>('a' + rng() % 26));
    const std::size_t max = 10 + rng() % 400;
    const std::size_t overlap = rng() % (max / 2);
    const auto chunks = chunk_document(doc, ChunkingPolicy{max, overlap, ChunkBoundary::ParagraphPreferred});
    EXPECT_EQ(reassemble(chunks), doc);
    for (const auto& c : chunks) EXPECT_LE(c.text.size(), max);
  }
}

TEST(Chunking, PolicyValidation) {
  EXPECT_FALSE(ChunkingPolicy({100, 100, ChunkBoundary::ParagraphPreferred}).validate().empty());
  EXPECT_FALSE(ChunkingPolicy({0, 0, ChunkBoundary::ParagraphPreferred}).validate().empty());
  EXPECT_THROW(chunk_document("abc", ChunkingPolicy{0, 0, ChunkBoundary::ParagraphPreferred}), std::invalid_argument);
  const ChunkingPolicy p{1234, 56, ChunkBoundary::ParagraphPreferred};
  const auto back = chunking_from_json(to_json(p));
  EXPECT_EQ(back.max_chars, 1234u);
  EXPECT_EQ(back.overlap_chars, 56u);
}

TEST(Aggregate, AnySupportingChunkWins) {
  std::vector<ChunkVerdict> v{{0, 0}, {1, 0}, {2, 1}};
  EXPECT_EQ(aggregate_labels(v), 1);
  v[2].label = 0;
  EXPECT_EQ(aggregate_labels(v), 0);
}

TEST(JudgeExample, SingleChunk) {
  const auto xs = bench24();
  auto mock = std::make_shared<MockBackend>(std::vector<MockStep>{MockStep::respond(verdict_json(1, "ok"))});
  auto backend = make_backend(mock);
  const auto o = judge_example(xs[0], backend, prompts::PromptKind::GenerativeChat, ChunkingPolicy{});
  ASSERT_TRUE(o.ok());
  EXPECT_EQ(o.verdict->label, 1);
  EXPECT_EQ(o.verdict->rationale, "ok");
  EXPECT_FALSE(o.verdict->chunk_verdicts);
  EXPECT_EQ(o.template_id, "generative/nli");
  EXPECT_EQ(o.model_id, "mock-model");
}

TEST(JudgeExample, ClassifierSendsFlatText) {
  const auto xs = bench24();
  auto mock = std::make_shared<MockBackend>(std::vector<MockStep>{MockStep::respond(verdict_json(0))});
  auto backend = make_backend(mock);
  judge_example(xs[0], backend, prompts::PromptKind::ClassifierFlat, ChunkingPolicy{});
  const auto reqs = mock->requests();
  ASSERT_EQ(reqs.size(), 1u);
  EXPECT_EQ(reqs[0].messages.back().content, *prompts::render_classifier(xs[0]).flat_text);
}

TEST(JudgeExample, ChunkedDocumentAggregatesByMax) {
  auto e = bench24()[0];
  e.document = std::string(250, 'x');
  std::vector<MockStep> script;
  const auto chunks = chunk_document(e.document, ChunkingPolicy{100, 10, ChunkBoundary::ParagraphPreferred});
  ASSERT_EQ(chunks.size(), 3u);
  script.push_back(MockStep::respond(verdict_json(0, "first")));
  script.push_back(MockStep::respond(verdict_json(1, "second")));
  script.push_back(MockStep::respond(verdict_json(0, "third")));
  auto mock = std::make_shared<MockBackend>(script);
  auto backend = make_backend(mock, mock_profile("m", 1));
  const auto o = judge_example(e, backend, prompts::PromptKind::GenerativeChat,
                               ChunkingPolicy{100, 10, ChunkBoundary::ParagraphPreferred});
  ASSERT_TRUE(o.ok());
  EXPECT_EQ(o.verdict->label, 1);
  EXPECT_EQ(o.verdict->rationale, "second");
  ASSERT_TRUE(o.verdict->chunk_verdicts);
  EXPECT_EQ(o.verdict->chunk_verdicts->size(), 3u);
}

TEST(JudgeExample, UnparseableReplyIsAFailedOutcome) {
  auto mock = std::make_shared<MockBackend>(std::vector<MockStep>{MockStep::respond("no idea")});
  auto backend = make_backend(mock);
  const auto o = judge_example(bench24()[0], backend, prompts::PromptKind::GenerativeChat, ChunkingPolicy{});
  EXPECT_FALSE(o.ok());
  EXPECT_FALSE(o.error.empty());
}

TEST(JudgeExample, ExhaustedRetriesIsAFailedOutcome) {
  auto mock = std::make_shared<MockBackend>(std::vector<MockStep>(3, MockStep::fail(FailureKind::Throttle)));
  auto backend = make_backend(mock);
  const auto o = judge_example(bench24()[0], backend, prompts::PromptKind::GenerativeChat, ChunkingPolicy{});
  EXPECT_FALSE(o.ok());
  EXPECT_EQ(mock->call_count(), 3u);
}

TEST(JudgeExample, PermanentErrorPropagates) {
  auto mock = std::make_shared<MockBackend>(std::vector<MockStep>{MockStep::fail(FailureKind::Auth)});
  auto backend = make_backend(mock);
  EXPECT_THROW(judge_example(bench24()[0], backend, prompts::PromptKind::GenerativeChat, ChunkingPolicy{}),
               llm::PermanentBackendError);
}

TEST(JudgeAll, InputOrderAndReuse) {
  const auto xs = bench24();
  std::map<std::string, int> labels;
  for (const auto& e : xs) labels[e.id] = *e.label;
  auto mock = std::make_shared<MockBackend>(scripted_judge(xs, labels));
  auto backend = make_backend(mock);
  const auto first = judge_all(xs, backend, JudgeBatchOptions{});
  ASSERT_EQ(first.size(), xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    EXPECT_EQ(first[i].id, xs[i].id);
    ASSERT_TRUE(first[i].ok());
    EXPECT_EQ(first[i].verdict->label, *xs[i].label);
  }
  EXPECT_EQ(mock->call_count(), 24u);

  std::vector<JudgeOutcome> partial(first.begin(), first.begin() + 20);
  judge_all(xs, backend, JudgeBatchOptions{}, partial);
  EXPECT_EQ(mock->call_count(), 28u);

  // A different template kind invalidates reuse.
  judge_all(xs, backend, JudgeBatchOptions{prompts::PromptKind::ClassifierFlat, {}, 4}, first);
  EXPECT_EQ(mock->call_count(), 52u);
}

TEST(Verdicts, SidecarRoundTrip) {
  TempDir dir;
  JudgeOutcome ok;
  ok.id = "a";
  ok.template_id = "generative/nli";
  ok.template_version = "abc";
  ok.model_id = "m";
  ok.verdict = Verdict{1, std::string("fine"), "{\"output\":1}", ParseMode::Strict,
                       std::vector<ChunkVerdict>{{0, 0}, {1, 1}}};
  JudgeOutcome bad;
  bad.id = "b";
  bad.error = "unparseable";
  std::vector<JudgeOutcome> v{ok, bad};
  write_verdicts(dir / "v.jsonl", v);
  const auto back = read_verdicts(dir / "v.jsonl");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].verdict->label, 1);
  EXPECT_EQ(back[0].verdict->rationale, "fine");
  EXPECT_EQ(back[0].verdict->chunk_verdicts->size(), 2u);
  EXPECT_EQ(back[0].template_version, "abc");
  EXPECT_FALSE(back[1].ok());
  EXPECT_EQ(back[1].error, "unparseable");
}
