#include <gtest/gtest.h>

#include "groundcheck/util.hpp"
#include "support.hpp"

using namespace gc_test;

namespace {

Example nli(std::string id = "x/test/0") {
  Example e;
  e.id = std::move(id);
  e.task = TaskFormat::Nli;
  e.document = "The sky is blue.";
  e.conversation = {Turn::assistant("The sky is blue.")};
  e.label = 1;
  e.source = "x";
  return e;
}

bool has_message(const std::vector<std::string>& v, const std::string& needle) {
  for (const auto& s : v) {
    if (s.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

TEST(Schema, FixtureBenchIsValid) {
  const auto xs = bench24();
  ASSERT_EQ(xs.size(), 24u);
  for (const auto& e : xs) EXPECT_TRUE(validate_example(e).empty()) << e.id;
}

TEST(Schema, NliWithTwoTurnsIsRejected) {
  auto e = nli();
  e.conversation.push_back(Turn::assistant("More."));
  EXPECT_TRUE(has_message(validate_example(e), "NLI requires exactly one assistant turn"));
}

TEST(Schema, LabelOutOfRange) {
  auto e = nli();
  e.label = 2;
  EXPECT_TRUE(has_message(validate_example(e), "label must be 0 or 1"));
}

TEST(Schema, QaNeedsUserThenAssistant) {
  auto e = nli();
  e.task = TaskFormat::Qa;
  e.conversation = {Turn::assistant("a"), Turn::user("q")};
  EXPECT_TRUE(has_message(validate_example(e), "QA requires exactly [user, assistant] turns"));
}

TEST(Schema, DialogueMustAlternateAndEndWithAssistant) {
  auto e = nli();
  e.task = TaskFormat::Dialogue;
  e.conversation = {Turn::user("hi")};
  EXPECT_TRUE(has_message(validate_example(e), "Dialogue requires at least 2 turns"));
  e.conversation = {Turn::user("hi"), Turn::user("hello?"), Turn::assistant("yes")};
  EXPECT_FALSE(validate_example(e).empty());
  e.conversation = {Turn::user("hi"), Turn::assistant("hello"), Turn::user("ok")};
  EXPECT_FALSE(validate_example(e).empty());
  e.conversation = {Turn::user("hi"), Turn::assistant("hello")};
  EXPECT_TRUE(validate_example(e).empty());
}

TEST(Schema, EmptyFieldsAreReported) {
  auto e = nli("  ");
  e.document = "";
  EXPECT_GE(validate_example(e).size(), 2u);
  e.document = " ";  // only the content is trimmed
  EXPECT_EQ(validate_example(e).size(), 1u);
}

TEST(Schema, RoundTripPreservesEverythingIncludingUnknownFields) {
  auto e = nli();
  e.hallucination_type = HallucinationErrorType::Invented;
  e.rationale = "because";
  e.meta = json{{"k", 1}};
  e.language = Language::Es;
  auto j = to_json(e);
  j["future_field"] = {1, 2, 3};
  const auto back = example_from_json(j);
  EXPECT_EQ(back.extra["future_field"], json({1, 2, 3}));
  auto back_j = to_json(back);
  EXPECT_EQ(back_j, j);
  Example stripped = back;
  stripped.extra = json::object();
  EXPECT_EQ(stripped, e);
}

TEST(Schema, SerializationIsDeterministic) {
  const auto xs = bench24();
  for (const auto& e : xs) {
    EXPECT_EQ(serialize_record(e), serialize_record(example_from_json(json::parse(serialize_record(e)))));
  }
}

TEST(Schema, MalformedRecordsThrowRecordError) {
  EXPECT_THROW(example_from_json(json{{"id", "a"}}), RecordError);
  auto j = to_json(nli());
  j["task"] = "poetry";
  EXPECT_THROW(example_from_json(j), RecordError);
}

TEST(Schema, ReadRecordsNamesLineAndId) {
  TempDir dir;
  const auto path = dir / "bad.records";
  auto bad = nli("bad/test/7");
  bad.label = 5;
  util::atomic_write_file(path, serialize_record(nli()) + "\n\n" + to_json(bad).dump() + "\n");
  try {
    read_records(path);
    FAIL() << "expected an error";
  } catch (const std::exception& ex) {
    const std::string what = ex.what();
    EXPECT_NE(what.find("line 3"), std::string::npos) << what;
    EXPECT_NE(what.find("bad/test/7"), std::string::npos) << what;
  }
  util::atomic_write_file(path, "{not json\n");
  EXPECT_THROW(read_records(path), std::exception);
}

TEST(Schema, WriteRecordsRefusesInvalidBatchWithoutTouchingFile) {
  TempDir dir;
  const auto path = dir / "out.records";
  std::vector<Example> xs{nli("a"), nli("b")};
  xs[1].label = 3;
  EXPECT_THROW(write_records(path, xs), std::exception);
  EXPECT_FALSE(fs::exists(path));
  xs[1].label = 0;
  EXPECT_EQ(write_records(path, xs), 2u);
  EXPECT_EQ(read_records(path), xs);
}

TEST(Schema, EnumNamesRoundTrip) {
  for (auto t : kAllErrorTypes) EXPECT_EQ(parse_error_type(to_string(t)), t);
  for (auto t : {TaskFormat::Nli, TaskFormat::Qa, TaskFormat::Dialogue, TaskFormat::Summarization}) {
    EXPECT_EQ(parse_task_format(to_string(t)), t);
  }
  EXPECT_THROW(parse_language("fr"), std::invalid_argument);
}

TEST(Util, NormalizeAndHash) {
  EXPECT_EQ(util::normalize_for_comparison("  The  Cat\n sat "), "the cat sat");
  EXPECT_EQ(util::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Util, ParallelForVisitsEachIndexAndRethrows) {
  std::vector<int> seen(1000, 0);
  util::parallel_for(seen.size(), 8, [&](std::size_t i) { seen[i] += 1; });
  for (int s : seen) EXPECT_EQ(s, 1);
  EXPECT_THROW(util::parallel_for(10, 3,
                                  [](std::size_t i) {
                                    if (i == 4) throw std::runtime_error("boom");
                                  }),
               std::runtime_error);
}
