#include <cstdlib>
#include <fstream>
#include <sstream>

#include "gtest/gtest.h"

#include "ivapcal/data.hpp"
#include "ivapcal/error.hpp"
#include "ivapcal/scorer_client.hpp"
#include "stub_server.hpp"

namespace ivapcal::scorer {
namespace {

using testing::StubLogprobServer;
namespace fs = std::filesystem;

const StubLogprobServer::Vocabulary kVocab{{"_Yes", 2.0}, {"_No", 0.5}, {"_Maybe", -1.0}, {"_the", -3.0}};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class ScorerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    ::setenv("IVAPCAL_TEST_TOKEN", "sekrit", 1);
    ::unsetenv("IVAPCAL_TEST_UNSET");
    config.base_url = server.url();
    config.auth_token_env = "IVAPCAL_TEST_TOKEN";
    config.model = "stub";
    config.initial_backoff = std::chrono::milliseconds(1);
    config.timeout = std::chrono::milliseconds(5000);
    server.set_default_logits(kVocab);
    dir = fs::temp_directory_path() /
          ("ivapcal_scorer_" + std::to_string(::getpid()) + "_" +
           ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  std::vector<DatasetExample> examples(int n) {
    std::vector<DatasetExample> out;
    for (int i = 0; i < n; ++i) {
      const auto id = "q" + std::to_string(i);
      out.push_back({id, {{"context", "c" + id}, {"question", id + "?"}}, i % 2});
      server.set_logits(build_prompt(out.back().fields, boolq_template()),
                        {{"_Yes", 0.1 * i}, {"_No", 1.0 - 0.05 * i}, {"_x", -2.0}});
    }
    return out;
  }

  StubLogprobServer server;
  ScorerConfig config;
  fs::path dir;
};

TEST_F(ScorerTest, ExtractsBothTokensVerbatim) {
  const auto logits = fetch_logits(config, "p");
  ASSERT_EQ(logits.size(), 2u);
  EXPECT_EQ(logits.at("_Yes"), StubLogprobServer::log_softmax(kVocab, "_Yes"));
  EXPECT_EQ(logits.at("_No"), StubLogprobServer::log_softmax(kVocab, "_No"));
}

TEST_F(ScorerTest, MissingTokenIsFilled) {
  const StubLogprobServer::Vocabulary vocab{{"_Yes", 2.0}, {"_Maybe", 1.0}, {"_No", -5.0}};
  server.set_default_logits(vocab);
  config.top_logprobs = 2;
  const auto logits = fetch_logits(config, "p");
  EXPECT_EQ(logits.at("_Yes"), StubLogprobServer::log_softmax(vocab, "_Yes"));
  EXPECT_EQ(logits.at("_No"), -1e4);
  config.error_on_missing_token = true;
  EXPECT_THROW(fetch_logits(config, "p"), ValidationError);
}

TEST_F(ScorerTest, RequestShapeAndCredential) {
  config.top_logprobs = 5;
  fetch_logits(config, "hello");
  ASSERT_EQ(server.bodies().size(), 1u);
  const auto body = server.bodies()[0];
  EXPECT_EQ(body.at("max_tokens"), 1);
  EXPECT_EQ(body.at("logprobs"), 5);
  EXPECT_EQ(body.at("temperature"), 0);
  EXPECT_EQ(body.at("prompt"), "hello");
  EXPECT_EQ(body.at("model"), "stub");
  EXPECT_EQ(server.auth_headers()[0], "Bearer sekrit");
}

TEST_F(ScorerTest, RetriesTransientFailures) {
  server.fail_next(2);
  const auto logits = fetch_logits(config, "p");
  EXPECT_EQ(logits.size(), 2u);
  EXPECT_EQ(server.requests(), 3);
}

TEST_F(ScorerTest, GivesUpAfterMaxRetries) {
  config.max_retries = 2;
  server.fail_next(10);
  EXPECT_THROW(fetch_logits(config, "p"), TransportError);
  EXPECT_EQ(server.requests(), 3);
}

TEST_F(ScorerTest, UnreachableEndpointIsTransportError) {
  config.base_url = "http://127.0.0.1:1/v1/completions";
  config.max_retries = 1;
  EXPECT_THROW(fetch_logits(config, "p"), TransportError);
}

TEST_F(ScorerTest, MalformedResponse) {
  server.set_garbage(true);
  EXPECT_THROW(fetch_logits(config, "p"), ValidationError);
  EXPECT_THROW(parse_top_logprobs(nlohmann::json{{"choices", nlohmann::json::array()}}), ValidationError);
}

TEST_F(ScorerTest, MissingCredentialSendsNothing) {
  config.auth_token_env = "IVAPCAL_TEST_UNSET";
  EXPECT_THROW(fetch_logits(config, "p"), ValidationError);
  EXPECT_THROW(fetch_dataset(config, examples(3), boolq_template(), dir / "out.jsonl"), ValidationError);
  EXPECT_EQ(server.requests(), 0);
}

TEST_F(ScorerTest, FetchDatasetWritesRecordsInInputOrder) {
  const auto ex = examples(9);
  const auto out = dir / "out.jsonl";
  const auto result = fetch_dataset(config, ex, boolq_template(), out);
  EXPECT_EQ(result.summary.succeeded, 9u);
  EXPECT_EQ(result.summary.failed, 0u);
  ASSERT_EQ(result.records.size(), 9u);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(result.records[i].id, ex[i].id);
    EXPECT_EQ(result.records[i].label, ex[i].label);
  }
  EXPECT_EQ(data::read_records(out, RecordFormat::jsonl), result.records);
  EXPECT_TRUE(fs::exists(journal_path_for(out)));
}

TEST_F(ScorerTest, ResumeSkipsCompletedAndIsByteIdentical) {
  const auto ex = examples(8);
  const auto out = dir / "out.jsonl";
  fetch_dataset(config, std::span(ex).first(5), boolq_template(), out);
  EXPECT_EQ(server.requests(), 5);

  const auto second = fetch_dataset(config, ex, boolq_template(), out);
  EXPECT_EQ(server.requests(), 8);
  EXPECT_EQ(second.summary.skipped, 5u);
  EXPECT_EQ(second.summary.succeeded, 3u);

  const auto fresh = dir / "fresh.jsonl";
  fetch_dataset(config, ex, boolq_template(), fresh);
  EXPECT_EQ(slurp(out), slurp(fresh));

  // A completed rerun issues no requests and rewrites the same bytes.
  const auto before = server.requests();
  fetch_dataset(config, ex, boolq_template(), out);
  EXPECT_EQ(server.requests(), before);
  EXPECT_EQ(slurp(out), slurp(fresh));
}

TEST_F(ScorerTest, FailuresAreJournaledAndRetriedOnRerun) {
  const auto ex = examples(4);
  const auto out = dir / "out.jsonl";
  config.max_in_flight = 1;
  config.max_retries = 0;
  server.fail_next(1);
  const auto first = fetch_dataset(config, ex, boolq_template(), out);
  EXPECT_EQ(first.summary.failed, 1u);
  EXPECT_EQ(first.records.size(), 3u);
  EXPECT_NE(slurp(journal_path_for(out)).find("\"error\""), std::string::npos);

  const auto second = fetch_dataset(config, ex, boolq_template(), out);
  EXPECT_EQ(second.summary.requested, 1u);
  EXPECT_EQ(second.records.size(), 4u);
}

TEST_F(ScorerTest, ConcurrencyBound) {
  server.set_delay(std::chrono::milliseconds(20));
  config.max_in_flight = 1;
  fetch_dataset(config, examples(6), boolq_template(), dir / "a.jsonl");
  EXPECT_EQ(server.max_concurrent(), 1);
}

TEST_F(ScorerTest, ConcurrentFetchMatchesSerial) {
  server.set_delay(std::chrono::milliseconds(5));
  const auto ex = examples(12);
  config.max_in_flight = 4;
  fetch_dataset(config, ex, boolq_template(), dir / "par.jsonl");
  EXPECT_LE(server.max_concurrent(), 4);
  config.max_in_flight = 1;
  fetch_dataset(config, ex, boolq_template(), dir / "ser.jsonl");
  EXPECT_EQ(slurp(dir / "par.jsonl"), slurp(dir / "ser.jsonl"));
}

TEST_F(ScorerTest, EmptyInputMakesNoRequests) {
  const auto result = fetch_dataset(config, std::vector<DatasetExample>{}, boolq_template(), dir / "e.jsonl");
  EXPECT_TRUE(result.records.empty());
  EXPECT_EQ(server.requests(), 0);
  EXPECT_EQ(slurp(dir / "e.jsonl"), "");
}

TEST_F(ScorerTest, AnswerTokenSpellingMatters) {
  server.set_default_logits({{"_Yes", 2.0}, {"_No", 0.5}, {"Yes", -4.0}, {"No", -1.0}});
  const auto spaced = fetch_logits(config, "p");
  config.answer_tokens = parse_answer_tokens("Yes,No");
  const auto bare = fetch_logits(config, "p");
  EXPECT_NE(data::softmax2(spaced.at("_Yes"), spaced.at("_No"), 1.0),
            data::softmax2(bare.at("Yes"), bare.at("No"), 1.0));
}

// Log-softmax shifts both logits by the same constant, so softmax2 is unchanged.
TEST_F(ScorerTest, LogprobsGiveSameTwoWaySoftmaxAsRawLogits) {
  const auto logits = fetch_logits(config, "p");
  for (double tau : {0.5, 1.0, 7.0})
    EXPECT_NEAR(data::softmax2(logits.at("_Yes"), logits.at("_No"), tau),
                data::softmax2(kVocab.at("_Yes"), kVocab.at("_No"), tau), 1e-12);
}

TEST(Prompt, BoolqExample) {
  const std::map<std::string, std::string> fields{
      {"context",
       "The Air Force usually does not have fighter aircraft escort the presidential aircraft over the United "
       "States but it has occurred, for example during the attack on the World Trade Center."},
      {"question", "Does air force one travel with fighter escort?"}};
  EXPECT_EQ(build_prompt(fields, boolq_template()),
            "Context:\n\"The Air Force usually does not have fighter aircraft escort the presidential aircraft over "
            "the United States but it has occurred, for example during the attack on the World Trade Center.\"\n"
            "Question: \"Does air force one travel with fighter escort?\"\nYes or No?\nAnswer:");
}

TEST(Prompt, SubstitutionRules) {
  EXPECT_EQ(build_prompt({{"context", ""}, {"question", "q"}, {"extra", "x"}}, boolq_template()),
            "Context:\n\"\"\nQuestion: \"q\"\nYes or No?\nAnswer:");
  EXPECT_THROW(build_prompt({{"context", "c"}}, boolq_template()), ValidationError);
  EXPECT_EQ(boolq_template().placeholders(), (std::vector<std::string>{"context", "question"}));
  EXPECT_EQ(sentiment_template().placeholders(), (std::vector<std::string>{"review"}));
  const auto s = build_prompt({{"review", "great"}}, sentiment_template());
  EXPECT_EQ(s.substr(s.size() - 7), "Answer:");
}

TEST(Tokens, Normalization) {
  EXPECT_EQ(normalize_token("_Yes"), "_Yes");
  EXPECT_EQ(normalize_token(" Yes"), "_Yes");
  EXPECT_EQ(normalize_token("\xE2\x96\x81Yes"), "_Yes");
  EXPECT_EQ(normalize_token("\xC4\xA0Yes"), "_Yes");
  EXPECT_EQ(normalize_token("Yes"), "Yes");
  const auto t = parse_answer_tokens("Yes,No");
  EXPECT_EQ(t.pos, "Yes");
  EXPECT_EQ(t.neg, "No");
  EXPECT_THROW(parse_answer_tokens("Yes"), ValidationError);
  EXPECT_THROW(parse_answer_tokens("Yes,Yes"), ValidationError);
}

TEST(Response, ChatShape) {
  const auto doc = nlohmann::json::parse(R"({"choices":[{"logprobs":{"content":[{"token":"Yes","logprob":-0.1,
      "top_logprobs":[{"token":"Yes","logprob":-0.1},{"token":" No","logprob":-2.5}]}]}}]})");
  const auto top = parse_top_logprobs(doc);
  EXPECT_EQ(top.at("Yes"), -0.1);
  ScorerConfig cfg;
  cfg.answer_tokens = {"Yes", "_No"};
  const auto picked = extract_answer_logits(cfg, top);
  EXPECT_EQ(picked.at("Yes"), -0.1);
  EXPECT_EQ(picked.at("_No"), -2.5);
}

TEST(Config, Validation) {
  ScorerConfig cfg;
  cfg.base_url = "http://localhost:9";
  cfg.model = "m";
  EXPECT_NO_THROW(validate(cfg));
  auto bad = cfg;
  bad.max_in_flight = 0;
  EXPECT_THROW(validate(bad), ValidationError);
  bad = cfg;
  bad.top_logprobs = 0;
  EXPECT_THROW(validate(bad), ValidationError);
  bad = cfg;
  bad.base_url = "ftp://x";
  EXPECT_THROW(validate(bad), ValidationError);
}

}  // namespace
}  // namespace ivapcal::scorer
