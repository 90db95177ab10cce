#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "gtest/gtest.h"

#include "ivapcal/data.hpp"
#include "ivapcal/error.hpp"
#include "ivapcal/random.hpp"

namespace ivapcal {
namespace {

std::vector<LogitRecord> parse_jsonl(const std::string& text) {
  std::istringstream in(text);
  return data::parse_records_jsonl(in, "test.jsonl");
}

std::vector<LogitRecord> numbered(std::size_t n) {
  std::vector<LogitRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    LogitRecord r;
    r.id = "r" + std::to_string(i);
    r.u_pos = static_cast<double>(i) * 0.1;
    r.label = static_cast<int>(i % 2);
    out.push_back(r);
  }
  return out;
}

TEST(ReadRecords, MinimalLine) {
  const auto recs = parse_jsonl(R"({"id":"q1","u_pos":2.0,"u_neg":0.0,"label":1})");
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].id, "q1");
  EXPECT_EQ(recs[0].u_pos, 2.0);
  EXPECT_EQ(recs[0].u_neg, 0.0);
  EXPECT_EQ(recs[0].label, 1);
  EXPECT_FALSE(recs[0].full_logits.has_value());
  EXPECT_FALSE(recs[0].true_posterior.has_value());
}

TEST(ReadRecords, BadLabelNamesLine) {
  try {
    parse_jsonl("{\"id\":\"a\",\"u_pos\":1,\"u_neg\":0,\"label\":1}\n{\"id\":\"b\",\"u_pos\":1,\"u_neg\":0,\"label\":2}\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("test.jsonl:2"), std::string::npos);
  }
}

TEST(ReadRecords, FullLogitsMustAgreeWithAnswerLogits) {
  EXPECT_NO_THROW(parse_jsonl(
      R"({"id":"a","u_pos":2.0,"u_neg":1.0,"label":0,"full_logits":[0.0,2.0,1.0],"pos_index":1,"neg_index":2})"));
  EXPECT_THROW(parse_jsonl(
                   R"({"id":"a","u_pos":1.5,"u_neg":1.0,"label":0,"full_logits":[0.0,2.0,1.0],"pos_index":1,"neg_index":2})"),
               ParseError);
  EXPECT_THROW(parse_jsonl(
                   R"({"id":"a","u_pos":2.0,"u_neg":2.0,"label":0,"full_logits":[0.0,2.0,1.0],"pos_index":1,"neg_index":1})"),
               ParseError);
  EXPECT_THROW(parse_jsonl(R"({"id":"a","u_pos":2.0,"u_neg":1.0,"label":0,"full_logits":[0.0,2.0,1.0]})"),
               ParseError);
}

TEST(ReadRecords, Errors) {
  EXPECT_THROW(parse_jsonl(R"({"id":"a","u_pos":1,"label":1})"), ParseError);                   // missing u_neg
  EXPECT_THROW(parse_jsonl(R"({"id":"a","u_pos":1,"u_neg":0,"label":1)"), ParseError);          // malformed
  EXPECT_THROW(parse_jsonl("{\"id\":\"a\",\"u_pos\":1,\"u_neg\":0,\"label\":1}\n"
                           "{\"id\":\"a\",\"u_pos\":2,\"u_neg\":0,\"label\":0}\n"),
               ParseError);                                                                    // duplicate id
  EXPECT_THROW(parse_jsonl(R"({"id":"a","u_pos":1,"u_neg":0,"label":1,"true_posterior":1.5})"), ParseError);
  std::istringstream csv("id,u_pos,u_neg,label\na,inf,0,1\n");
  EXPECT_THROW(data::parse_records_csv(csv, "x.csv"), ParseError);
}

TEST(ReadRecords, CsvFormat) {
  std::istringstream csv(
      "id,u_pos,u_neg,label,true_posterior,full_logits,pos_index,neg_index\n"
      "\"q,1\",2,0,1,0.75,,,\n"
      "q2,2,1,0,,0 2 1,1,2\n");
  const auto recs = data::parse_records_csv(csv, "x.csv");
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].id, "q,1");
  EXPECT_EQ(recs[0].true_posterior, 0.75);
  ASSERT_TRUE(recs[1].full_logits.has_value());
  EXPECT_EQ(*recs[1].full_logits, (std::vector<double>{0, 2, 1}));
  EXPECT_EQ(recs[1].pos_index, 1u);
}

TEST(WriteRecords, JsonlRoundTripIsExact) {
  PortableRng rng(3);
  std::vector<LogitRecord> recs;
  for (int i = 0; i < 200; ++i) {
    LogitRecord r;
    r.id = "id\"" + std::to_string(i);
    r.u_pos = (rng.uniform() - 0.5) * std::pow(10.0, static_cast<int>(rng.below(40)) - 20);
    r.u_neg = rng.normal();
    r.label = static_cast<int>(rng.below(2));
    if (i % 3 == 0) r.true_posterior = rng.uniform();
    if (i % 5 == 0) {
      r.full_logits = std::vector<double>{rng.normal(), r.u_pos, rng.normal(), r.u_neg};
      r.pos_index = 1;
      r.neg_index = 3;
    }
    recs.push_back(r);
  }
  std::stringstream buf;
  data::write_records_jsonl(recs, buf);
  EXPECT_EQ(data::parse_records_jsonl(buf), recs);
}

TEST(Split, FloorRuleSizes) {
  EXPECT_EQ(data::calibration_size(12697, 0.2), 2539u);
  EXPECT_EQ(12697u - data::calibration_size(12697, 0.2), 10158u);
}

TEST(Split, EmptySideIsAnError) {
  EXPECT_THROW(data::calibration_size(10, 0.05), ValidationError);
  EXPECT_THROW(data::split(numbered(1), {0, 0.5}), ValidationError);
  EXPECT_THROW(data::split(numbered(10), {0, 1.0}), ValidationError);
  EXPECT_THROW(data::split(numbered(10), {0, 0.0}), ValidationError);
}

TEST(Split, DeterministicPartition) {
  const auto recs = numbered(10);
  const auto a = data::split(recs, {42, 0.2});
  const auto b = data::split(recs, {42, 0.2});
  EXPECT_EQ(a.calibration, b.calibration);
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.calibration.size(), 2u);
  EXPECT_EQ(a.test.size(), 8u);

  std::set<std::string> ids;
  for (const auto& r : a.calibration) ids.insert(r.id);
  for (const auto& r : a.test) EXPECT_TRUE(ids.insert(r.id).second) << "overlap on " << r.id;
  EXPECT_EQ(ids.size(), recs.size());
}

TEST(Split, IndependentOfInputOrder) {
  auto recs = numbered(50);
  const auto a = data::split(recs, {9, 0.3});
  std::reverse(recs.begin(), recs.end());
  const auto b = data::split(recs, {9, 0.3});
  EXPECT_EQ(a.calibration, b.calibration);
  EXPECT_EQ(a.test, b.test);
  const auto c = data::split(recs, {10, 0.3});
  EXPECT_NE(a.calibration, c.calibration);
}

TEST(Split, RejectsDuplicateIds) {
  auto recs = numbered(5);
  recs[3].id = recs[1].id;
  EXPECT_THROW(data::split(recs, {0, 0.4}), ValidationError);
}

TEST(TransformScores, Softmax2) {
  EXPECT_EQ(data::softmax2(1.3, 1.3, 0.7), 0.5);
  EXPECT_EQ(data::softmax2(-4.0, -4.0, 40.0), 0.5);
  EXPECT_NEAR(data::softmax2(2.0, 0.0, 1.0), 0.8807970779778823, 1e-16);
  EXPECT_NEAR(data::softmax2(0.0, 2.0, 1.0), 0.11920292202211755, 1e-17);
  EXPECT_GT(data::softmax2(-800.0, 0.0, 1.0), 0.0 - 1e-300);
  EXPECT_EQ(data::softmax2(800.0, 0.0, 1.0), 1.0);
  EXPECT_THROW(data::softmax2(1, 0, 0.0), ValidationError);
  EXPECT_THROW(data::softmax2(1, 0, -1.0), ValidationError);
}

TEST(TransformScores, SoftmaxKUniformAndOverflowSafe) {
  const std::vector<double> equal(4, 3.0);
  for (double tau : {0.01, 1.0, 100.0}) EXPECT_NEAR(data::softmax_k(equal, 2, tau), 0.25, 1e-15);
  const std::vector<double> big{1000.0, 999.0, -1000.0};
  const double p = data::softmax_k(big, 0, 1.0);
  EXPECT_TRUE(std::isfinite(p));
  EXPECT_NEAR(p, 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
}

TEST(TransformScores, SoftmaxKRequiresFullLogits) {
  const auto recs = numbered(3);
  EXPECT_THROW(data::transform_scores(recs, ScoreKind::softmaxK, 1.0), ValidationError);
  EXPECT_THROW(data::transform_scores(recs, ScoreKind::softmax2, 0.0), ValidationError);
}

TEST(TransformScores, PreservesOrderAndLabels) {
  const auto recs = numbered(7);
  const auto scored = data::transform_scores(recs, ScoreKind::softmax2, 2.0);
  ASSERT_EQ(scored.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(scored[i].label, recs[i].label);
    EXPECT_EQ(scored[i].score, data::softmax2(recs[i].u_pos, recs[i].u_neg, 2.0));
  }
}

// Sort order of softmax-2 scores does not depend on the temperature while the
// probabilities stay clear of rounding to 1.
TEST(TransformScores, RankOrderInvariantAcrossTemperatures) {
  PortableRng rng(11);
  std::vector<LogitRecord> recs;
  for (int i = 0; i < 300; ++i) {
    LogitRecord r;
    r.id = std::to_string(i);
    r.u_pos = rng.normal();
    r.u_neg = rng.normal();
    recs.push_back(r);
  }
  auto permutation = [&](double tau) {
    const auto s = data::scores_of(data::transform_scores(recs, ScoreKind::softmax2, tau));
    std::vector<std::size_t> idx(s.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return s[a] < s[b]; });
    return idx;
  };
  const auto base = permutation(1.0);
  for (double tau : {0.5, 10.0, 100.0}) EXPECT_EQ(permutation(tau), base) << "tau=" << tau;
}

TEST(ScoresCsv, Format) {
  std::ostringstream out;
  const std::vector<ScoredExample> ex{{0.25, 1}, {0.1, 0}};
  data::write_scores_csv(ex, out);
  EXPECT_EQ(out.str(), "score,label\n0.25,1\n0.10000000000000001,0\n");

  std::ostringstream empty;
  data::write_scores_csv(std::vector<ScoredExample>{}, empty);
  EXPECT_EQ(empty.str(), "score,label\n");
}

TEST(ScoresCsv, RoundTripIsBitExact) {
  PortableRng rng(5);
  std::vector<ScoredExample> ex;
  for (int i = 0; i < 500; ++i) ex.push_back({rng.normal() * std::pow(10.0, static_cast<int>(rng.below(30)) - 15),
                                              static_cast<int>(rng.below(2))});
  const auto path = std::filesystem::temp_directory_path() / "ivapcal_scores_roundtrip.csv";
  data::write_scores_csv(ex, path);
  EXPECT_EQ(data::read_scores_csv(path), ex);
  std::filesystem::remove(path);
}

TEST(ScoresCsv, RejectsBadRows) {
  std::istringstream bad_header("s,l\n1,0\n");
  EXPECT_THROW(data::parse_scores_csv(bad_header), ParseError);
  std::istringstream bad_label("score,label\n0.5,3\n");
  EXPECT_THROW(data::parse_scores_csv(bad_label), ParseError);
}

TEST(ReadRecords, MissingFileIsIoError) {
  EXPECT_THROW(data::read_records("/nonexistent/path.jsonl", RecordFormat::jsonl), IoError);
}

}  // namespace
}  // namespace ivapcal
