#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ivapcal {

// How a record's answer-token logits become a positive-class score.
//   softmax2: logistic of the pos/neg logit margin.
//   softmaxK: the positive token's share of the full-vocabulary softmax.
enum class ScoreKind { softmax2, softmaxK };

std::string_view to_string(ScoreKind kind);
ScoreKind parse_score_kind(std::string_view text);

enum class RecordFormat { jsonl, csv };

RecordFormat parse_record_format(std::string_view text);

// One labeled example with its answer-token logits (natural-log scale).
struct LogitRecord {
  std::string id;
  double u_pos = 0.0;
  double u_neg = 0.0;
  std::optional<std::vector<double>> full_logits;
  std::optional<std::size_t> pos_index;
  std::optional<std::size_t> neg_index;
  int label = 0;
  std::optional<double> true_posterior;

  bool operator==(const LogitRecord&) const = default;
};

// Throws ValidationError if the record breaks a field invariant.
void validate(const LogitRecord& record);

struct ScoredExample {
  double score = 0.0;
  int label = 0;

  bool operator==(const ScoredExample&) const = default;
};

struct SplitSpec {
  std::uint64_t seed = 0;
  double calibration_fraction = 0.2;
};

struct Split {
  std::vector<LogitRecord> calibration;
  std::vector<LogitRecord> test;
};

namespace data {

// Records in file order. Malformed input raises ParseError carrying the line.
std::vector<LogitRecord> read_records(const std::filesystem::path& path, RecordFormat format);
std::vector<LogitRecord> parse_records_jsonl(std::istream& in, const std::string& source = "<stream>");
std::vector<LogitRecord> parse_records_csv(std::istream& in, const std::string& source = "<stream>");

void write_records_jsonl(std::span<const LogitRecord> records, const std::filesystem::path& path);
void write_records_jsonl(std::span<const LogitRecord> records, std::ostream& out);
std::string to_jsonl_line(const LogitRecord& record);

// floor(fraction * n); throws when either side of the split would be empty.
std::size_t calibration_size(std::size_t n, double calibration_fraction);

// Sorts by id, Fisher-Yates shuffles with the seed, then takes the first
// calibration_size() records as the calibration side.
Split split(std::span<const LogitRecord> records, const SplitSpec& spec);

double softmax2(double u_pos, double u_neg, double tau);
double softmax_k(std::span<const double> logits, std::size_t index, double tau);

double score(const LogitRecord& record, ScoreKind kind, double tau);
std::vector<ScoredExample> transform_scores(std::span<const LogitRecord> records, ScoreKind kind,
                                            double tau);

// Header `score,label`; 17 significant digits.
void write_scores_csv(std::span<const ScoredExample> examples, const std::filesystem::path& path);
void write_scores_csv(std::span<const ScoredExample> examples, std::ostream& out);
std::vector<ScoredExample> read_scores_csv(const std::filesystem::path& path);
std::vector<ScoredExample> parse_scores_csv(std::istream& in, const std::string& source = "<stream>");

std::vector<int> labels_of(std::span<const ScoredExample> examples);
std::vector<double> scores_of(std::span<const ScoredExample> examples);

// %.17g, which round-trips every finite double.
std::string format_double(double value);

// Splits one CSV line, honoring double-quoted fields.
std::vector<std::string> split_csv_line(std::string_view line);

}  // namespace data
}  // namespace ivapcal
