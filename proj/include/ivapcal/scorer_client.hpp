#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ivapcal/data.hpp"
#include "ivapcal/error.hpp"

namespace ivapcal::scorer {

struct AnswerTokens {
  std::string pos = "_Yes";
  std::string neg = "_No";
};

// Parses "pos,neg".
AnswerTokens parse_answer_tokens(std::string_view text);

struct ScorerConfig {
  // Full completion endpoint, e.g. http://host:8000/v1/completions. A URL
  // without a path gets /v1/completions.
  std::string base_url;
  // Name of the environment variable that holds the bearer token.
  std::string auth_token_env = "IVAPCAL_API_KEY";
  std::string model;
  AnswerTokens answer_tokens;
  int top_logprobs = 20;
  std::chrono::milliseconds timeout{30000};
  int max_in_flight = 4;
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{500};
  // Logit assigned to an answer token missing from the top-L list.
  double missing_token_fill = -1e4;
  // Treat a missing answer token as an error instead of filling it.
  bool error_on_missing_token = false;
};

void validate(const ScorerConfig& config);

struct PromptTemplate {
  std::string text;

  // Placeholder names in order of first appearance.
  std::vector<std::string> placeholders() const;
};

// BoolQ-style prompt: Context / Question / "Yes or No?" / "Answer:".
PromptTemplate boolq_template();
// Sentiment prompt: Film review / "Is the review positive or negative?" / "Answer:".
PromptTemplate sentiment_template();

// Substitutes every {name} from fields. Unused fields are ignored; a
// placeholder without a value throws ValidationError.
std::string build_prompt(const std::map<std::string, std::string>& fields,
                         const PromptTemplate& prompt_template);

// Canonical form for comparing answer tokens: a leading '_', U+2581 or space
// marks a start-of-word token and is normalized to '_'.
std::string normalize_token(std::string_view token);

// JSON body of a single-token completion request.
nlohmann::json make_request(const ScorerConfig& config, const std::string& prompt);

// Token -> logprob map for the first generated position. Accepts the
// completions shape (choices[0].logprobs.top_logprobs[0] as an object) and the
// chat shape (choices[0].logprobs.content[0].top_logprobs as a list of
// {token, logprob}). Anything else throws ValidationError.
std::map<std::string, double> parse_top_logprobs(const nlohmann::json& response);

// Logprob of each configured answer token, keyed by the configured spelling,
// with missing tokens filled per the config.
std::map<std::string, double> extract_answer_logits(const ScorerConfig& config,
                                                    const std::map<std::string, double>& top);

// Transport failure after all retries, or a non-success HTTP status.
class TransportError : public IoError {
 public:
  using IoError::IoError;
};

// Reads the credential; throws ValidationError when the variable is unset.
std::string read_credential(const ScorerConfig& config);

std::map<std::string, double> fetch_logits(const ScorerConfig& config, const std::string& prompt);

struct DatasetExample {
  std::string id;
  std::map<std::string, std::string> fields;
  int label = 0;
};

// Dataset adapter input: JSONL objects with "id", a label ("label" as 0/1 or
// "answer" as a boolean) and string fields. "passage" is also exposed as
// "context" and "sentence" as "review".
std::vector<DatasetExample> read_dataset_jsonl(const std::filesystem::path& path);

struct FetchSummary {
  std::size_t requested = 0;
  std::size_t succeeded = 0;
  std::size_t failed = 0;
  std::size_t skipped = 0;
};

struct FetchResult {
  std::vector<LogitRecord> records;
  FetchSummary summary;
};

std::filesystem::path journal_path_for(const std::filesystem::path& out_path);

// Scores every example not already completed in the journal
// (journal_path_for(out_path)), with at most max_in_flight requests in flight.
// Per-example failures are journaled and do not stop the batch. Afterwards the
// successful records are written to out_path in input order.
FetchResult fetch_dataset(const ScorerConfig& config, std::span<const DatasetExample> examples,
                          const PromptTemplate& prompt_template, const std::filesystem::path& out_path);

}  // namespace ivapcal::scorer
