#include "ivapcal/scorer_client.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "httplib.h"

#include "ivapcal/error.hpp"

namespace ivapcal::scorer {

using nlohmann::json;

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint parse_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("base_url must include a scheme: " + url);
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw ValidationError("base_url scheme must be http or https: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint ep;
  ep.origin = url.substr(0, path_start);
  ep.path = path_start == std::string::npos ? "/v1/completions" : url.substr(path_start);
  if (ep.origin.size() <= scheme_end + 3) throw ValidationError("base_url has no host: " + url);
  return ep;
}

bool is_name_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_';
}

// Calls `on_name(name)` for each {name}; `on_text(text)` for everything else.
template <class OnText, class OnName>
void scan_template(const std::string& text, OnText on_text, OnName on_name) {
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      std::size_t j = i + 1;
      while (j < text.size() && is_name_char(text[j])) ++j;
      if (j < text.size() && text[j] == '}' && j > i + 1) {
        on_name(text.substr(i + 1, j - i - 1));
        i = j + 1;
        continue;
      }
    }
    on_text(text[i]);
    ++i;
  }
}

class Session {
 public:
  Session(const ScorerConfig& config, std::string credential)
      : config_(config), endpoint_(parse_endpoint(config.base_url)), client_(endpoint_.origin) {
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config.timeout - secs);
    client_.set_connection_timeout(secs.count(), usecs.count());
    client_.set_read_timeout(secs.count(), usecs.count());
    client_.set_write_timeout(secs.count(), usecs.count());
    if (!credential.empty()) headers_.emplace("Authorization", "Bearer " + credential);
  }

  std::map<std::string, double> fetch(const std::string& prompt) {
    const std::string body = make_request(config_, prompt).dump();
    auto backoff = config_.initial_backoff;
    std::string last_error;
    for (int attempt = 0;; ++attempt) {
      auto res = client_.Post(endpoint_.path, headers_, body, "application/json");
      if (res && res->status >= 200 && res->status < 300) {
        json doc;
        try {
          doc = json::parse(res->body);
        } catch (const json::exception& e) {
          throw ValidationError(std::string("malformed response: ") + e.what());
        }
        return extract_answer_logits(config_, parse_top_logprobs(doc));
      }
      if (res) {
        last_error = "HTTP " + std::to_string(res->status);
        const bool retryable = res->status >= 500 || res->status == 429 || res->status == 408;
        if (!retryable) throw TransportError(last_error + " from " + config_.base_url);
      } else {
        last_error = httplib::to_string(res.error());
      }
      if (attempt >= config_.max_retries)
        throw TransportError(last_error + " after " + std::to_string(attempt + 1) + " attempts");
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }

 private:
  const ScorerConfig& config_;
  Endpoint endpoint_;
  httplib::Client client_;
  httplib::Headers headers_;
};

std::string error_line(const std::string& id, const std::string& message) {
  return json{{"id", id}, {"error", message}}.dump();
}

// Successful records from an existing journal; error entries and damaged
// lines are skipped so those ids are retried.
std::unordered_map<std::string, LogitRecord> load_journal(const std::filesystem::path& path, bool& ends_clean) {
  std::unordered_map<std::string, LogitRecord> done;
  ends_clean = true;
  std::ifstream in(path, std::ios::binary);
  if (!in) return done;
  const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ends_clean = content.empty() || content.back() == '\n';
  std::istringstream lines(content);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    try {
      const auto doc = json::parse(line);
      if (!doc.is_object() || doc.contains("error")) continue;
      std::istringstream one(line);
      auto parsed = data::parse_records_jsonl(one, path.string());
      if (parsed.size() == 1) done.try_emplace(parsed.front().id, std::move(parsed.front()));
    } catch (const std::exception&) {
      continue;
    }
  }
  return done;
}

}  // namespace

AnswerTokens parse_answer_tokens(std::string_view text) {
  const auto comma = text.find(',');
  if (comma == std::string_view::npos || text.find(',', comma + 1) != std::string_view::npos)
    throw ValidationError("answer tokens must be given as pos,neg");
  AnswerTokens t{std::string(text.substr(0, comma)), std::string(text.substr(comma + 1))};
  if (t.pos.empty() || t.neg.empty()) throw ValidationError("answer tokens must be non-empty");
  if (normalize_token(t.pos) == normalize_token(t.neg)) throw ValidationError("answer tokens must differ");
  return t;
}

void validate(const ScorerConfig& c) {
  if (c.base_url.empty()) throw ValidationError("scorer: base_url is required");
  parse_endpoint(c.base_url);
  if (c.model.empty()) throw ValidationError("scorer: model is required");
  if (c.top_logprobs < 2) throw ValidationError("scorer: top_logprobs must be at least 2");
  if (c.max_in_flight < 1) throw ValidationError("scorer: max_in_flight must be at least 1");
  if (c.max_retries < 0) throw ValidationError("scorer: max_retries must be non-negative");
  if (c.timeout.count() <= 0) throw ValidationError("scorer: timeout must be positive");
  if (c.answer_tokens.pos.empty() || c.answer_tokens.neg.empty())
    throw ValidationError("scorer: answer tokens must be non-empty");
}

std::vector<std::string> PromptTemplate::placeholders() const {
  std::vector<std::string> names;
  scan_template(
      text, [](char) {},
      [&](const std::string& name) {
        if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
      });
  return names;
}

PromptTemplate boolq_template() {
  return {"Context:\n\"{context}\"\nQuestion: \"{question}\"\nYes or No?\nAnswer:"};
}

PromptTemplate sentiment_template() {
  return {"Film review:\n\"{review}\"\nIs the review positive or negative?\nAnswer:"};
}

std::string build_prompt(const std::map<std::string, std::string>& fields, const PromptTemplate& prompt_template) {
  std::string out;
  out.reserve(prompt_template.text.size());
  scan_template(
      prompt_template.text, [&](char c) { out += c; },
      [&](const std::string& name) {
        const auto it = fields.find(name);
        if (it == fields.end()) throw ValidationError("no value for prompt placeholder {" + name + "}");
        out += it->second;
      });
  return out;
}

std::string normalize_token(std::string_view token) {
  static constexpr std::string_view kSentencePieceSpace = "\xE2\x96\x81";  // U+2581
  static constexpr std::string_view kByteLevelSpace = "\xC4\xA0";          // U+0120
  if (token.starts_with(kSentencePieceSpace)) return "_" + std::string(token.substr(kSentencePieceSpace.size()));
  if (token.starts_with(kByteLevelSpace)) return "_" + std::string(token.substr(kByteLevelSpace.size()));
  if (token.starts_with(' ')) return "_" + std::string(token.substr(1));
  return std::string(token);
}

json make_request(const ScorerConfig& config, const std::string& prompt) {
  return {{"model", config.model},
          {"prompt", prompt},
          {"max_tokens", 1},
          {"logprobs", config.top_logprobs},
          {"temperature", 0}};
}

std::map<std::string, double> parse_top_logprobs(const json& response) {
  try {
    const auto& logprobs = response.at("choices").at(0).at("logprobs");
    std::map<std::string, double> top;
    if (logprobs.contains("top_logprobs")) {
      const auto& first = logprobs.at("top_logprobs").at(0);
      if (!first.is_object()) throw ValidationError("top_logprobs[0] must be an object");
      for (const auto& [token, lp] : first.items()) {
        if (!lp.is_number()) throw ValidationError("logprob for '" + token + "' is not a number");
        top[token] = lp.get<double>();
      }
    } else if (logprobs.contains("content")) {
      for (const auto& entry : logprobs.at("content").at(0).at("top_logprobs"))
        top[entry.at("token").get<std::string>()] = entry.at("logprob").get<double>();
    } else {
      throw ValidationError("response has neither top_logprobs nor content");
    }
    return top;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed response: ") + e.what());
  }
}

std::map<std::string, double> extract_answer_logits(const ScorerConfig& config,
                                                    const std::map<std::string, double>& top) {
  std::map<std::string, double> by_norm;
  for (const auto& [token, lp] : top) {
    const auto key = normalize_token(token);
    const auto it = by_norm.find(key);
    if (it == by_norm.end() || lp > it->second) by_norm[key] = lp;
  }
  std::map<std::string, double> out;
  for (const auto& token : {config.answer_tokens.pos, config.answer_tokens.neg}) {
    const auto it = by_norm.find(normalize_token(token));
    if (it != by_norm.end()) {
      out[token] = it->second;
    } else if (config.error_on_missing_token) {
      throw ValidationError("answer token '" + token + "' not among the top logprobs");
    } else {
      out[token] = config.missing_token_fill;
    }
  }
  return out;
}

std::string read_credential(const ScorerConfig& config) {
  if (config.auth_token_env.empty()) throw ValidationError("scorer: auth_token_env is empty");
  const char* value = std::getenv(config.auth_token_env.c_str());
  if (value == nullptr) throw ValidationError("credential variable " + config.auth_token_env + " is not set");
  return value;
}

std::map<std::string, double> fetch_logits(const ScorerConfig& config, const std::string& prompt) {
  validate(config);
  Session session(config, read_credential(config));
  return session.fetch(prompt);
}

std::vector<DatasetExample> read_dataset_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<DatasetExample> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto doc = json::parse(line);
      DatasetExample ex;
      const auto& id = doc.at("id");
      ex.id = id.is_string() ? id.get<std::string>() : id.dump();
      if (doc.contains("label")) {
        const auto& l = doc.at("label");
        if (l.is_boolean()) ex.label = l.get<bool>() ? 1 : 0;
        else if (l.is_number_integer() && (l.get<long long>() == 0 || l.get<long long>() == 1))
          ex.label = static_cast<int>(l.get<long long>());
        else throw ValidationError("label must be 0, 1 or a boolean");
      } else if (doc.contains("answer") && doc.at("answer").is_boolean()) {
        ex.label = doc.at("answer").get<bool>() ? 1 : 0;
      } else {
        throw ValidationError("missing label (\"label\" or boolean \"answer\")");
      }
      for (const auto& [key, value] : doc.items())
        if (value.is_string() && key != "id") ex.fields[key] = value.get<std::string>();
      if (!ex.fields.contains("context") && ex.fields.contains("passage")) ex.fields["context"] = ex.fields["passage"];
      if (!ex.fields.contains("review") && ex.fields.contains("sentence")) ex.fields["review"] = ex.fields["sentence"];
      if (!seen.insert(ex.id).second) throw ValidationError("duplicate id '" + ex.id + "'");
      out.push_back(std::move(ex));
    } catch (const json::exception& e) {
      throw ParseError(path.string(), lineno, e.what());
    } catch (const ValidationError& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  }
  return out;
}

std::filesystem::path journal_path_for(const std::filesystem::path& out_path) {
  auto p = out_path;
  p += ".journal";
  return p;
}

FetchResult fetch_dataset(const ScorerConfig& config, std::span<const DatasetExample> examples,
                          const PromptTemplate& prompt_template, const std::filesystem::path& out_path) {
  validate(config);
  const std::string credential = read_credential(config);
  {
    std::unordered_set<std::string> ids;
    for (const auto& ex : examples)
      if (!ids.insert(ex.id).second) throw ValidationError("duplicate example id '" + ex.id + "'");
  }

  const auto journal_path = journal_path_for(out_path);
  bool ends_clean = true;
  auto done = load_journal(journal_path, ends_clean);

  std::vector<const DatasetExample*> pending;
  for (const auto& ex : examples)
    if (!done.contains(ex.id)) pending.push_back(&ex);

  FetchResult result;
  result.summary.skipped = examples.size() - pending.size();
  result.summary.requested = pending.size();

  if (!pending.empty()) {
    std::ofstream journal(journal_path, std::ios::binary | std::ios::app);
    if (!journal) throw IoError("cannot open journal " + journal_path.string());
    if (!ends_clean) journal << '\n';

    std::mutex mu;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      Session session(config, credential);
      for (std::size_t i = next++; i < pending.size(); i = next++) {
        const auto& ex = *pending[i];
        std::string line;
        std::optional<LogitRecord> record;
        try {
          const auto logits = session.fetch(build_prompt(ex.fields, prompt_template));
          LogitRecord r;
          r.id = ex.id;
          r.u_pos = logits.at(config.answer_tokens.pos);
          r.u_neg = logits.at(config.answer_tokens.neg);
          r.label = ex.label;
          ivapcal::validate(r);
          line = data::to_jsonl_line(r);
          record = std::move(r);
        } catch (const std::exception& e) {
          line = error_line(ex.id, e.what());
        }
        std::lock_guard lock(mu);
        journal << line << '\n';
        journal.flush();
        if (record) {
          ++result.summary.succeeded;
          done.try_emplace(record->id, std::move(*record));
        } else {
          ++result.summary.failed;
        }
      }
    };

    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(config.max_in_flight), pending.size());
    if (workers == 1) {
      worker();
    } else {
      std::vector<std::jthread> threads;
      threads.reserve(workers);
      for (std::size_t t = 0; t < workers; ++t) threads.emplace_back(worker);
    }
    if (!journal) throw IoError("write failed for journal " + journal_path.string());
  }

  for (const auto& ex : examples)
    if (const auto it = done.find(ex.id); it != done.end()) result.records.push_back(it->second);
  data::write_records_jsonl(result.records, out_path);
  return result;
}

}  // namespace ivapcal::scorer
