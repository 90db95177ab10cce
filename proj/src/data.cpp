#include "ivapcal/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "ivapcal/error.hpp"
#include "ivapcal/random.hpp"

namespace ivapcal {

using nlohmann::json;

std::string_view to_string(ScoreKind kind) {
  return kind == ScoreKind::softmax2 ? "softmax2" : "softmaxK";
}

ScoreKind parse_score_kind(std::string_view text) {
  if (text == "softmax2") return ScoreKind::softmax2;
  if (text == "softmaxK" || text == "softmaxk") return ScoreKind::softmaxK;
  throw ValidationError("unknown score kind '" + std::string(text) + "' (softmax2|softmaxK)");
}

RecordFormat parse_record_format(std::string_view text) {
  if (text == "jsonl") return RecordFormat::jsonl;
  if (text == "csv") return RecordFormat::csv;
  throw ValidationError("unknown record format '" + std::string(text) + "' (jsonl|csv)");
}

void validate(const LogitRecord& r) {
  if (r.id.empty()) throw ValidationError("record id is empty");
  if (r.label != 0 && r.label != 1)
    throw ValidationError("record " + r.id + ": label must be 0 or 1, got " + std::to_string(r.label));
  if (!std::isfinite(r.u_pos) || !std::isfinite(r.u_neg))
    throw ValidationError("record " + r.id + ": non-finite logit");
  if (r.true_posterior && !(*r.true_posterior >= 0.0 && *r.true_posterior <= 1.0))
    throw ValidationError("record " + r.id + ": true_posterior outside [0,1]");
  if (r.full_logits) {
    const auto& logits = *r.full_logits;
    if (!r.pos_index || !r.neg_index)
      throw ValidationError("record " + r.id + ": full_logits requires pos_index and neg_index");
    if (*r.pos_index >= logits.size() || *r.neg_index >= logits.size())
      throw ValidationError("record " + r.id + ": answer-token index out of range");
    if (*r.pos_index == *r.neg_index)
      throw ValidationError("record " + r.id + ": pos_index and neg_index must differ");
    for (double u : logits)
      if (!std::isfinite(u)) throw ValidationError("record " + r.id + ": non-finite entry in full_logits");
    if (logits[*r.pos_index] != r.u_pos || logits[*r.neg_index] != r.u_neg)
      throw ValidationError("record " + r.id + ": full_logits disagree with u_pos/u_neg");
  } else if (r.pos_index || r.neg_index) {
    throw ValidationError("record " + r.id + ": pos_index/neg_index given without full_logits");
  }
}

namespace data {
namespace {

double json_number(const json& obj, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw ValidationError(std::string("missing required field '") + key + "'");
  if (!it->is_number()) throw ValidationError(std::string("field '") + key + "' must be a number");
  return it->get<double>();
}

std::size_t json_index(const json& value, const char* key) {
  if (!value.is_number_integer() || value.get<long long>() < 0)
    throw ValidationError(std::string("field '") + key + "' must be a non-negative integer");
  return value.get<std::size_t>();
}

int parse_label(const json& value) {
  if (value.is_boolean()) return value.get<bool>() ? 1 : 0;
  if (!value.is_number_integer()) throw ValidationError("label must be an integer");
  const auto v = value.get<long long>();
  if (v != 0 && v != 1) throw ValidationError("label must be 0 or 1, got " + std::to_string(v));
  return static_cast<int>(v);
}

LogitRecord record_from_json(const json& obj) {
  if (!obj.is_object()) throw ValidationError("expected a JSON object");
  LogitRecord r;
  const auto id = obj.find("id");
  if (id == obj.end()) throw ValidationError("missing required field 'id'");
  if (!id->is_string()) throw ValidationError("field 'id' must be a string");
  r.id = id->get<std::string>();
  r.u_pos = json_number(obj, "u_pos");
  r.u_neg = json_number(obj, "u_neg");
  const auto label = obj.find("label");
  if (label == obj.end()) throw ValidationError("missing required field 'label'");
  r.label = parse_label(*label);
  if (const auto it = obj.find("full_logits"); it != obj.end()) {
    if (!it->is_array()) throw ValidationError("field 'full_logits' must be an array");
    std::vector<double> logits;
    logits.reserve(it->size());
    for (const auto& v : *it) {
      if (!v.is_number()) throw ValidationError("full_logits entries must be numbers");
      logits.push_back(v.get<double>());
    }
    r.full_logits = std::move(logits);
  }
  if (const auto it = obj.find("pos_index"); it != obj.end()) r.pos_index = json_index(*it, "pos_index");
  if (const auto it = obj.find("neg_index"); it != obj.end()) r.neg_index = json_index(*it, "neg_index");
  if (const auto it = obj.find("true_posterior"); it != obj.end()) {
    if (!it->is_number()) throw ValidationError("field 'true_posterior' must be a number");
    r.true_posterior = it->get<double>();
  }
  validate(r);
  return r;
}

double parse_double(const std::string& text, const char* what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ValidationError(std::string("cannot parse ") + what + " '" + text + "'");
  }
  if (used != text.size()) throw ValidationError(std::string("cannot parse ") + what + " '" + text + "'");
  return v;
}

long long parse_integer(const std::string& text, const char* what) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(text, &used);
  } catch (const std::exception&) {
    throw ValidationError(std::string("cannot parse ") + what + " '" + text + "'");
  }
  if (used != text.size()) throw ValidationError(std::string("cannot parse ") + what + " '" + text + "'");
  return v;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

void check_unique(std::vector<LogitRecord>& records, const std::string& source,
                  const std::vector<std::size_t>& lines) {
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (!seen.insert(records[i].id).second)
      throw ParseError(source, lines[i], "duplicate id '" + records[i].id + "'");
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

void finish_output(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

std::string format_double(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::vector<LogitRecord> parse_records_jsonl(std::istream& in, const std::string& source) {
  std::vector<LogitRecord> records;
  std::vector<std::size_t> lines;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      records.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ParseError(source, lineno, std::string("malformed JSON: ") + e.what());
    } catch (const ValidationError& e) {
      throw ParseError(source, lineno, e.what());
    }
    lines.push_back(lineno);
  }
  check_unique(records, source, lines);
  return records;
}

// Columns: id,u_pos,u_neg,label required; true_posterior, pos_index,
// neg_index optional; full_logits as space-separated numbers.
std::vector<LogitRecord> parse_records_csv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) return {};
  const auto header = split_csv_line(line);
  auto column = [&](const char* name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (trim(header[i]) == name) return i;
    return std::nullopt;
  };
  const auto c_id = column("id"), c_pos = column("u_pos"), c_neg = column("u_neg"),
             c_label = column("label");
  if (!c_id || !c_pos || !c_neg || !c_label)
    throw ParseError(source, 1, "header must contain id,u_pos,u_neg,label");
  const auto c_post = column("true_posterior"), c_full = column("full_logits"),
             c_pi = column("pos_index"), c_ni = column("neg_index");

  std::vector<LogitRecord> records;
  std::vector<std::size_t> lines;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw ParseError(source, lineno,
                       "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
    try {
      LogitRecord r;
      r.id = trim(f[*c_id]);
      r.u_pos = parse_double(trim(f[*c_pos]), "u_pos");
      r.u_neg = parse_double(trim(f[*c_neg]), "u_neg");
      const auto label = parse_integer(trim(f[*c_label]), "label");
      if (label != 0 && label != 1) throw ValidationError("label must be 0 or 1, got " + std::to_string(label));
      r.label = static_cast<int>(label);
      if (c_post && !trim(f[*c_post]).empty()) r.true_posterior = parse_double(trim(f[*c_post]), "true_posterior");
      if (c_full && !trim(f[*c_full]).empty()) {
        std::istringstream values(f[*c_full]);
        std::vector<double> logits;
        std::string tok;
        while (values >> tok) logits.push_back(parse_double(tok, "full_logits entry"));
        r.full_logits = std::move(logits);
      }
      auto index = [&](const std::optional<std::size_t>& col, const char* what) -> std::optional<std::size_t> {
        if (!col || trim(f[*col]).empty()) return std::nullopt;
        const auto v = parse_integer(trim(f[*col]), what);
        if (v < 0) throw ValidationError(std::string(what) + " must be non-negative");
        return static_cast<std::size_t>(v);
      };
      r.pos_index = index(c_pi, "pos_index");
      r.neg_index = index(c_ni, "neg_index");
      validate(r);
      records.push_back(std::move(r));
      lines.push_back(lineno);
    } catch (const ValidationError& e) {
      throw ParseError(source, lineno, e.what());
    }
  }
  check_unique(records, source, lines);
  return records;
}

std::vector<LogitRecord> read_records(const std::filesystem::path& path, RecordFormat format) {
  auto in = open_input(path);
  return format == RecordFormat::jsonl ? parse_records_jsonl(in, path.string())
                                       : parse_records_csv(in, path.string());
}

std::string to_jsonl_line(const LogitRecord& r) {
  // Hand-rendered so every number carries 17 significant digits.
  std::string s = "{\"id\":" + json(r.id).dump() + ",\"u_pos\":" + format_double(r.u_pos) +
                  ",\"u_neg\":" + format_double(r.u_neg) + ",\"label\":" + std::to_string(r.label);
  if (r.full_logits) {
    s += ",\"full_logits\":[";
    for (std::size_t i = 0; i < r.full_logits->size(); ++i) {
      if (i) s += ',';
      s += format_double((*r.full_logits)[i]);
    }
    s += ']';
  }
  if (r.pos_index) s += ",\"pos_index\":" + std::to_string(*r.pos_index);
  if (r.neg_index) s += ",\"neg_index\":" + std::to_string(*r.neg_index);
  if (r.true_posterior) s += ",\"true_posterior\":" + format_double(*r.true_posterior);
  s += '}';
  return s;
}

void write_records_jsonl(std::span<const LogitRecord> records, std::ostream& out) {
  for (const auto& r : records) out << to_jsonl_line(r) << '\n';
}

void write_records_jsonl(std::span<const LogitRecord> records, const std::filesystem::path& path) {
  auto out = open_output(path);
  write_records_jsonl(records, out);
  finish_output(out, path);
}

std::size_t calibration_size(std::size_t n, double calibration_fraction) {
  if (!(calibration_fraction > 0.0 && calibration_fraction < 1.0))
    throw ValidationError("calibration fraction must lie in (0, 1)");
  if (n < 2) throw ValidationError("need at least 2 records to split, got " + std::to_string(n));
  // The small nudge keeps products like 0.29 * 100 from flooring to 28.
  const auto m = static_cast<std::size_t>(std::floor(calibration_fraction * static_cast<double>(n) + 1e-9));
  if (m == 0 || m >= n)
    throw ValidationError("calibration fraction " + format_double(calibration_fraction) + " of " +
                          std::to_string(n) + " records leaves one side of the split empty");
  return m;
}

Split split(std::span<const LogitRecord> records, const SplitSpec& spec) {
  const std::size_t m = calibration_size(records.size(), spec.calibration_fraction);

  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return records[a].id < records[b].id; });
  for (std::size_t i = 1; i < order.size(); ++i)
    if (records[order[i]].id == records[order[i - 1]].id)
      throw ValidationError("duplicate id '" + records[order[i]].id + "' in split input");

  PortableRng rng(spec.seed);
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i + 1));
    std::swap(order[i], order[j]);
  }

  Split out;
  out.calibration.reserve(m);
  out.test.reserve(records.size() - m);
  for (std::size_t i = 0; i < order.size(); ++i)
    (i < m ? out.calibration : out.test).push_back(records[order[i]]);
  return out;
}

double softmax2(double u_pos, double u_neg, double tau) {
  if (!(tau > 0.0)) throw ValidationError("temperature must be positive");
  const double x = (u_pos - u_neg) / tau;
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softmax_k(std::span<const double> logits, std::size_t index, double tau) {
  if (!(tau > 0.0)) throw ValidationError("temperature must be positive");
  if (index >= logits.size()) throw ValidationError("softmax index out of range");
  const double top = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double u : logits) denom += std::exp((u - top) / tau);
  return std::exp((logits[index] - top) / tau) / denom;
}

double score(const LogitRecord& record, ScoreKind kind, double tau) {
  if (kind == ScoreKind::softmax2) return softmax2(record.u_pos, record.u_neg, tau);
  if (!record.full_logits || !record.pos_index)
    throw ValidationError("record " + record.id + " has no full_logits; softmaxK needs them");
  return softmax_k(*record.full_logits, *record.pos_index, tau);
}

std::vector<ScoredExample> transform_scores(std::span<const LogitRecord> records, ScoreKind kind,
                                            double tau) {
  if (!(tau > 0.0)) throw ValidationError("temperature must be positive");
  std::vector<ScoredExample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({score(r, kind, tau), r.label});
  return out;
}

void write_scores_csv(std::span<const ScoredExample> examples, std::ostream& out) {
  out << "score,label\n";
  for (const auto& e : examples) out << format_double(e.score) << ',' << e.label << '\n';
}

void write_scores_csv(std::span<const ScoredExample> examples, const std::filesystem::path& path) {
  auto out = open_output(path);
  write_scores_csv(examples, out);
  finish_output(out, path);
}

std::vector<ScoredExample> parse_scores_csv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(source, 1, "empty file, expected header score,label");
  const auto header = split_csv_line(line);
  if (header.size() != 2 || trim(header[0]) != "score" || trim(header[1]) != "label")
    throw ParseError(source, 1, "expected header score,label");
  std::vector<ScoredExample> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 2) throw ParseError(source, lineno, "expected 2 fields");
    try {
      ScoredExample e;
      e.score = parse_double(trim(f[0]), "score");
      if (!std::isfinite(e.score)) throw ValidationError("score must be finite");
      const auto label = parse_integer(trim(f[1]), "label");
      if (label != 0 && label != 1) throw ValidationError("label must be 0 or 1");
      e.label = static_cast<int>(label);
      out.push_back(e);
    } catch (const ValidationError& e) {
      throw ParseError(source, lineno, e.what());
    }
  }
  return out;
}

std::vector<ScoredExample> read_scores_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_scores_csv(in, path.string());
}

std::vector<int> labels_of(std::span<const ScoredExample> examples) {
  std::vector<int> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(e.label);
  return out;
}

std::vector<double> scores_of(std::span<const ScoredExample> examples) {
  std::vector<double> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(e.score);
  return out;
}

}  // namespace data
}  // namespace ivapcal
