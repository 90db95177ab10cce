// ivapcal: command-line front end for the calibration toolkit.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ivapcal/data.hpp"
#include "ivapcal/error.hpp"
#include "ivapcal/metrics.hpp"
#include "ivapcal/scorer_client.hpp"
#include "ivapcal/sweep.hpp"
#include "ivapcal/synth.hpp"
#include "ivapcal/temperature.hpp"
#include "ivapcal/venn_abers.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ivapcal;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Globals {
  std::uint64_t seed = 0;
  std::string format;  // empty: infer from the file extension
  std::string out;
};

RecordFormat record_format(const Globals& g, const fs::path& path) {
  if (!g.format.empty()) return parse_record_format(g.format);
  return path.extension() == ".csv" ? RecordFormat::csv : RecordFormat::jsonl;
}

std::vector<LogitRecord> load_records(const Globals& g, const fs::path& path) {
  return data::read_records(path, record_format(g, path));
}

const std::string& require_out(const Globals& g) {
  if (g.out.empty()) throw ValidationError("--out is required for this command");
  return g.out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_text(const std::string& text, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + out);
  f << text;
  if (!f) throw IoError("write failed for " + out);
}

// ---- synth

struct SynthArgs {
  synth::SynthConfig config;
};

void run_synth(const Globals& g, SynthArgs a) {
  a.config.seed = g.seed;
  data::write_records_jsonl(synth::generate(a.config), require_out(g));
}

// ---- split

struct SplitArgs {
  std::string input;
  double calibration_fraction = 0.2;
};

void run_split(const Globals& g, const SplitArgs& a) {
  const auto recs = load_records(g, a.input);
  const auto s = data::split(recs, {g.seed, a.calibration_fraction});
  const auto& prefix = require_out(g);
  data::write_records_jsonl(s.calibration, prefix + ".calibration.jsonl");
  data::write_records_jsonl(s.test, prefix + ".test.jsonl");
  std::cerr << "calibration " << s.calibration.size() << ", test " << s.test.size() << "\n";
}

// ---- fit

struct FitArgs {
  std::string input;
  std::string method = "ivap";
  std::string kind = "softmax2";
  double tau = 1.0;
};

void run_fit(const Globals& g, const FitArgs& a) {
  const auto recs = load_records(g, a.input);
  const auto kind = parse_score_kind(a.kind);
  const auto& out = require_out(g);
  json doc;
  if (a.method == "ivap") {
    const auto cal = venn_abers::fit(data::transform_scores(recs, kind, a.tau));
    if (cal.degenerate()) std::cerr << "warning: calibration labels are all one class\n";
    if (const auto n = cal.non_strict_cells(); n > 0)
      std::cerr << "warning: " << n << " cells have p0 == p1\n";
    doc = cal.to_json();
    doc["method"] = "ivap";
    doc["kind"] = std::string(to_string(kind));
    doc["tau"] = a.tau;
  } else if (a.method == "temperature") {
    doc = temperature::to_json(temperature::fit_temperature(recs, kind));
    doc["method"] = "temperature";
  } else {
    throw ValidationError("unknown --method '" + a.method + "' (ivap, temperature)");
  }
  write_text(doc.dump(2) + "\n", out);
}

// ---- predict

struct PredictArgs {
  std::string input;
  std::string model;
  bool scores = false;  // input is a score,label CSV rather than records
};

void run_predict(const Globals& g, const PredictArgs& a) {
  const auto doc = read_json(a.model);
  const std::string method = doc.value("method", doc.contains("cells") ? "ivap" : "temperature");
  std::ostringstream out;
  if (method == "ivap") {
    const auto cal = venn_abers::IvapCalibrator::from_json(doc);
    std::vector<std::string> ids;
    std::vector<double> z;
    if (a.scores) {
      const auto ex = data::read_scores_csv(a.input);
      for (std::size_t i = 0; i < ex.size(); ++i) ids.push_back(std::to_string(i));
      z = data::scores_of(ex);
    } else {
      const auto kind = parse_score_kind(doc.value("kind", "softmax2"));
      const double tau = doc.value("tau", 1.0);
      const auto recs = load_records(g, a.input);
      for (const auto& r : recs) {
        if (kind == ScoreKind::softmaxK && !r.full_logits)
          throw ValidationError("model expects softmaxK scores but record " + r.id + " has no full_logits");
        ids.push_back(r.id);
      }
      z = data::scores_of(data::transform_scores(recs, kind, tau));
    }
    out << "id,p0,p1,p\n";
    const auto preds = cal.predict_batch(z);
    for (std::size_t i = 0; i < preds.size(); ++i)
      out << csv_field(ids[i]) << ',' << data::format_double(preds[i].mp.p0) << ','
          << data::format_double(preds[i].mp.p1) << ',' << data::format_double(preds[i].merged) << '\n';
  } else if (method == "temperature") {
    if (a.scores) throw ValidationError("a temperature model needs logit records, not probability scores");
    const auto model = temperature::from_json(doc);
    const auto recs = load_records(g, a.input);
    for (const auto& r : recs)
      if (model.kind == ScoreKind::softmaxK && !r.full_logits)
        throw ValidationError("model expects softmaxK scores but record " + r.id + " has no full_logits");
    const auto scored = temperature::apply(model, recs);
    out << "id,p\n";
    for (std::size_t i = 0; i < recs.size(); ++i)
      out << csv_field(recs[i].id) << ',' << data::format_double(scored[i].score) << '\n';
  } else {
    throw ValidationError("unknown model method '" + method + "'");
  }
  write_text(out.str(), g.out);
}

// ---- eval

struct EvalArgs {
  std::string predictions;
  std::string labels;
  bool scores = false;  // labels come from a score,label CSV, joined by row
  int bins = metrics::kDefaultBins;
  std::string tag_method;
  std::string token_pair;
  std::optional<double> tau;
};

double parse_number(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw ValidationError(where + ": not a number: '" + s + "'");
  return v;
}

void run_eval(const Globals& g, const EvalArgs& a) {
  std::ifstream in(a.predictions, std::ios::binary);
  if (!in) throw IoError("cannot open " + a.predictions);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(a.predictions + ": empty predictions file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = data::split_csv_line(line);
  std::optional<std::size_t> id_col, p_col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "id") id_col = i;
    if (header[i] == "p") p_col = i;
  }
  if (!id_col || !p_col) throw ValidationError(a.predictions + ": header needs id and p columns");

  std::vector<std::string> ids;
  std::vector<double> preds;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = data::split_csv_line(line);
    const auto where = a.predictions + ":" + std::to_string(lineno);
    if (f.size() != header.size()) throw ValidationError(where + ": wrong column count");
    ids.push_back(f[*id_col]);
    preds.push_back(parse_number(f[*p_col], where));
  }
  if (preds.empty()) throw ValidationError(a.predictions + ": no predictions");

  std::vector<int> labels;
  if (a.scores) {
    const auto ex = data::read_scores_csv(a.labels);
    if (ex.size() != preds.size()) throw ValidationError("predictions and labels differ in length");
    labels = data::labels_of(ex);
  } else {
    std::map<std::string, int> by_id;
    for (const auto& r : load_records(g, a.labels)) by_id[r.id] = r.label;
    for (const auto& id : ids) {
      const auto it = by_id.find(id);
      if (it == by_id.end()) throw ValidationError("no label for id '" + id + "'");
      labels.push_back(it->second);
    }
  }
  const auto report = metrics::evaluate_all(preds, preds, labels, a.bins, {a.tag_method, a.token_pair, a.tau});
  write_text(metrics::to_json(report).dump(2) + "\n", g.out);
}

// ---- sweep

struct SweepArgs {
  std::string input;
  std::string grid = "0.1:100:13";
  std::string methods = "softmax2,ivap2";
  double calibration_fraction = 0.2;
  std::string tempscaled_kind = "softmax2";
  int bins = metrics::kDefaultBins;
};

void run_sweep(const Globals& g, const SweepArgs& a) {
  sweep::SweepOptions opt;
  opt.grid = sweep::parse_tau_grid(a.grid);
  opt.methods = sweep::parse_methods(a.methods);
  opt.split = {g.seed, a.calibration_fraction};
  opt.tempscaled_kind = parse_score_kind(a.tempscaled_kind);
  opt.bin_count = a.bins;
  const auto recs = load_records(g, a.input);
  const auto rows = sweep::run_sweep(recs, opt);
  std::ostringstream out;
  sweep::write_sweep_csv(rows, out);
  write_text(out.str(), g.out);
}

// ---- reliability

struct ReliabilityArgs {
  std::string input;
  std::string method = "ivap2";
  double tau = 1.0;
  double calibration_fraction = 0.2;
  std::string tempscaled_kind = "softmax2";
  int bins = metrics::kDefaultBins;
  std::string svg;
};

void run_reliability(const Globals& g, const ReliabilityArgs& a) {
  const auto method = sweep::parse_method(a.method);
  const auto recs = load_records(g, a.input);
  const auto split = data::split(recs, {g.seed, a.calibration_fraction});
  const auto o = sweep::run_method(split, method, a.tau, parse_score_kind(a.tempscaled_kind));
  const auto bins = metrics::reliability_bins(o.probs, o.labels, a.bins);
  std::ostringstream csv;
  metrics::write_bins_csv(bins, csv);
  write_text(csv.str(), g.out);
  if (!a.svg.empty()) {
    std::ostringstream title;
    title << a.method << ", tau = " << o.tau << ", ECE = " << metrics::ece(bins);
    write_text(metrics::reliability_svg(bins, title.str()), a.svg);
  }
}

// ---- fetch

struct FetchArgs {
  std::string dataset;
  std::string prompt = "boolq";
  std::string answer_tokens = "_Yes,_No";
  scorer::ScorerConfig config;
  int timeout_ms = 30000;
};

int run_fetch(const Globals& g, FetchArgs a) {
  a.config.answer_tokens = scorer::parse_answer_tokens(a.answer_tokens);
  a.config.timeout = std::chrono::milliseconds(a.timeout_ms);
  scorer::PromptTemplate tmpl;
  if (a.prompt == "boolq") {
    tmpl = scorer::boolq_template();
  } else if (a.prompt == "sentiment") {
    tmpl = scorer::sentiment_template();
  } else {
    throw ValidationError("unknown --template '" + a.prompt + "' (boolq, sentiment)");
  }
  scorer::validate(a.config);
  scorer::read_credential(a.config);
  const auto examples = scorer::read_dataset_jsonl(a.dataset);
  const auto result = scorer::fetch_dataset(a.config, examples, tmpl, require_out(g));
  const auto& s = result.summary;
  std::cerr << "requested " << s.requested << ", succeeded " << s.succeeded << ", failed " << s.failed
            << ", skipped " << s.skipped << "\n";
  if (s.failed > 0) {
    std::cerr << "some examples failed; see " << scorer::journal_path_for(g.out).string()
              << " and rerun to retry them\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Calibration toolkit for binary classifier logits: Venn-Abers, temperature scaling, metrics."};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Seed for synthesis and splitting")->capture_default_str();
  app.add_option("--format", g.format, "Record file format: jsonl or csv (default: from extension)");
  app.add_option("--out", g.out, "Output path (stdout for text outputs when omitted)");

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic logit records");
  synth_cmd->add_option("--n", synth_args.config.n, "Number of records")->capture_default_str();
  synth_cmd->add_option("--prior", synth_args.config.prior, "P(label = 1)")->capture_default_str();
  synth_cmd->add_option("--mu", synth_args.config.mu, "Class mean of the margin")->capture_default_str();
  synth_cmd->add_option("--sigma", synth_args.config.sigma, "Margin noise")->capture_default_str();

  SplitArgs split_args;
  auto* split_cmd = app.add_subcommand("split", "Split records into calibration and test files");
  split_cmd->add_option("records", split_args.input)->required();
  split_cmd->add_option("--calibration-fraction", split_args.calibration_fraction)->capture_default_str();

  FitArgs fit_args;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a calibrator on calibration records");
  fit_cmd->add_option("records", fit_args.input)->required();
  fit_cmd->add_option("--method", fit_args.method, "ivap or temperature")->capture_default_str();
  fit_cmd->add_option("--kind", fit_args.kind, "softmax2 or softmaxK")->capture_default_str();
  fit_cmd->add_option("--tau", fit_args.tau, "Score temperature for ivap")->capture_default_str();

  PredictArgs predict_args;
  auto* predict_cmd = app.add_subcommand("predict", "Apply a fitted model");
  predict_cmd->add_option("input", predict_args.input, "Records, or a score CSV with --scores")->required();
  predict_cmd->add_option("--model", predict_args.model)->required();
  predict_cmd->add_flag("--scores", predict_args.scores, "Input is a score,label CSV (ivap models only)");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Compute a metrics report");
  eval_cmd->add_option("--predictions", eval_args.predictions, "CSV with id and p columns")->required();
  eval_cmd->add_option("--labels", eval_args.labels, "Records joined by id, or a score CSV with --scores")
      ->required();
  eval_cmd->add_flag("--scores", eval_args.scores, "Labels come from a score,label CSV, matched by row");
  eval_cmd->add_option("--bins", eval_args.bins)->capture_default_str();
  eval_cmd->add_option("--tag-method", eval_args.tag_method);
  eval_cmd->add_option("--token-pair", eval_args.token_pair);
  eval_cmd->add_option("--tau", eval_args.tau);

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "Evaluate methods across a temperature grid");
  sweep_cmd->add_option("records", sweep_args.input)->required();
  sweep_cmd->add_option("--tau-grid", sweep_args.grid, "lo:hi:steps, log-spaced")->capture_default_str();
  sweep_cmd->add_option("--methods", sweep_args.methods, "softmax2,softmaxK,ivap2,ivapK,tempscaled")
      ->capture_default_str();
  sweep_cmd->add_option("--calibration-fraction", sweep_args.calibration_fraction)->capture_default_str();
  sweep_cmd->add_option("--tempscaled-kind", sweep_args.tempscaled_kind)->capture_default_str();
  sweep_cmd->add_option("--bins", sweep_args.bins)->capture_default_str();

  ReliabilityArgs rel_args;
  auto* rel_cmd = app.add_subcommand("reliability", "Reliability bins (CSV) and diagram (SVG) on the test split");
  rel_cmd->add_option("records", rel_args.input)->required();
  rel_cmd->add_option("--method", rel_args.method)->capture_default_str();
  rel_cmd->add_option("--tau", rel_args.tau)->capture_default_str();
  rel_cmd->add_option("--calibration-fraction", rel_args.calibration_fraction)->capture_default_str();
  rel_cmd->add_option("--tempscaled-kind", rel_args.tempscaled_kind)->capture_default_str();
  rel_cmd->add_option("--bins", rel_args.bins)->capture_default_str();
  rel_cmd->add_option("--svg", rel_args.svg, "Also write the diagram here");

  FetchArgs fetch_args;
  auto* fetch_cmd = app.add_subcommand("fetch", "Score a dataset against a completion endpoint");
  fetch_cmd->add_option("--dataset", fetch_args.dataset, "JSONL with id, label and text fields")->required();
  fetch_cmd->add_option("--template", fetch_args.prompt, "boolq or sentiment")->capture_default_str();
  fetch_cmd->add_option("--answer-tokens", fetch_args.answer_tokens, "pos,neg")->capture_default_str();
  fetch_cmd->add_option("--base-url", fetch_args.config.base_url)->required();
  fetch_cmd->add_option("--model", fetch_args.config.model)->required();
  fetch_cmd->add_option("--auth-token-env", fetch_args.config.auth_token_env)->capture_default_str();
  fetch_cmd->add_option("--top-logprobs", fetch_args.config.top_logprobs)->capture_default_str();
  fetch_cmd->add_option("--max-in-flight", fetch_args.config.max_in_flight)->capture_default_str();
  fetch_cmd->add_option("--max-retries", fetch_args.config.max_retries)->capture_default_str();
  fetch_cmd->add_option("--timeout", fetch_args.timeout_ms, "Per-request timeout in ms")->capture_default_str();
  fetch_cmd->add_option("--missing-fill", fetch_args.config.missing_token_fill)->capture_default_str();
  fetch_cmd->add_flag("--error-on-missing", fetch_args.config.error_on_missing_token);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth_cmd) run_synth(g, synth_args);
    else if (*split_cmd) run_split(g, split_args);
    else if (*fit_cmd) run_fit(g, fit_args);
    else if (*predict_cmd) run_predict(g, predict_args);
    else if (*eval_cmd) run_eval(g, eval_args);
    else if (*sweep_cmd) run_sweep(g, sweep_args);
    else if (*rel_cmd) run_reliability(g, rel_args);
    else if (*fetch_cmd) return run_fetch(g, fetch_args);
    return kExitOk;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
