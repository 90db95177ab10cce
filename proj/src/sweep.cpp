#include "ivapcal/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ivapcal/error.hpp"
#include "ivapcal/temperature.hpp"
#include "ivapcal/venn_abers.hpp"

namespace ivapcal::sweep {

namespace {

// Order-equivalent to the method's probability but free of saturation ties,
// so AUC does not drift with tau once probabilities round to 0 or 1.
double unsaturated_score(const LogitRecord& r, ScoreKind kind, double tau) {
  if (kind == ScoreKind::softmax2) return r.u_pos - r.u_neg;
  const auto& u = *r.full_logits;
  const double top = *std::max_element(u.begin(), u.end());
  double z = 0.0;
  for (double v : u) z += std::exp((v - top) / tau);
  return (u[*r.pos_index] - top) / tau - std::log(z);
}

std::vector<double> unsaturated_scores(std::span<const LogitRecord> records, ScoreKind kind, double tau) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(unsaturated_score(r, kind, tau));
  return out;
}

}  // namespace

std::string_view to_string(Method method) {
  switch (method) {
    case Method::softmax2: return "softmax2";
    case Method::softmaxK: return "softmaxK";
    case Method::ivap2: return "ivap2";
    case Method::ivapK: return "ivapK";
    case Method::tempscaled: return "tempscaled";
  }
  return "?";
}

Method parse_method(std::string_view text) {
  for (auto m : {Method::softmax2, Method::softmaxK, Method::ivap2, Method::ivapK, Method::tempscaled})
    if (text == to_string(m)) return m;
  throw ValidationError("unknown method '" + std::string(text) +
                        "' (softmax2|softmaxK|ivap2|ivapK|tempscaled)");
}

std::vector<Method> parse_methods(std::string_view comma_list) {
  std::vector<Method> out;
  std::size_t start = 0;
  while (start <= comma_list.size()) {
    const auto end = std::min(comma_list.find(',', start), comma_list.size());
    const auto item = comma_list.substr(start, end - start);
    if (!item.empty()) out.push_back(parse_method(item));
    start = end + 1;
  }
  if (out.empty()) throw ValidationError("no methods given");
  return out;
}

ScoreKind kind_of(Method method, ScoreKind tempscaled_kind) {
  switch (method) {
    case Method::softmax2:
    case Method::ivap2: return ScoreKind::softmax2;
    case Method::softmaxK:
    case Method::ivapK: return ScoreKind::softmaxK;
    case Method::tempscaled: return tempscaled_kind;
  }
  return ScoreKind::softmax2;
}

bool is_ivap(Method method) { return method == Method::ivap2 || method == Method::ivapK; }

TauGrid parse_tau_grid(std::string_view text) {
  const auto a = text.find(':');
  const auto b = a == std::string_view::npos ? a : text.find(':', a + 1);
  if (b == std::string_view::npos) throw ValidationError("tau grid must be lo:hi:steps");
  TauGrid g;
  try {
    std::size_t used = 0;
    const std::string lo(text.substr(0, a)), hi(text.substr(a + 1, b - a - 1)), steps(text.substr(b + 1));
    g.lo = std::stod(lo, &used);
    if (used != lo.size()) throw ValidationError("bad lo");
    g.hi = std::stod(hi, &used);
    if (used != hi.size()) throw ValidationError("bad hi");
    g.steps = std::stoi(steps, &used);
    if (used != steps.size()) throw ValidationError("bad steps");
  } catch (const std::exception&) {
    throw ValidationError("tau grid must be lo:hi:steps, got '" + std::string(text) + "'");
  }
  if (!(g.lo > 0.0) || !(g.hi >= g.lo) || g.steps < 1)
    throw ValidationError("tau grid needs 0 < lo <= hi and steps >= 1");
  return g;
}

MethodOutput run_method(const Split& split, Method method, double tau, ScoreKind tempscaled_kind) {
  MethodOutput out;
  out.tau = tau;
  const auto kind = kind_of(method, tempscaled_kind);
  if (method == Method::tempscaled) {
    const auto model = temperature::fit_temperature(split.calibration, kind);
    const auto scored = temperature::apply(model, split.test);
    out.probs = data::scores_of(scored);
    out.labels = data::labels_of(scored);
    out.tau = model.tau_hat;
    out.rank_scores = unsaturated_scores(split.test, kind, out.tau);
    return out;
  }
  const auto test = data::transform_scores(split.test, kind, tau);
  out.labels = data::labels_of(test);
  if (!is_ivap(method)) {
    out.probs = data::scores_of(test);
    out.rank_scores = unsaturated_scores(split.test, kind, tau);
    return out;
  }
  const auto calibrator = venn_abers::IvapCalibrator::fit(data::transform_scores(split.calibration, kind, tau));
  const auto predictions = calibrator.predict_batch(data::scores_of(test));
  out.probs.reserve(predictions.size());
  for (const auto& p : predictions) out.probs.push_back(p.merged);
  out.rank_scores = out.probs;
  return out;
}

std::vector<SweepRow> run_sweep(std::span<const LogitRecord> records, const SweepOptions& options) {
  if (options.methods.empty()) throw ValidationError("sweep: no methods given");
  for (auto m : options.methods)
    if (kind_of(m, options.tempscaled_kind) == ScoreKind::softmaxK)
      for (const auto& r : records)
        if (!r.full_logits)
          throw ValidationError("method " + std::string(to_string(m)) + " needs full_logits; record " + r.id +
                                " has none");
  const auto split = data::split(records, options.split);
  const auto taus = temperature::log_spaced(options.grid.lo, options.grid.hi, options.grid.steps);

  auto row_of = [&](Method m, const MethodOutput& o) {
    const auto report = metrics::evaluate_all(o.probs, o.rank_scores, o.labels, options.bin_count);
    return SweepRow{o.tau, m, report.n, report.ece, report.brier, report.auc, report.f1_macro};
  };

  std::vector<SweepRow> rows;
  for (double tau : taus)
    for (auto m : options.methods)
      if (m != Method::tempscaled) rows.push_back(row_of(m, run_method(split, m, tau, options.tempscaled_kind)));
  for (auto m : options.methods)
    if (m == Method::tempscaled) rows.push_back(row_of(m, run_method(split, m, 1.0, options.tempscaled_kind)));
  return rows;
}

void write_sweep_csv(std::span<const SweepRow> rows, std::ostream& out) {
  out << "tau,method,n,ece,brier,auc,f1_macro\n";
  for (const auto& r : rows)
    out << data::format_double(r.tau) << ',' << to_string(r.method) << ',' << r.n << ','
        << data::format_double(r.ece) << ',' << data::format_double(r.brier) << ',' << data::format_double(r.auc)
        << ',' << data::format_double(r.f1_macro) << '\n';
}

void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  write_sweep_csv(rows, out);
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace ivapcal::sweep
