#include "ivapcal/temperature.hpp"

#include <algorithm>
#include <cmath>

#include "ivapcal/error.hpp"

namespace ivapcal::temperature {

using nlohmann::json;

double scaled_prob(const LogitRecord& record, ScoreKind kind, double tau) {
  return data::score(record, kind, tau);
}

double mean_nll(std::span<const LogitRecord> records, ScoreKind kind, double tau) {
  if (records.empty()) throw ValidationError("mean_nll: no records");
  double total = 0.0;
  for (const auto& r : records) {
    const double p = std::clamp(scaled_prob(r, kind, tau), kProbClamp, 1.0 - kProbClamp);
    total -= r.label == 1 ? std::log(p) : std::log1p(-p);
  }
  return total / static_cast<double>(records.size());
}

std::vector<double> log_spaced(double lo, double hi, int count) {
  if (!(lo > 0.0) || !(hi >= lo)) throw ValidationError("log_spaced: need 0 < lo <= hi");
  if (count < 1) throw ValidationError("log_spaced: need at least one point");
  if (count == 1) return {lo};
  std::vector<double> out(static_cast<std::size_t>(count));
  const double a = std::log(lo), b = std::log(hi);
  for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = std::exp(a + (b - a) * i / (count - 1));
  out.front() = lo;
  out.back() = hi;
  return out;
}

double golden_section_minimize(const std::function<double(double)>& f, double lo, double hi,
                               double relative_tolerance) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  for (int iter = 0; iter < 500; ++iter) {
    if (b - a <= relative_tolerance * 0.5 * (std::abs(a) + std::abs(b))) break;
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return fc <= fd ? c : d;
}

TemperatureModel fit_temperature(std::span<const LogitRecord> calibration, ScoreKind kind,
                                 const FitOptions& options) {
  if (calibration.empty()) throw ValidationError("fit_temperature: empty calibration set");
  const auto& bounds = options.bounds;
  if (!(bounds.tau_min > 0.0 && bounds.tau_min < bounds.tau_max && std::isfinite(bounds.tau_max)))
    throw ValidationError("fit_temperature: need 0 < tau_min < tau_max");
  if (options.grid_points < 2) throw ValidationError("fit_temperature: need at least 2 grid points");
  if (!(options.relative_tolerance > 0.0)) throw ValidationError("fit_temperature: tolerance must be positive");
  if (kind == ScoreKind::softmaxK)
    for (const auto& r : calibration)
      if (!r.full_logits) throw ValidationError("record " + r.id + " has no full_logits; softmaxK needs them");

  TemperatureModel model;
  model.kind = kind;
  model.grid_tau = log_spaced(bounds.tau_min, bounds.tau_max, options.grid_points);
  model.grid_loss.reserve(model.grid_tau.size());
  for (double tau : model.grid_tau) model.grid_loss.push_back(mean_nll(calibration, kind, tau));

  // First strict minimum, so ties resolve to the smaller temperature.
  std::size_t best = 0;
  for (std::size_t i = 1; i < model.grid_loss.size(); ++i)
    if (model.grid_loss[i] < model.grid_loss[best]) best = i;

  const double lo = model.grid_tau[best == 0 ? 0 : best - 1];
  const double hi = model.grid_tau[std::min(best + 1, model.grid_tau.size() - 1)];
  const auto loss = [&](double tau) { return mean_nll(calibration, kind, tau); };
  const double refined = golden_section_minimize(loss, lo, hi, options.relative_tolerance);
  const double refined_loss = loss(refined);

  if (refined_loss < model.grid_loss[best]) {
    model.tau_hat = refined;
    model.final_nll = refined_loss;
  } else {
    model.tau_hat = model.grid_tau[best];
    model.final_nll = model.grid_loss[best];
  }
  return model;
}

std::vector<ScoredExample> apply(const TemperatureModel& model, std::span<const LogitRecord> records) {
  return data::transform_scores(records, model.kind, model.tau_hat);
}

json to_json(const TemperatureModel& model) {
  return {{"tau_hat", model.tau_hat}, {"kind", std::string(to_string(model.kind))}, {"final_nll", model.final_nll}};
}

TemperatureModel from_json(const json& doc) {
  try {
    TemperatureModel model;
    model.tau_hat = doc.at("tau_hat").get<double>();
    model.kind = parse_score_kind(doc.at("kind").get<std::string>());
    model.final_nll = doc.at("final_nll").get<double>();
    if (!(model.tau_hat > 0.0) || !std::isfinite(model.tau_hat))
      throw ValidationError("tau_hat must be positive and finite");
    return model;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed temperature model document: ") + e.what());
  }
}

}  // namespace ivapcal::temperature
