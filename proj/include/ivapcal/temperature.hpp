#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "json.hpp"

#include "ivapcal/data.hpp"

namespace ivapcal::temperature {

// Probabilities entering the log loss are clamped to [kProbClamp, 1 - kProbClamp].
inline constexpr double kProbClamp = 1e-12;

struct Bounds {
  double tau_min = 0.01;
  double tau_max = 1000.0;
};

struct FitOptions {
  Bounds bounds;
  int grid_points = 200;
  double relative_tolerance = 1e-6;
};

struct TemperatureModel {
  double tau_hat = 1.0;
  ScoreKind kind = ScoreKind::softmax2;
  double final_nll = 0.0;
  std::vector<double> grid_tau;
  std::vector<double> grid_loss;
};

double scaled_prob(const LogitRecord& record, ScoreKind kind, double tau);

// Mean binary negative log-likelihood of the labels under scaled_prob at tau.
double mean_nll(std::span<const LogitRecord> records, ScoreKind kind, double tau);

// Log-spaced grid search over the bounds followed by golden-section refinement
// between the grid neighbours of the best grid point. Ties go to smaller tau.
TemperatureModel fit_temperature(std::span<const LogitRecord> calibration, ScoreKind kind,
                                 const FitOptions& options = {});

std::vector<ScoredExample> apply(const TemperatureModel& model, std::span<const LogitRecord> records);

std::vector<double> log_spaced(double lo, double hi, int count);

// Minimizes f on [lo, hi] until the bracket width falls below
// relative_tolerance times its midpoint. On equal values the left
// sub-bracket is kept.
double golden_section_minimize(const std::function<double(double)>& f, double lo, double hi,
                               double relative_tolerance);

// {"tau_hat": t, "kind": "...", "final_nll": l}
nlohmann::json to_json(const TemperatureModel& model);
TemperatureModel from_json(const nlohmann::json& doc);

}  // namespace ivapcal::temperature
