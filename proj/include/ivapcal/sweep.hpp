#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ivapcal/data.hpp"
#include "ivapcal/metrics.hpp"

namespace ivapcal::sweep {

enum class Method { softmax2, softmaxK, ivap2, ivapK, tempscaled };

std::string_view to_string(Method method);
Method parse_method(std::string_view text);
std::vector<Method> parse_methods(std::string_view comma_list);

// Underlying score transform of a method; tempscaled uses `tempscaled_kind`.
ScoreKind kind_of(Method method, ScoreKind tempscaled_kind = ScoreKind::softmax2);
bool is_ivap(Method method);

struct TauGrid {
  double lo = 0.1;
  double hi = 100.0;
  int steps = 13;
};

// "lo:hi:steps"
TauGrid parse_tau_grid(std::string_view text);

struct SweepRow {
  double tau = 0.0;
  Method method = Method::softmax2;
  std::size_t n = 0;
  double ece = 0.0;
  double brier = 0.0;
  double auc = 0.0;
  double f1_macro = 0.0;
};

struct SweepOptions {
  TauGrid grid;
  std::vector<Method> methods{Method::softmax2, Method::ivap2};
  SplitSpec split;
  int bin_count = metrics::kDefaultBins;
  ScoreKind tempscaled_kind = ScoreKind::softmax2;
};

// Predictions of one method at one temperature, evaluated on the test side.
struct MethodOutput {
  std::vector<double> probs;
  std::vector<int> labels;
  // Ranks like probs; used for AUC. For the plain softmax methods this is the
  // pre-sigmoid score, which keeps ties from saturation out of the AUC.
  std::vector<double> rank_scores;
  double tau = 0.0;
};

MethodOutput run_method(const Split& split, Method method, double tau,
                        ScoreKind tempscaled_kind = ScoreKind::softmax2);

// One row per (tau, method) for swept methods, in grid order then method
// order; tempscaled contributes a single row tagged with its fitted tau.
std::vector<SweepRow> run_sweep(std::span<const LogitRecord> records, const SweepOptions& options);

// Columns `tau,method,n,ece,brier,auc,f1_macro`.
void write_sweep_csv(std::span<const SweepRow> rows, std::ostream& out);
void write_sweep_csv(std::span<const SweepRow> rows, const std::filesystem::path& path);

}  // namespace ivapcal::sweep
