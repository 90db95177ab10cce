#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace ivapcal::metrics {

inline constexpr int kDefaultBins = 10;

// Equal-width bins over [0, 1]; bin m (1-based) covers ((m-1)/M, m/M] and a
// prediction of exactly 0 goes to bin 1.
struct ReliabilityBins {
  int bin_count = kDefaultBins;
  std::vector<std::size_t> count;
  std::vector<double> sum_pred;
  std::vector<double> sum_label;

  double lo(int bin) const { return static_cast<double>(bin) / bin_count; }
  double hi(int bin) const { return static_cast<double>(bin + 1) / bin_count; }
  std::size_t total() const;
};

// 0-based index of the bin holding p.
int bin_of(double p, int bin_count);

ReliabilityBins reliability_bins(std::span<const double> preds, std::span<const int> labels,
                                 int bin_count = kDefaultBins);

double ece(const ReliabilityBins& bins);
double ece(std::span<const double> preds, std::span<const int> labels, int bin_count = kDefaultBins);

double brier(std::span<const double> preds, std::span<const int> labels);

// Mann-Whitney statistic with ties credited one half. Single-class input throws.
double auc(std::span<const double> scores, std::span<const int> labels);

double f1_macro(std::span<const double> preds, std::span<const int> labels, double threshold = 0.5);

struct ConfigTag {
  std::string method;
  std::string token_pair;
  std::optional<double> tau;

  bool operator==(const ConfigTag&) const = default;
};

struct MetricsReport {
  double ece = 0.0;
  double brier = 0.0;
  double auc = 0.0;
  double f1_macro = 0.0;
  std::size_t n = 0;
  int bin_count = kDefaultBins;
  ConfigTag tag;
};

// AUC is computed on scores_for_auc so a raw ranking score can be reported
// next to calibrated-probability ECE.
MetricsReport evaluate_all(std::span<const double> preds, std::span<const double> scores_for_auc,
                           std::span<const int> labels, int bin_count = kDefaultBins,
                           ConfigTag tag = {});

nlohmann::json to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& doc);
void write_report(const MetricsReport& report, const std::filesystem::path& path);

// Header `bin,lo,hi,count,mean_pred,frac_pos`; one row per bin, bins 1-based.
void write_bins_csv(const ReliabilityBins& bins, std::ostream& out);
void write_bins_csv(const ReliabilityBins& bins, const std::filesystem::path& path);

// 600x600 reliability diagram: one circle per non-empty bin at
// (mean predicted, observed positive fraction) with radius proportional to
// sqrt(bin share), the diagonal, and axis ticks every 0.1.
std::string reliability_svg(const ReliabilityBins& bins, const std::string& title = {});

}  // namespace ivapcal::metrics
