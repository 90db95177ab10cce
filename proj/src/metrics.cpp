#include "ivapcal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ivapcal/data.hpp"
#include "ivapcal/error.hpp"

namespace ivapcal::metrics {

using nlohmann::json;

namespace {

void check_pairs(std::span<const double> preds, std::span<const int> labels, const char* what) {
  if (preds.size() != labels.size())
    throw ValidationError(std::string(what) + ": " + std::to_string(preds.size()) + " predictions but " +
                          std::to_string(labels.size()) + " labels");
  if (preds.empty()) throw ValidationError(std::string(what) + ": empty input");
  for (int y : labels)
    if (y != 0 && y != 1) throw ValidationError(std::string(what) + ": labels must be 0 or 1");
}

void check_probabilities(std::span<const double> preds, const char* what) {
  for (double p : preds)
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError(std::string(what) + ": prediction outside [0,1]");
}

double f1(std::size_t tp, std::size_t fp, std::size_t fn) {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

}  // namespace

std::size_t ReliabilityBins::total() const { return std::accumulate(count.begin(), count.end(), std::size_t{0}); }

int bin_of(double p, int bin_count) {
  if (p <= 0.0) return 0;
  int m = static_cast<int>(std::ceil(p * bin_count));
  m = std::clamp(m, 1, bin_count);
  // Snap to the edges as stored in ReliabilityBins::lo/hi.
  while (m > 1 && p <= static_cast<double>(m - 1) / bin_count) --m;
  while (m < bin_count && p > static_cast<double>(m) / bin_count) ++m;
  return m - 1;
}

ReliabilityBins reliability_bins(std::span<const double> preds, std::span<const int> labels, int bin_count) {
  check_pairs(preds, labels, "reliability_bins");
  check_probabilities(preds, "reliability_bins");
  if (bin_count < 1) throw ValidationError("reliability_bins: need at least one bin");
  ReliabilityBins bins;
  bins.bin_count = bin_count;
  bins.count.assign(static_cast<std::size_t>(bin_count), 0);
  bins.sum_pred.assign(static_cast<std::size_t>(bin_count), 0.0);
  bins.sum_label.assign(static_cast<std::size_t>(bin_count), 0.0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto b = static_cast<std::size_t>(bin_of(preds[i], bin_count));
    ++bins.count[b];
    bins.sum_pred[b] += preds[i];
    bins.sum_label[b] += labels[i];
  }
  return bins;
}

double ece(const ReliabilityBins& bins) {
  const std::size_t n = bins.total();
  if (n == 0) throw ValidationError("ece: no predictions");
  // |B| * |frac_pos - mean_pred| == |sum_label - sum_pred|
  double total = 0.0;
  for (std::size_t b = 0; b < bins.count.size(); ++b)
    if (bins.count[b] > 0) total += std::abs(bins.sum_label[b] - bins.sum_pred[b]);
  return total / static_cast<double>(n);
}

double ece(std::span<const double> preds, std::span<const int> labels, int bin_count) {
  return ece(reliability_bins(preds, labels, bin_count));
}

double brier(std::span<const double> preds, std::span<const int> labels) {
  check_pairs(preds, labels, "brier");
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double e = preds[i] - labels[i];
    total += e * e;
  }
  return total / static_cast<double>(preds.size());
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  check_pairs(scores, labels, "auc");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Walk tie groups in ascending score; each positive beats every negative
  // seen in earlier groups and ties half of the negatives in its own group.
  double negatives_below = 0.0, positives = 0.0, negatives = 0.0, wins = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    double pos = 0.0, neg = 0.0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? pos : neg) += 1.0;
      ++j;
    }
    wins += pos * negatives_below + 0.5 * pos * neg;
    negatives_below += neg;
    positives += pos;
    negatives += neg;
    i = j;
  }
  if (positives == 0.0 || negatives == 0.0) throw ValidationError("auc: undefined with a single class");
  return wins / (positives * negatives);
}

double f1_macro(std::span<const double> preds, std::span<const int> labels, double threshold) {
  check_pairs(preds, labels, "f1_macro");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool predicted = preds[i] >= threshold;
    if (predicted) (labels[i] == 1 ? tp : fp)++;
    else (labels[i] == 1 ? fn : tn)++;
  }
  // Class 0 as the positive class swaps tp<->tn and fp<->fn.
  return 0.5 * (f1(tp, fp, fn) + f1(tn, fn, fp));
}

MetricsReport evaluate_all(std::span<const double> preds, std::span<const double> scores_for_auc,
                           std::span<const int> labels, int bin_count, ConfigTag tag) {
  MetricsReport r;
  r.ece = ece(preds, labels, bin_count);
  r.brier = brier(preds, labels);
  r.auc = auc(scores_for_auc, labels);
  r.f1_macro = f1_macro(preds, labels);
  r.n = preds.size();
  r.bin_count = bin_count;
  r.tag = std::move(tag);
  return r;
}

json to_json(const MetricsReport& r) {
  json tag = {{"method", r.tag.method}, {"token_pair", r.tag.token_pair}};
  tag["tau"] = r.tag.tau ? json(*r.tag.tau) : json(nullptr);
  return {{"tag", std::move(tag)}, {"n", r.n},         {"bins", r.bin_count}, {"ece", r.ece},
          {"brier", r.brier},      {"auc", r.auc},     {"f1_macro", r.f1_macro}};
}

MetricsReport report_from_json(const json& doc) {
  try {
    MetricsReport r;
    r.n = doc.at("n").get<std::size_t>();
    r.bin_count = doc.at("bins").get<int>();
    r.ece = doc.at("ece").get<double>();
    r.brier = doc.at("brier").get<double>();
    r.auc = doc.at("auc").get<double>();
    r.f1_macro = doc.at("f1_macro").get<double>();
    const auto& tag = doc.at("tag");
    r.tag.method = tag.at("method").get<std::string>();
    r.tag.token_pair = tag.at("token_pair").get<std::string>();
    if (!tag.at("tau").is_null()) r.tag.tau = tag.at("tau").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed metrics report: ") + e.what());
  }
}

void write_report(const MetricsReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(report).dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

void write_bins_csv(const ReliabilityBins& bins, std::ostream& out) {
  out << "bin,lo,hi,count,mean_pred,frac_pos\n";
  for (int b = 0; b < bins.bin_count; ++b) {
    const auto i = static_cast<std::size_t>(b);
    const auto n = bins.count[i];
    out << (b + 1) << ',' << data::format_double(bins.lo(b)) << ',' << data::format_double(bins.hi(b)) << ','
        << n << ',';
    if (n > 0)
      out << data::format_double(bins.sum_pred[i] / static_cast<double>(n)) << ','
          << data::format_double(bins.sum_label[i] / static_cast<double>(n));
    else
      out << ',';
    out << '\n';
  }
}

void write_bins_csv(const ReliabilityBins& bins, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  write_bins_csv(bins, out);
  if (!out) throw IoError("write failed for " + path.string());
}

std::string reliability_svg(const ReliabilityBins& bins, const std::string& title) {
  constexpr double kCanvas = 600.0, kMargin = 60.0, kPlot = kCanvas - 2 * kMargin, kMaxRadius = 30.0;
  const auto x_of = [&](double v) { return kMargin + v * kPlot; };
  const auto y_of = [&](double v) { return kCanvas - kMargin - v * kPlot; };
  const auto num = [](double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
  };
  const double n = static_cast<double>(bins.total());

  std::ostringstream svg;
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"600\" viewBox=\"0 0 600 600\">\n"
      << "<rect x=\"0\" y=\"0\" width=\"600\" height=\"600\" fill=\"white\"/>\n"
      << "<rect x=\"" << kMargin << "\" y=\"" << kMargin << "\" width=\"" << kPlot << "\" height=\"" << kPlot
      << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 10; ++t) {
    const double v = t / 10.0;
    const std::string label = num(v);
    svg << "<line class=\"tick\" x1=\"" << num(x_of(v)) << "\" y1=\"" << num(y_of(0)) << "\" x2=\"" << num(x_of(v))
        << "\" y2=\"" << num(y_of(0) + 6) << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << num(x_of(v)) << "\" y=\"" << num(y_of(0) + 20)
        << "\" font-size=\"11\" text-anchor=\"middle\">" << label << "</text>\n"
        << "<line class=\"tick\" x1=\"" << num(x_of(0) - 6) << "\" y1=\"" << num(y_of(v)) << "\" x2=\""
        << num(x_of(0)) << "\" y2=\"" << num(y_of(v)) << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << num(x_of(0) - 10) << "\" y=\"" << num(y_of(v) + 4)
        << "\" font-size=\"11\" text-anchor=\"end\">" << label << "</text>\n";
  }
  svg << "<line class=\"diagonal\" x1=\"" << num(x_of(0)) << "\" y1=\"" << num(y_of(0)) << "\" x2=\""
      << num(x_of(1)) << "\" y2=\"" << num(y_of(1)) << "\" stroke=\"gray\" stroke-dasharray=\"6,4\"/>\n";
  for (std::size_t b = 0; b < bins.count.size(); ++b) {
    if (bins.count[b] == 0) continue;
    const double c = static_cast<double>(bins.count[b]);
    const double mean_pred = bins.sum_pred[b] / c;
    const double frac_pos = bins.sum_label[b] / c;
    svg << "<circle cx=\"" << num(x_of(mean_pred)) << "\" cy=\"" << num(y_of(frac_pos)) << "\" r=\""
        << num(kMaxRadius * std::sqrt(c / n)) << "\" fill=\"steelblue\" fill-opacity=\"0.6\" stroke=\"navy\"/>\n";
  }
  svg << "<text x=\"300\" y=\"585\" font-size=\"13\" text-anchor=\"middle\">mean predicted probability</text>\n"
      << "<text x=\"18\" y=\"300\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 300)\">"
      << "observed positive fraction</text>\n";
  if (!title.empty()) {
    std::string escaped;
    for (char ch : title) {
      switch (ch) {
        case '&': escaped += "&amp;"; break;
        case '<': escaped += "&lt;"; break;
        case '>': escaped += "&gt;"; break;
        case '"': escaped += "&quot;"; break;
        default: escaped += ch;
      }
    }
    svg << "<text x=\"300\" y=\"35\" font-size=\"15\" text-anchor=\"middle\">" << escaped << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace ivapcal::metrics
