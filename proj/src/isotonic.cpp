#include "ivapcal/isotonic.hpp"

#include <algorithm>
#include <cmath>

#include "ivapcal/error.hpp"

namespace ivapcal::isotonic {

std::vector<WeightedPoint> pool_duplicates(std::span<const ScoredExample> examples) {
  if (examples.empty()) throw ValidationError("pool_duplicates: empty input");
  std::vector<ScoredExample> sorted(examples.begin(), examples.end());
  for (const auto& e : sorted)
    if (!std::isfinite(e.score)) throw ValidationError("pool_duplicates: non-finite score");
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredExample& a, const ScoredExample& b) { return a.score < b.score; });

  std::vector<WeightedPoint> points;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    double positives = 0.0;
    while (j < sorted.size() && sorted[j].score == sorted[i].score) positives += sorted[j++].label;
    const double count = static_cast<double>(j - i);
    points.push_back({sorted[i].score, positives / count, count});
    i = j;
  }
  return points;
}

IsotonicFit fit_pava(std::span<const WeightedPoint> points) {
  if (points.empty()) throw ValidationError("fit_pava: empty input");
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (!std::isfinite(p.score)) throw ValidationError("fit_pava: non-finite score");
    if (!(p.weight > 0.0) || !std::isfinite(p.weight)) throw ValidationError("fit_pava: weights must be positive");
    if (!(p.value >= 0.0 && p.value <= 1.0)) throw ValidationError("fit_pava: values must lie in [0,1]");
    if (i > 0 && !(points[i - 1].score < p.score))
      throw ValidationError("fit_pava: scores must be strictly ascending");
  }

  struct Block {
    double sum_wy;
    double sum_w;
    std::size_t end;  // one past the last member
    double mean() const { return sum_wy / sum_w; }
  };
  std::vector<Block> stack;
  stack.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    Block cur{points[i].weight * points[i].value, points[i].weight, i + 1};
    while (!stack.empty() && stack.back().mean() >= cur.mean()) {
      cur.sum_wy += stack.back().sum_wy;
      cur.sum_w += stack.back().sum_w;
      stack.pop_back();
    }
    stack.push_back(cur);
  }

  IsotonicFit fit;
  fit.knots.reserve(points.size());
  fit.values.reserve(points.size());
  fit.weights.reserve(points.size());
  std::size_t begin = 0;
  for (const auto& b : stack) {
    const double v = std::clamp(b.mean(), 0.0, 1.0);
    for (std::size_t i = begin; i < b.end; ++i) {
      fit.knots.push_back(points[i].score);
      fit.values.push_back(v);
      fit.weights.push_back(points[i].weight);
    }
    begin = b.end;
  }
  return fit;
}

double evaluate(const IsotonicFit& fit, double z) {
  if (fit.knots.empty()) throw ValidationError("evaluate: empty fit");
  const auto it = std::upper_bound(fit.knots.begin(), fit.knots.end(), z);
  if (it == fit.knots.begin()) return fit.values.front();
  return fit.values[static_cast<std::size_t>(it - fit.knots.begin()) - 1];
}

}  // namespace ivapcal::isotonic
