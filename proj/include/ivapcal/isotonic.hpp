#pragma once

#include <span>
#include <vector>

#include "ivapcal/data.hpp"

namespace ivapcal::isotonic {

// A distinct score with the mean label and count of the examples sharing it.
struct WeightedPoint {
  double score = 0.0;
  double value = 0.0;
  double weight = 1.0;
};

// Least-squares non-decreasing fit, one entry per input point.
struct IsotonicFit {
  std::vector<double> knots;
  std::vector<double> values;
  std::vector<double> weights;
};

// Sorted strictly ascending by score; ties become one point weighted by their count.
std::vector<WeightedPoint> pool_duplicates(std::span<const ScoredExample> examples);

// Pool-adjacent-violators with a block stack, linear in the number of points.
// Input must be sorted strictly ascending by score.
IsotonicFit fit_pava(std::span<const WeightedPoint> points);

// Step evaluation: value of the greatest knot <= z, or the first value when z
// lies below every knot.
double evaluate(const IsotonicFit& fit, double z);

}  // namespace ivapcal::isotonic
