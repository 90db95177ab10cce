#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "ivapcal/data.hpp"

namespace ivapcal::venn_abers {

// p0: calibrated P(y=1) had the test label been 0; p1: had it been 1.
// Always 0 <= p0 <= p1 <= 1.
struct Multiprobability {
  double p0 = 0.0;
  double p1 = 0.0;

  bool operator==(const Multiprobability&) const = default;
};

// p1 / (1 - p0 + p1), the log-loss-regret minimizing point probability.
// Lies in [p0, p1].
double merge(Multiprobability mp);

struct Prediction {
  Multiprobability mp;
  double merged = 0.0;
};

// Reference inductive Venn-Abers prediction: refits the isotonic regression on
// the calibration set augmented with (z, 0) and with (z, 1) and reads both fits
// at z. Costs a full fit per call; kept as the oracle for IvapCalibrator.
Multiprobability predict_naive(std::span<const ScoredExample> calibration, double z);

enum class CellKind { point, gap };

struct Cell {
  CellKind kind = CellKind::gap;
  Multiprobability mp;
};

// Precomputed IVAP. With distinct calibration scores s_1 < ... < s_d the
// output is constant on each of the 2d+1 cells
//   (-inf, s_1), [s_1], (s_1, s_2), ..., [s_d], (s_d, +inf)
// so fitting evaluates every cell once and prediction is a binary search.
class IvapCalibrator {
 public:
  static IvapCalibrator fit(std::span<const ScoredExample> calibration);

  Multiprobability predict(double z) const;
  std::vector<Prediction> predict_batch(std::span<const double> scores) const;

  // Index into cells() of the cell containing z.
  std::size_t cell_index(double z) const;

  const std::vector<double>& scores() const noexcept { return scores_; }
  const std::vector<Cell>& cells() const noexcept { return cells_; }
  std::size_t calibration_size() const noexcept { return m_; }
  std::size_t positives() const noexcept { return positives_; }

  // All calibration labels equal; outputs are one-sided.
  bool degenerate() const noexcept { return positives_ == 0 || positives_ == m_; }

  // Cells where p0 == p1.
  std::size_t non_strict_cells() const;

  // {"scores": [...], "cells": [{"kind", "p0", "p1"}...], "m": m, "positives": k}
  nlohmann::json to_json() const;
  static IvapCalibrator from_json(const nlohmann::json& doc);

 private:
  IvapCalibrator() = default;
  void check_invariants() const;

  std::vector<double> scores_;
  std::vector<Cell> cells_;
  std::size_t m_ = 0;
  std::size_t positives_ = 0;
};

inline IvapCalibrator fit(std::span<const ScoredExample> calibration) {
  return IvapCalibrator::fit(calibration);
}

inline Multiprobability predict(const IvapCalibrator& calibrator, double z) {
  return calibrator.predict(z);
}

inline std::vector<Prediction> predict_batch(const IvapCalibrator& calibrator,
                                             std::span<const double> scores) {
  return calibrator.predict_batch(scores);
}

}  // namespace ivapcal::venn_abers
