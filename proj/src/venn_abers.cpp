#include "ivapcal/venn_abers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "ivapcal/error.hpp"
#include "ivapcal/isotonic.hpp"

namespace ivapcal::venn_abers {

using nlohmann::json;

double merge(Multiprobability mp) {
  const double p = mp.p1 / (1.0 - mp.p0 + mp.p1);
  // The quotient can round a hair outside [p0, p1] when the pair is (nearly) equal.
  return std::clamp(p, mp.p0, mp.p1);
}

namespace {

void check_calibration(std::span<const ScoredExample> calibration) {
  if (calibration.size() < 2)
    throw ValidationError("IVAP needs at least 2 calibration examples, got " + std::to_string(calibration.size()));
  for (const auto& e : calibration) {
    if (!std::isfinite(e.score)) throw ValidationError("IVAP calibration score is not finite");
    if (e.label != 0 && e.label != 1) throw ValidationError("IVAP calibration label must be 0 or 1");
  }
}

void check_query(double z) {
  if (!std::isfinite(z)) throw ValidationError("IVAP query score is not finite");
}

double fit_at(std::span<const ScoredExample> calibration, double z, int label) {
  std::vector<ScoredExample> augmented(calibration.begin(), calibration.end());
  augmented.push_back({z, label});
  const auto fit = isotonic::fit_pava(isotonic::pool_duplicates(augmented));
  const auto it = std::lower_bound(fit.knots.begin(), fit.knots.end(), z);
  return fit.values[static_cast<std::size_t>(it - fit.knots.begin())];
}

// Label counts of a PAVA block. Calibration weights are example counts and
// labels are 0/1, so all block sums are integers and mean comparisons can be
// made exactly by cross-multiplication.
struct Block {
  std::int64_t positives = 0;
  std::int64_t count = 0;

  Block& operator+=(const Block& o) {
    positives += o.positives;
    count += o.count;
    return *this;
  }
  double mean() const { return static_cast<double>(positives) / static_cast<double>(count); }
};

bool mean_ge(const Block& a, const Block& b) { return a.positives * b.count >= b.positives * a.count; }
bool mean_le(const Block& a, const Block& b) { return a.positives * b.count <= b.positives * a.count; }

// PAVA stack states for every prefix (or suffix) of the pooled calibration
// points, shared through parent links: state i is the linked list starting at
// top[i]. Blocks below the top of a stack are never split by later points.
struct PersistentStacks {
  struct Node {
    Block block;
    std::int64_t below = -1;
  };
  std::vector<Node> nodes;
  std::vector<std::int64_t> top;
};

template <class Violates>
PersistentStacks build_stacks(std::span<const Block> points, bool reverse, Violates violates) {
  const std::size_t d = points.size();
  PersistentStacks s;
  s.nodes.reserve(d);
  s.top.assign(d + 1, -1);
  std::int64_t head = -1;
  for (std::size_t step = 0; step < d; ++step) {
    const std::size_t i = reverse ? d - 1 - step : step;
    Block cur = points[i];
    while (head >= 0 && violates(s.nodes[static_cast<std::size_t>(head)].block, cur)) {
      cur += s.nodes[static_cast<std::size_t>(head)].block;
      head = s.nodes[static_cast<std::size_t>(head)].below;
    }
    s.nodes.push_back({cur, head});
    head = static_cast<std::int64_t>(s.nodes.size() - 1);
    // Forward: top[i + 1] holds points [0, i]. Reverse: top[i] holds points [i, d).
    s.top[reverse ? i : i + 1] = head;
  }
  return s;
}

// Value of the isotonic fit at an inserted block sitting between the prefix
// state `left` and the suffix state `right`: merge with neighbouring blocks
// until neither neighbour violates monotonicity.
double inserted_value(Block inserted, const PersistentStacks& prefix, std::int64_t left,
                      const PersistentStacks& suffix, std::int64_t right) {
  bool changed = true;
  while (changed) {
    changed = false;
    while (left >= 0 && mean_ge(prefix.nodes[static_cast<std::size_t>(left)].block, inserted)) {
      inserted += prefix.nodes[static_cast<std::size_t>(left)].block;
      left = prefix.nodes[static_cast<std::size_t>(left)].below;
      changed = true;
    }
    while (right >= 0 && mean_le(suffix.nodes[static_cast<std::size_t>(right)].block, inserted)) {
      inserted += suffix.nodes[static_cast<std::size_t>(right)].block;
      right = suffix.nodes[static_cast<std::size_t>(right)].below;
      changed = true;
    }
  }
  return inserted.mean();
}

}  // namespace

Multiprobability predict_naive(std::span<const ScoredExample> calibration, double z) {
  check_calibration(calibration);
  check_query(z);
  return {fit_at(calibration, z, 0), fit_at(calibration, z, 1)};
}

IvapCalibrator IvapCalibrator::fit(std::span<const ScoredExample> calibration) {
  check_calibration(calibration);
  const auto pooled = isotonic::pool_duplicates(calibration);

  IvapCalibrator cal;
  cal.m_ = calibration.size();
  for (const auto& e : calibration) cal.positives_ += static_cast<std::size_t>(e.label);

  std::vector<Block> points;
  points.reserve(pooled.size());
  cal.scores_.reserve(pooled.size());
  for (const auto& p : pooled) {
    const auto count = static_cast<std::int64_t>(std::llround(p.weight));
    points.push_back({static_cast<std::int64_t>(std::llround(p.value * p.weight)), count});
    cal.scores_.push_back(p.score);
  }

  const auto prefix = build_stacks(points, false, mean_ge);
  const auto suffix = build_stacks(points, true, mean_le);

  const std::size_t d = points.size();
  cal.cells_.reserve(2 * d + 1);
  auto cell = [&](CellKind kind, Block base, std::size_t left_state, std::size_t right_state) {
    Multiprobability mp;
    mp.p0 = inserted_value({base.positives, base.count + 1}, prefix, prefix.top[left_state], suffix,
                           suffix.top[right_state]);
    mp.p1 = inserted_value({base.positives + 1, base.count + 1}, prefix, prefix.top[left_state], suffix,
                           suffix.top[right_state]);
    cal.cells_.push_back({kind, mp});
  };
  for (std::size_t k = 0; k < d; ++k) {
    cell(CellKind::gap, {}, k, k);
    cell(CellKind::point, points[k], k, k + 1);
  }
  cell(CellKind::gap, {}, d, d);
  cal.check_invariants();
  return cal;
}

std::size_t IvapCalibrator::cell_index(double z) const {
  check_query(z);
  const auto it = std::lower_bound(scores_.begin(), scores_.end(), z);
  const auto k = static_cast<std::size_t>(it - scores_.begin());
  return (it != scores_.end() && *it == z) ? 2 * k + 1 : 2 * k;
}

Multiprobability IvapCalibrator::predict(double z) const { return cells_[cell_index(z)].mp; }

std::vector<Prediction> IvapCalibrator::predict_batch(std::span<const double> scores) const {
  std::vector<Prediction> out;
  out.reserve(scores.size());
  for (double z : scores) {
    const auto mp = predict(z);
    out.push_back({mp, merge(mp)});
  }
  return out;
}

std::size_t IvapCalibrator::non_strict_cells() const {
  return static_cast<std::size_t>(
      std::count_if(cells_.begin(), cells_.end(), [](const Cell& c) { return c.mp.p0 == c.mp.p1; }));
}

void IvapCalibrator::check_invariants() const {
  const std::size_t d = scores_.size();
  if (d == 0) throw ValidationError("calibrator has no scores");
  if (m_ < 2) throw ValidationError("calibrator needs m >= 2");
  if (positives_ > m_) throw ValidationError("calibrator positives exceed m");
  if (cells_.size() != 2 * d + 1)
    throw ValidationError("calibrator must have 2d+1 cells for d distinct scores");
  for (std::size_t k = 0; k < d; ++k) {
    if (!std::isfinite(scores_[k])) throw ValidationError("calibrator score is not finite");
    if (k > 0 && !(scores_[k - 1] < scores_[k]))
      throw ValidationError("calibrator scores must be strictly ascending");
  }
  for (std::size_t c = 0; c < cells_.size(); ++c) {
    const auto& cell = cells_[c];
    const auto expected = (c % 2 == 0) ? CellKind::gap : CellKind::point;
    if (cell.kind != expected) throw ValidationError("calibrator cells must alternate gap/point");
    const auto& mp = cell.mp;
    if (!(0.0 <= mp.p0 && mp.p0 <= mp.p1 && mp.p1 <= 1.0))
      throw ValidationError("calibrator cell violates 0 <= p0 <= p1 <= 1");
    if (c > 0 && (mp.p0 < cells_[c - 1].mp.p0 || mp.p1 < cells_[c - 1].mp.p1))
      throw ValidationError("calibrator cells must be non-decreasing in p0 and p1");
  }
}

json IvapCalibrator::to_json() const {
  json cells = json::array();
  for (const auto& c : cells_)
    cells.push_back({{"kind", c.kind == CellKind::point ? "point" : "gap"}, {"p0", c.mp.p0}, {"p1", c.mp.p1}});
  return {{"scores", scores_}, {"cells", std::move(cells)}, {"m", m_}, {"positives", positives_}};
}

IvapCalibrator IvapCalibrator::from_json(const json& doc) {
  try {
    IvapCalibrator cal;
    cal.scores_ = doc.at("scores").get<std::vector<double>>();
    cal.m_ = doc.at("m").get<std::size_t>();
    for (const auto& c : doc.at("cells")) {
      const auto kind = c.at("kind").get<std::string>();
      if (kind != "point" && kind != "gap") throw ValidationError("cell kind must be point or gap");
      cal.cells_.push_back(
          {kind == "point" ? CellKind::point : CellKind::gap, {c.at("p0").get<double>(), c.at("p1").get<double>()}});
    }
    // Documents without label counts are treated as non-degenerate.
    cal.positives_ = doc.contains("positives") ? doc.at("positives").get<std::size_t>() : 1;
    cal.check_invariants();
    return cal;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed IVAP calibrator document: ") + e.what());
  }
}

}  // namespace ivapcal::venn_abers
