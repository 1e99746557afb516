#pragma once

// Transmit-weight search for the joint sensing/communication link: pick the
// per-mode amplitude vector minimizing the summed lower bound on the scene
// parameter variances, subject to a floor on the downlink average rate and
// exact unit transmit power.
//
// Candidates live on the integer direction grid {n/N : n in {1..N}^U} after
// unit-power normalization.  Small mode counts afford full enumeration; the
// raw grid grows as N^U, so past a configurable budget the search becomes a
// cyclic coordinate descent over the same grid, restarted from equal
// weights and a fixed set of seeded random points.  Either way the result
// is deterministic and every visited candidate lies on the grid.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "oamrc/analysis.hpp"
#include "oamrc/forward_model.hpp"
#include "oamrc/scene.hpp"

namespace oamrc {

/// Cap on full-grid enumeration, counted in raw integer tuples.
inline constexpr std::int64_t kDefaultGridBudget = 2000000;

/// Lazily enumerated candidate set: one unit-power representative per
/// direction of {1..levels}^num_modes, in lexicographic order of the
/// primitive tuple.  Tuples whose entries share a common factor repeat an
/// earlier direction and are skipped, so no two yielded vectors coincide.
class WeightGrid {
 public:
  /// Throws std::invalid_argument for num_modes < 1 or levels < 2, and
  /// std::length_error when levels^num_modes exceeds the budget — at that
  /// scale use the coordinate-sweep optimizer instead.
  WeightGrid(int num_modes, int levels,
             std::int64_t budget = kDefaultGridBudget);

  class Iterator {
   public:
    using value_type = WeightVector;
    using reference = WeightVector;
    using pointer = void;
    using difference_type = std::ptrdiff_t;
    using iterator_category = std::input_iterator_tag;

    WeightVector operator*() const;
    Iterator& operator++();
    Iterator operator++(int);
    friend bool operator==(const Iterator& a, const Iterator& b) {
      return a.tuple_ == b.tuple_;
    }
    friend bool operator!=(const Iterator& a, const Iterator& b) {
      return !(a == b);
    }

   private:
    friend class WeightGrid;
    Iterator(int levels, std::vector<int> tuple)
        : levels_(levels), tuple_(std::move(tuple)) {}
    void advance();

    int levels_ = 0;
    std::vector<int> tuple_;  ///< empty once past the end
  };

  Iterator begin() const;
  Iterator end() const;
  int num_modes() const { return num_modes_; }
  int levels() const { return levels_; }

 private:
  int num_modes_;
  int levels_;
};

enum class SearchMode {
  kAuto,        ///< enumerate when the raw grid fits the budget, else sweep
  kExhaustive,  ///< force full enumeration (throws past the budget)
  kSweep,       ///< force the multi-start cyclic coordinate descent
};

struct OptimizeOptions {
  /// Average-rate floor (bits); a candidate is feasible when its rate is at
  /// least rate_min - 1e-9.
  double rate_min = 0.0;
  /// The downlink user rides this target's centroid.
  int comm_target = 0;
  /// Sets both the bound's noise variance and the link noise, 10^(-snr/10).
  double snr_db = 15.0;
  /// Grid levels N per coordinate.
  int levels = 10;
  /// Observation instants accumulated into the information matrix.  Required
  /// and deliberately without a default: a single instant carries no spin
  /// information, which would silently turn the objective infinite.
  std::vector<TimeWeight> times;
  /// Amplitude scale applied to the user's mode channels before rating.
  double comm_gain = 1.0;
  /// Proportional channel-knowledge error for the rate model (0 = the
  /// receiver knows the channel exactly).
  double channel_error_std = 0.0;
  std::uint64_t channel_seed = 0;
  std::uint64_t channel_trial = 0;
  SearchMode mode = SearchMode::kAuto;
  /// Raw-tuple count beyond which kAuto switches to the sweep.
  std::int64_t budget = kDefaultGridBudget;
  /// Random sweep restarts beyond the equal-weight start.
  int sweep_starts = 8;
  std::uint64_t sweep_seed = 20240817;
  /// Called for every candidate evaluation (weights, objective, rate,
  /// feasible) — the hook the CSV emitters use.
  std::function<void(const WeightVector&, double, double, bool)> observer;
};

struct OptimizationResult {
  WeightVector weights;        ///< best feasible candidate
  double objective = 0.0;      ///< summed per-parameter variance bound there
  double rate = 0.0;           ///< achieved average rate there
  std::int64_t evaluated = 0;  ///< candidate evaluations performed
  std::int64_t feasible = 0;   ///< evaluations meeting the rate floor
  bool exhaustive = false;     ///< full grid (true) or coordinate sweep
};

/// Raised when no candidate meets the rate floor; carries the closest miss.
class InfeasibleRateError : public std::runtime_error {
 public:
  InfeasibleRateError(WeightVector best, double best_rate, double rate_min);

  const WeightVector& best_weights() const { return best_; }
  double best_rate() const { return best_rate_; }
  double rate_gap() const { return gap_; }

 private:
  WeightVector best_;
  double best_rate_;
  double gap_;
};

/// Minimize the summed variance bound over the candidate grid subject to
/// the rate floor.  The objective of a candidate is the sum of the
/// per-parameter bounds from the information matrix assembled for that
/// weight vector (infinite when the matrix is singular); the rate is the
/// analytic zero-forcing average rate toward the comm target's centroid.
/// Selection is deterministic: the feasible candidate with the smallest
/// objective, ties broken by higher rate, then by lexicographically
/// smallest amplitude vector.  The equal-weight vector is always among the
/// evaluated candidates, in either search mode.  Throws
/// std::invalid_argument on malformed inputs and InfeasibleRateError when
/// the floor is out of reach.
OptimizationResult optimize_weights(const OamSystemConfig& cfg,
                                    const std::vector<TargetState>& targets,
                                    const OptimizeOptions& opt);

}  // namespace oamrc
