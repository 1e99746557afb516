#include "oamrc/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <utility>

namespace oamrc {

namespace {

int tuple_gcd(const std::vector<int>& tuple) {
  int g = 0;
  for (int v : tuple) g = std::gcd(g, v);
  return g;
}

WeightVector normalized(const std::vector<int>& tuple) {
  WeightVector w;
  w.amplitudes.resize(static_cast<int>(tuple.size()));
  for (std::size_t i = 0; i < tuple.size(); ++i)
    w.amplitudes(static_cast<int>(i)) = tuple[i];
  w.amplitudes.normalize();
  return w;
}

bool fits_budget(int num_modes, int levels, std::int64_t budget) {
  std::int64_t count = 1;
  for (int i = 0; i < num_modes; ++i) {
    if (count > budget / levels) return false;
    count *= levels;
  }
  return true;
}

}  // namespace

WeightGrid::WeightGrid(int num_modes, int levels, std::int64_t budget)
    : num_modes_(num_modes), levels_(levels) {
  if (num_modes < 1)
    throw std::invalid_argument("WeightGrid: need at least one mode");
  if (levels < 2)
    throw std::invalid_argument(
        "WeightGrid: need at least two levels per coordinate");
  if (!fits_budget(num_modes, levels, budget)) {
    std::ostringstream msg;
    msg << "WeightGrid: " << levels << "^" << num_modes
        << " raw candidates exceed the enumeration budget of " << budget
        << "; use the coordinate-sweep optimizer at this scale";
    throw std::length_error(msg.str());
  }
}

WeightVector WeightGrid::Iterator::operator*() const {
  return normalized(tuple_);
}

WeightGrid::Iterator& WeightGrid::Iterator::operator++() {
  advance();
  return *this;
}

WeightGrid::Iterator WeightGrid::Iterator::operator++(int) {
  Iterator copy = *this;
  advance();
  return copy;
}

void WeightGrid::Iterator::advance() {
  for (;;) {
    int i = static_cast<int>(tuple_.size()) - 1;
    while (i >= 0 && tuple_[i] == levels_) tuple_[i--] = 1;
    if (i < 0) {
      tuple_.clear();
      return;
    }
    ++tuple_[i];
    if (tuple_gcd(tuple_) == 1) return;
  }
}

WeightGrid::Iterator WeightGrid::begin() const {
  // The all-ones tuple is primitive, so it is always the first candidate.
  return Iterator(levels_, std::vector<int>(num_modes_, 1));
}

WeightGrid::Iterator WeightGrid::end() const {
  return Iterator(levels_, {});
}

namespace {

std::string infeasible_message(double best_rate, double rate_min) {
  std::ostringstream msg;
  msg.precision(6);
  msg << "optimize_weights: no candidate reaches the rate floor " << rate_min
      << "; the best average rate on the grid is " << best_rate << " (gap "
      << rate_min - best_rate << ")";
  return msg.str();
}

}  // namespace

InfeasibleRateError::InfeasibleRateError(WeightVector best, double best_rate,
                                         double rate_min)
    : std::runtime_error(infeasible_message(best_rate, rate_min)),
      best_(std::move(best)),
      best_rate_(best_rate),
      gap_(rate_min - best_rate) {}

namespace {

struct Candidate {
  WeightVector w;
  double objective = std::numeric_limits<double>::infinity();
  double rate = 0.0;
  bool feasible = false;
};

/// Strict "a replaces b" order: feasibility first; among feasible, smaller
/// objective, then higher rate, then lexicographically smaller amplitudes;
/// among infeasible, higher rate (so the closest miss is what gets
/// reported).
bool better(const Candidate& a, const Candidate& b) {
  if (a.feasible != b.feasible) return a.feasible;
  if (!a.feasible) return a.rate > b.rate;
  if (a.objective != b.objective) return a.objective < b.objective;
  if (a.rate != b.rate) return a.rate > b.rate;
  return std::lexicographical_compare(
      a.w.amplitudes.data(), a.w.amplitudes.data() + a.w.amplitudes.size(),
      b.w.amplitudes.data(), b.w.amplitudes.data() + b.w.amplitudes.size());
}

}  // namespace

OptimizationResult optimize_weights(const OamSystemConfig& cfg,
                                    const std::vector<TargetState>& targets,
                                    const OptimizeOptions& opt) {
  validate_config(cfg);
  if (targets.empty())
    throw std::invalid_argument("optimize_weights: no targets");
  if (opt.comm_target < 0 ||
      opt.comm_target >= static_cast<int>(targets.size()))
    throw std::invalid_argument(
        "optimize_weights: comm target index out of range");
  if (opt.times.empty())
    throw std::invalid_argument(
        "optimize_weights: at least one observation instant is required");
  if (opt.rate_min < 0.0)
    throw std::invalid_argument("optimize_weights: negative rate floor");
  if (opt.levels < 2)
    throw std::invalid_argument(
        "optimize_weights: need at least two grid levels");
  if (opt.sweep_starts < 0)
    throw std::invalid_argument("optimize_weights: negative restart count");

  const int num_modes = cfg.num_modes();
  const double xi2 = std::pow(10.0, -opt.snr_db / 10.0);

  const auto basis = fisher_mode_basis(cfg, targets, opt.times);
  std::vector<ParamRef> params;
  for (int q = 0; q < static_cast<int>(targets.size()); ++q)
    for (const ParamKind kind :
         {ParamKind::kRange, ParamKind::kElevation, ParamKind::kAzimuth,
          ParamKind::kSpin})
      params.push_back({q, kind});

  const TargetState& user = targets[opt.comm_target];
  auto channel =
      user_mode_channels(cfg, user.range0, user.elev0, user.azim0);
  for (CVec& sub : channel) sub *= opt.comm_gain;
  const auto channel_est =
      opt.channel_error_std > 0.0
          ? perturb_channels(channel, opt.channel_error_std, opt.channel_seed,
                             opt.channel_trial)
          : channel;

  OptimizationResult result;
  const int dim = static_cast<int>(params.size());
  Eigen::MatrixXd info(dim, dim);
  auto evaluate = [&](const WeightVector& w) {
    info.setZero();
    for (int u = 0; u < num_modes; ++u)
      info += (w.amplitudes(u) * w.amplitudes(u)) * basis[u];
    info /= xi2;
    const PcrbResult p = pcrb({info, params});
    Candidate c;
    c.w = w;
    c.objective = p.singular ? std::numeric_limits<double>::infinity()
                             : p.bound.sum();
    c.rate = zf_rate(cfg, channel, channel_est, w, opt.snr_db).avg_rate;
    c.feasible = c.rate >= opt.rate_min - 1e-9;
    ++result.evaluated;
    if (c.feasible) ++result.feasible;
    if (opt.observer) opt.observer(w, c.objective, c.rate, c.feasible);
    return c;
  };

  bool exhaustive = false;
  switch (opt.mode) {
    case SearchMode::kExhaustive:
      exhaustive = true;
      break;
    case SearchMode::kSweep:
      exhaustive = false;
      break;
    case SearchMode::kAuto:
      exhaustive = fits_budget(num_modes, opt.levels, opt.budget);
      break;
  }

  std::optional<Candidate> best;
  auto consider = [&](Candidate c) {
    if (!best || better(c, *best)) best = std::move(c);
  };

  if (exhaustive) {
    WeightGrid grid(num_modes, opt.levels, opt.budget);
    for (const WeightVector& w : grid) consider(evaluate(w));
  } else {
    auto sweep_from = [&](std::vector<int> n) {
      Candidate cur = evaluate(normalized(n));
      for (bool improved = true; improved;) {
        improved = false;
        for (int u = 0; u < num_modes; ++u) {
          int best_level = n[u];
          Candidate best_here = cur;
          for (int level = 1; level <= opt.levels; ++level) {
            if (level == n[u]) continue;
            std::vector<int> probe = n;
            probe[u] = level;
            Candidate c = evaluate(normalized(probe));
            if (better(c, best_here)) {
              best_here = std::move(c);
              best_level = level;
            }
          }
          if (best_level != n[u]) {
            n[u] = best_level;
            cur = std::move(best_here);
            improved = true;
          }
        }
      }
      return cur;
    };

    // Equal weights first: the all-equal tuple normalizes to 1/sqrt(U) per
    // mode, guaranteeing the equal-weight candidate is always evaluated.
    consider(sweep_from(std::vector<int>(num_modes, opt.levels)));
    std::mt19937_64 rng(opt.sweep_seed);
    std::uniform_int_distribution<int> level(1, opt.levels);
    for (int s = 0; s < opt.sweep_starts; ++s) {
      std::vector<int> n(num_modes);
      for (int& v : n) v = level(rng);
      consider(sweep_from(std::move(n)));
    }
  }

  if (!best->feasible)
    throw InfeasibleRateError(best->w, best->rate, opt.rate_min);
  result.weights = best->w;
  result.objective = best->objective;
  result.rate = best->rate;
  result.exhaustive = exhaustive;
  return result;
}

}  // namespace oamrc
