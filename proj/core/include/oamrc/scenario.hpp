#pragma once

// Scenario configuration: one JSON document (or a built-in preset) that
// carries everything an experiment needs — array geometry, mode and
// subcarrier sets, targets, noise levels, observation layout, Monte-Carlo
// shape, search bounds, downlink settings — validated against every module
// precondition at load time.  Angles cross the JSON boundary in degrees and
// live in radians everywhere else; absent fields take documented defaults
// and the echoed form always spells every field out, so a report's config
// echo reloads to an equal configuration.

#include <cstdint>
#include <string>
#include <vector>

#include "oamrc/forward_model.hpp"
#include "oamrc/optimizer.hpp"
#include "oamrc/scene.hpp"

namespace oamrc {

/// Slow-time observation layout.
struct SlowTimeGrid {
  double sample_rate = 4000.0;  ///< Hz
  double duration = 2.0;        ///< s
};

/// Uniform sample instants of the grid: n / sample_rate, n = 0 .. N-1.
std::vector<double> slow_time_instants(const SlowTimeGrid& grid);

/// Where estimates are allowed to live; every target must fit inside.
struct SearchBounds {
  double range_max = 200.0;                     ///< m
  double spin_max = 12.0 * 3.14159265358979324; ///< rad/s
  double elev_min = 5.0 * 3.14159265358979324 / 180.0;   ///< rad
  double elev_max = 0.5 * 3.14159265358979324;           ///< rad
  double azim_min = 0.0;                        ///< rad
  double azim_max = 2.0 * 3.14159265358979324;  ///< rad
};

/// Downlink settings: the user rides a target's centroid.
struct CommSettings {
  int target = 0;
  double gain = 1.0;              ///< amplitude scale on the mode channels
  double channel_error_std = 0.0; ///< proportional channel-knowledge error
  double rate_min = 0.0;          ///< bits, feasibility floor for optimization
};

/// Weight-search settings (grid levels and search mode).
struct SearchSettings {
  int grid_levels = 10;
  SearchMode mode = SearchMode::kAuto;
  int restarts = 8;
};

/// Position-estimation settings.  Zeros/empties mean "derive from the
/// scene": signal_dim becomes the target count and the coarse range anchors
/// become the configured target ranges (the documented stand-in for
/// symbol-timing coarse ranging).
struct ImagingSettings {
  int signal_dim = 0;
  std::vector<double> range_gates;
};

struct ScenarioConfig {
  OamSystemConfig system;
  WeightVector weights;
  std::vector<TargetState> targets;
  std::vector<double> snr_db = {20.0};
  int snapshots = 200;
  SlowTimeGrid slow_time;
  int trials = 50;
  std::uint64_t seed = 20240817;
  SearchBounds bounds;
  CommSettings comm;
  SearchSettings search;
  ImagingSettings imaging;
  std::string output_dir = "out";
};

/// Built-in scenarios.
///  * "reference" — the full-scale system: 17-element array of radius 30
///    wavelengths of the first subcarrier, modes -8..+7, 16 subcarriers at
///    wavenumbers 209..224 rad/m, and three spinning cone targets at
///    (82.5 m, 20 deg, 70 deg, 8 pi rad/s), (170 m, 80 deg, 20 deg, 10 pi)
///    and (165 m, 75 deg, 25 deg, 11.5 pi), each a centroid plus a spinning
///    vertex arm and a shorter body arm.
///  * "mini" — a five-mode, three-subcarrier, single-target shrink of the
///    same shape for smoke tests and quick demos.
/// Throws std::invalid_argument for an unknown name.
ScenarioConfig preset_config(const std::string& name);

/// Parse and validate a configuration from JSON text.  Angles are given in
/// degrees, ranges in meters, rates in rad/s.  Unknown keys are rejected
/// (typo safety); missing keys take the documented defaults; "targets" is
/// required.  Throws std::runtime_error with position information on
/// malformed JSON and std::invalid_argument naming the violated invariant
/// on semantic errors.
ScenarioConfig parse_config(const std::string& json_text);

/// parse_config over the contents of a file; the path joins every error.
ScenarioConfig load_config(const std::string& path);

/// Check every module precondition the configuration feeds: array and mode
/// shapes, weight normalization, target geometry, bounds containment,
/// downlink indices, search settings.  Throws std::invalid_argument naming
/// the violated invariant.
void validate_scenario(const ScenarioConfig& cfg);

/// Fully resolved JSON echo of a configuration: every field explicit, in
/// the same schema parse_config reads, with angles back in degrees.
std::string config_json(const ScenarioConfig& cfg);

}  // namespace oamrc
