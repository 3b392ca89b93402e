#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sfkd/types.hpp"

namespace sfkd {

/// Kinematic bicycle parameters with friction/wind coupling.
///
/// Friction attenuates the effective steering and acceleration commands by
/// min(1, mu / mu_ref); lateral wind adds a drift k_wind * w to dpy/dt.
struct SimParams {
    double wheelbase = 2.7;    // [m]
    double mu_ref = 0.9;       // friction giving full actuation authority
    double k_wind = 0.05;      // wind-to-lateral-drift coupling
    double delta_max = 0.5;    // steering saturation [rad]
    double a_max = 3.0;        // acceleration saturation [m/s^2]
    double mu_min = 0.3, mu_max = 0.9;
    double w_max = 8.0;
};

/// One explicit-Euler step of the bicycle model under environment e.
/// Heading is wrapped to (-pi, pi] and speed clamped at zero.
/// Throws std::invalid_argument on non-finite inputs or dt <= 0.
VehicleState step_bicycle(const VehicleState& x, const ControlInput& u, const EnvInput& e,
                          double dt, const SimParams& p = SimParams{});

enum class ScenarioId { S1, S2, S3 };

std::string to_string(ScenarioId id);
ScenarioId scenario_from_string(const std::string& name);

/// Piecewise-constant environment schedule over a fixed episode duration.
struct Scenario {
    ScenarioId id = ScenarioId::S1;
    std::vector<double> switch_times;  // ascending, first entry 0
    std::vector<EnvInput> envs;        // env in effect from switch_times[i] on
    double duration = 60.0;            // [s]
};

/// Builds the benchmark schedules:
///   S1 - uniform dry road, no wind;
///   S2 - wet road with an abrupt friction drop at t = 5 s;
///   S3 - cycle A,B,C,B,A switching every 3 s.
Scenario make_scenario(ScenarioId id, double duration = 60.0);

/// Schedule value at time t (right-continuous: a switch time belongs to the
/// new segment). Throws std::out_of_range for t outside [0, duration].
EnvInput scenario_env(const Scenario& s, double t);

/// Reference path: constant-speed lane, optionally with a sinusoidal
/// lateral profile py(t) = amplitude * sin(2*pi*t/period).
struct PathConfig {
    double speed = 5.0;      // longitudinal speed [m/s]
    double amplitude = 0.0;  // lateral amplitude [m]; 0 = straight lane
    double period = 15.0;    // [s]
};

/// Pose and speed of the reference point at time t; heading and speed follow
/// the analytic tangent of (px(t), py(t)).
VehicleState reference_state(const PathConfig& path, double t);

/// Signed perpendicular offset of (x.px, x.py) from the reference pose,
/// measured in the reference frame (positive to the left of the path).
double lateral_offset(const VehicleState& x, const VehicleState& ref);

struct DatasetTuple {
    VehicleState x;
    ControlInput u;
    EnvInput e;
    VehicleState x_next;
};

struct Segment {
    std::vector<DatasetTuple> tuples;  // chained: tuples[i].x_next == tuples[i+1].x
};

struct Dataset {
    std::vector<Segment> segments;
    double dt = 0.1;
};

/// Dataset generation settings. Segments are simulated with smooth random
/// excitation (low-pass-filtered uniform controls) from randomized initial
/// states, under environments drawn from the scenario mix.
struct DatasetConfig {
    int segments = 200;
    int segment_length = 50;
    double dt = 0.1;
    std::vector<ScenarioId> scenario_mix = {ScenarioId::S1, ScenarioId::S2};
    double excitation_cutoff_hz = 1.0;  // first-order filter cutoff
    double init_pos_range = 12.0;       // |px0|, |py0| <= range
    double v_min = 0.5, v_max = 6.0;    // initial speed range
    // segment mix: corridor segments start near the tracking regime with
    // fast steering excitation; arc segments hold slowly-varying steering so
    // sustained turns are in distribution; the rest explore the full box
    double corridor_fraction = 0.5;
    double arc_fraction = 0.2;
    double corridor_heading = 0.45;      // |psi0| bound for corridor segments
    double corridor_v_min = 3.5, corridor_v_max = 6.5;
    double corridor_steer_scale = 0.8;   // steering excitation attenuation
    double corridor_cutoff_hz = 2.5;     // faster filter for corridor steering
    double arc_steer_scale = 0.7;
    double arc_cutoff_hz = 0.2;          // slow filter: near-constant steering
    SimParams sim{};
};

/// Reproducible dataset generation: identical (cfg, seed) give identical
/// datasets. Throws std::invalid_argument for zero segments or zero length.
Dataset generate_dataset(const DatasetConfig& cfg, std::uint64_t seed);

std::size_t dataset_tuple_count(const Dataset& d);

/// Columnar CSV I/O (one row per tuple, 17-significant-digit floats).
void save_dataset_csv(const Dataset& d, const std::string& path);
Dataset load_dataset_csv(const std::string& path);

}  // namespace sfkd
