#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sfkd/mppi.hpp"
#include "sfkd/stability.hpp"
#include "sfkd/trainer.hpp"
#include "sfkd/vehicle_sim.hpp"

namespace sfkd {

struct EpisodeStep {
    double t = 0.0;
    VehicleState x, ref;
    ControlInput u;
    EnvInput e;
    double latent_err = 0.0;  // rolling open-loop latent prediction error
    double bound = 0.0;       // certified ultimate bound (violation threshold)
    double min_cost = 0.0, mean_cost = 0.0, ess = 0.0;
};

struct EpisodeLog {
    ScenarioId scenario = ScenarioId::S1;
    std::uint64_t seed = 0;
    std::string checkpoint_id;
    double dt = 0.1;
    bool failed = false;
    std::vector<EpisodeStep> steps;
};

struct EvalConfig {
    MppiConfig mppi{};
    PathConfig path{5.0, 2.0, 20.0};
    double duration = 60.0;
    int latent_resync_window = 20;  // steps between rolled-latent resyncs
};

/// Closed-loop episode: at each control period the environment is read from
/// the schedule, the controller produces a command, and the true state
/// advances through the simulator. The latent-error column tracks an
/// open-loop model rollout that is re-anchored to the encoded true state
/// every `latent_resync_window` steps (with fiber transport at environment
/// switches). Deterministic per seed. A controller failure marks the
/// episode failed and stops it.
EpisodeLog run_episode(const Scenario& scenario, const SfkdModel& m, const OperatorGen& g,
                       const IssCertificate& cert, const EvalConfig& cfg, std::uint64_t seed);

/// Runs `count` episodes with seeds seed_base, seed_base+1, ... across
/// `threads` workers; results are returned in seed order regardless of the
/// thread count.
std::vector<EpisodeLog> run_episode_batch(const Scenario& scenario, const SfkdModel& m,
                                          const OperatorGen& g, const IssCertificate& cert,
                                          const EvalConfig& cfg, std::uint64_t seed_base, int count,
                                          int threads);

void save_episode_csv(const EpisodeLog& log, const std::string& path);
EpisodeLog load_episode_csv(const std::string& path);

struct MetricsRow {
    std::string method;
    ScenarioId scenario = ScenarioId::S1;
    double rmse_mean = 0.0;        // per-episode RMS lateral deviation, averaged
    double rmse_std = 0.0;         // sample std across episodes
    double smoothness = 0.0;       // mean |delta_{k+1}-delta_k| / dt
    double violation_rate = 0.0;   // latent error above the certified bound
    int episodes = 0;
    int failures = 0;
};

/// Aggregates logs of one (method, scenario) cell; failed episodes are
/// excluded from the means and counted separately. Throws on mixed scenarios.
MetricsRow compute_metrics(const std::vector<EpisodeLog>& logs, const std::string& method);

void save_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path);

struct SweepPoint {
    double dbar = 0.0;           // total certified disturbance bound
    double violation_rate = 0.0;
    double iss_bound = 0.0;      // threshold delta_max at this sweep point
};

/// Disturbance-magnitude sweep: open-loop model rollouts over recorded
/// segments with an artificial latent disturbance of the given magnitude
/// injected each step; the violation threshold is recomputed per point from
/// the certificate with dbar_total = cert.dbar + magnitude.
std::vector<SweepPoint> sweep_dbar(const SfkdModel& m, const OperatorGen& g,
                                   const IssCertificate& cert, const Dataset& rollouts,
                                   const std::vector<double>& magnitudes, std::uint64_t seed);

void save_sweep_csv(const std::vector<SweepPoint>& points, const std::string& path);

/// Per-step lateral deviation traces of several methods on one scenario
/// episode (same seed, same path), one column per method.
void save_trace_csv(const std::vector<std::string>& methods,
                    const std::vector<EpisodeLog>& logs, const std::string& path);

}  // namespace sfkd
