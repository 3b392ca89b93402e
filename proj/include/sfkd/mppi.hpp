#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <vector>

#include "sfkd/koopman.hpp"
#include "sfkd/model.hpp"
#include "sfkd/vehicle_sim.hpp"

namespace sfkd {

struct MppiConfig {
    int rollouts = 512;  // M
    int horizon = 20;    // T
    Eigen::Vector2d sigma_u{0.15, 0.5};  // perturbation std per control channel
    double lambda_temp = 0.25;           // softmax temperature
    double lambda_latent = 15.0;         // latent deviation weight
    double w_lat = 10.0;                 // lateral deviation weight
    double w_head = 2.0;                 // heading error weight
    double w_u = 0.1;                    // control effort weight
    double terminal_scale = 5.0;         // terminal pose cost = scale * stage pose weights
    double dt = 0.1;
    double delta_max = 0.5;
    double a_max = 3.0;
};

/// Receding-horizon controller memory: the nominal control sequence, the
/// previously applied control, and the random stream state.
struct ControllerState {
    Eigen::MatrixXd U;  // 2 x T, saturated
    Eigen::Vector2d u_prev{0.0, 0.0};
    std::mt19937_64 rng;

    static ControllerState init(const MppiConfig& cfg, std::uint64_t seed);
};

/// Reference window for one control step: physical poses and their encoded
/// latents at t, t+dt, ..., t+T*dt (T+1 entries), already expressed in the
/// controller's position frame.
struct ReferenceWindow {
    std::vector<VehicleState> x_ref;
    Eigen::MatrixXd z_ref;  // r x (T+1)
};

/// Cost of one perturbed control sequence: the latent state is propagated
/// through the learned dynamics with the environment frozen, each latent is
/// decoded, and stage costs (lateral offset, heading error, control effort,
/// latent deviation) accumulate, plus a terminal pose cost. Sequences must
/// be saturated by the caller. Non-finite rollouts return +infinity.
double rollout_cost(const SfkdModel& m, const OperatorGen& g, const Eigen::VectorXd& z0,
                    const Eigen::MatrixXd& u_seq, const ReferenceWindow& refs,
                    const EnvInput& env, const MppiConfig& cfg);

/// Batched variant: column m of `perturbations` stacks one sequence
/// (2T entries, step-major); cost of nominal+perturbation per column.
Eigen::VectorXd rollout_costs(const SfkdModel& m, const OperatorGen& g, const Eigen::VectorXd& z0,
                              const Eigen::MatrixXd& U_nominal,
                              const Eigen::MatrixXd& perturbations, const ReferenceWindow& refs,
                              const EnvInput& env, const MppiConfig& cfg);

struct WeightedUpdate {
    Eigen::MatrixXd U;       // updated nominal sequence, saturated
    bool applied = false;    // false when every cost was infinite
    double ess = 0.0;        // effective sample size 1/sum(w^2)
    double min_cost = 0.0;
    double mean_finite_cost = 0.0;
};

/// Softmax-weighted control update with baseline (min-cost) subtraction;
/// weights of infinite-cost rollouts are exactly zero. When every cost is
/// infinite the nominal sequence is kept and `applied` is false.
WeightedUpdate mppi_weighted_update(const Eigen::MatrixXd& U, const Eigen::MatrixXd& perturbations,
                                    const Eigen::VectorXd& costs, const MppiConfig& cfg);

/// Samples a perturbation block (2T x M, column-major over rollouts) from
/// the controller's Gaussian.
Eigen::MatrixXd sample_perturbations(std::mt19937_64& rng, const MppiConfig& cfg);

struct ControlStepResult {
    ControlInput u;
    bool update_applied = true;
    double min_cost = 0.0;
    double mean_cost = 0.0;
    double ess = 0.0;
};

/// One receding-horizon step: encodes the measured state, builds the
/// reference window at the measured environment, samples M perturbation
/// sequences, scores them, applies the weighted update, returns the first
/// control, and shifts the nominal sequence (last entry repeated).
/// Positions are expressed relative to the current reference point before
/// encoding, which keeps network inputs inside their training range.
ControlStepResult control_step(ControllerState& ctrl, const SfkdModel& m, const OperatorGen& g,
                               const VehicleState& x_t, const EnvInput& e_t,
                               const PathConfig& path, double t, const MppiConfig& cfg);

ControlInput saturate(const ControlInput& u, const MppiConfig& cfg);

}  // namespace sfkd
