#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "sfkd/koopman.hpp"
#include "sfkd/model.hpp"
#include "sfkd/vehicle_sim.hpp"

namespace sfkd {

/// Uniform n x n grid over the environment box, optionally extended with
/// extra points (e.g. the scenario levels actually visited).
std::vector<EnvInput> make_env_grid(int n, const std::vector<EnvInput>& extra = {});

/// Environment levels used by the benchmark scenarios.
std::vector<EnvInput> scenario_env_levels();

struct AlphaResult {
    double value = 0.0;   // max over grid of ||A(e)||_2 + beta
    EnvInput worst_env;   // argmax environment
    double max_norm = 0.0;  // max ||A(e)||_2 alone
};

/// alpha = max_e ||A(e)||_2 + beta over the grid, spectral norms by dense SVD.
AlphaResult compute_alpha(const OperatorGen& g, const SfkdModel& m,
                          const std::vector<EnvInput>& grid);

struct IssCertificate {
    double alpha = 0.0;
    double beta = 0.0;
    Eigen::MatrixXd P;  // Lyapunov witness
    double c1 = 1.0;    // sqrt(lmax(P)/lmin(P))
    double c2 = 1.0;    // 1/sqrt(lmin(P))
    double dbar = 0.0;  // residual disturbance bound
    int grid_points = 0;
};

/// Numerical check of A^T P A - P <= -(1 - alpha^2) I + tol*I by eigenvalue.
bool lyapunov_decay_holds(const Eigen::MatrixXd& A, const Eigen::MatrixXd& P, double alpha,
                          double tol = 1e-8);

/// Builds the certificate with witness P (identity by default, which the
/// spectral projection makes valid by construction). Refuses, with the
/// violating environment in the message, if alpha >= 1 or the decay
/// inequality fails anywhere on the grid.
IssCertificate certify(const OperatorGen& g, const SfkdModel& m, const std::vector<EnvInput>& grid,
                       double dbar, const std::optional<Eigen::MatrixXd>& P = std::nullopt);

/// Theorem bound c1 * alpha^k * e0 + c2 * dbar / (1 - alpha).
double iss_trajectory_bound(const IssCertificate& cert, double e0_norm, int k);

/// Asymptotic ceiling c2 * dbar / (1 - alpha); also the default violation
/// threshold delta_max.
double ultimate_bound(const IssCertificate& cert);

struct ResidualBoundEstimate {
    double dbar = 0.0;
    double rho0 = 0.0;     // envelope slope  ||Delta|| <= rho0 ||z|| + eta
    double eta_max = 0.0;  // envelope offset covering every sample
    std::size_t sample_count = 0;
    double quantile = 0.995;
    std::size_t above_dbar = 0;  // tail excluded by the quantile
};

/// One-step model defects d_k = z' - A(e) z - B(e) u - r(z, u, e) over a
/// held-out dataset (z from the encoder); dbar is the given quantile of
/// ||d_k|| (nearest-rank; quantile 1 gives the exact maximum).
ResidualBoundEstimate estimate_dbar(const SfkdModel& m, const OperatorGen& g, const Dataset& d,
                                    double quantile = 0.995);

/// Fraction of samples strictly exceeding delta_max.
double violation_rate(const std::vector<double>& latent_error_norms, double delta_max);

struct TrackingBoundInputs {
    double eps_mppi = 0.0;  // nominal latent tracking accuracy
    double L_phi = 1.0;     // encoder Lipschitz estimate
    double eps_phi = 0.0;   // reconstruction error estimate
};

/// Closed-loop tracking ceiling (1/L_phi)(eps_mppi + ultimate bound) + eps_phi,
/// with the reconstruction term taken with unit constant.
double tracking_bound(const IssCertificate& cert, const TrackingBoundInputs& in);

/// Empirical encoder Lipschitz estimate over random nearby state pairs.
double estimate_encoder_lipschitz(const SfkdModel& m, const Dataset& d, int pairs,
                                  std::uint64_t seed);

/// Mean physical reconstruction error ||x - decode(encode(x, e))|| over a
/// dataset (position/heading/speed in their native units).
double estimate_reconstruction_error(const SfkdModel& m, const Dataset& d);

// --- open-loop soundness audit ----------------------------------------------

struct SegmentAudit {
    std::vector<double> err_norms;  // ||e_k^z||, k = 0..N
    std::vector<double> bounds;     // theorem bound at k (envelope restarts)
    std::vector<char> checked;      // step participates in the check
    std::vector<double> d_norms;    // realized ||d_k||, k = 0..N-1
    int violations = 0;             // checked steps with err > bound
    int excluded = 0;               // steps skipped (nonconforming prefix)
};

/// Replays a recorded segment against the model: the model state is rolled
/// open-loop from z_0 (plus an optional initial offset) while the true
/// lifted state is re-encoded from the simulator trajectory. The theorem
/// envelope restarts whenever a step's realized ||d_k|| exceeds cert.dbar or
/// the environment switches fibers; every other step is checked against
/// iss_trajectory_bound anchored at the restart.
SegmentAudit audit_segment_bound(const SfkdModel& m, const OperatorGen& g,
                                 const IssCertificate& cert, const Segment& seg,
                                 const Eigen::VectorXd& initial_offset);

void save_violation_trace_csv(const SegmentAudit& audit, const std::string& path);

/// Human-readable certificate block plus the per-grid-point CSV
/// (||A(e)||_2 and the decay-inequality eigenvalue margin).
void save_certificate(const IssCertificate& cert, const OperatorGen& g, const SfkdModel& m,
                      const std::vector<EnvInput>& grid, const std::string& txt_path,
                      const std::string& csv_path);

IssCertificate load_certificate_txt(const std::string& txt_path);

}  // namespace sfkd
