#pragma once

#include <Eigen/Dense>
#include <random>

#include "sfkd/linalg.hpp"
#include "sfkd/mlp.hpp"
#include "sfkd/types.hpp"

namespace sfkd {

/// Architecture and normalization constants for the learned components.
struct SfkdModelConfig {
    int r = 32;    // latent dimension
    int d_e = 8;   // environment embedding dimension
    std::vector<int> psi_hidden = {16};
    std::vector<int> enc_hidden = {64, 64};
    std::vector<int> dec_hidden = {64, 64};
    std::vector<int> res_hidden = {64, 64, 64};
    double beta = 0.15;  // contraction budget for the residual Jacobian
    double eps0 = 0.02;  // spectral margin below 1 - beta
    bool fiber_conditioning = true;  // false: encoder ignores the environment

    // input feature scaling (positions/speeds into O(1) network inputs)
    double pos_scale = 20.0;
    double v_scale = 5.0;
    double delta_scale = 0.5;
    double a_scale = 3.0;
    double mu_center = 0.6, mu_halfwidth = 0.3;
    double w_scale = 8.0;

    static constexpr int state_feature_dim = 5;  // px, py, cos psi, sin psi, v
    static constexpr int control_dim = 2;

    double spec_bound() const { return 1.0 - beta - eps0; }
};

/// All trainable nonlinear components: environment embedding, conditioned
/// encoder, decoder, and the residual correction network.
struct SfkdModel {
    SfkdModelConfig cfg;
    Mlp psi;       // env features -> embedding
    Mlp encoder;   // state features (+) embedding -> latent
    Mlp decoder;   // latent -> state features
    Mlp residual;  // latent (+) control features (+) embedding -> latent

    static SfkdModel make(const SfkdModelConfig& cfg, std::mt19937_64& rng);
};

// --- fixed input/output feature maps -------------------------------------

Eigen::Vector2d env_features(const SfkdModelConfig& cfg, const EnvInput& e);
Eigen::VectorXd state_features(const SfkdModelConfig& cfg, const VehicleState& x);
Eigen::Vector2d control_features(const SfkdModelConfig& cfg, const ControlInput& u);

/// Inverse of state_features: heading via atan2 (wrapped to (-pi, pi]),
/// speed clamped at zero.
VehicleState state_from_features(const SfkdModelConfig& cfg, const Eigen::VectorXd& f);

// --- forward evaluation ----------------------------------------------------

/// psi(e): deterministic embedding of the environment.
Eigen::VectorXd embed_env(const SfkdModel& m, const EnvInput& e);

/// z = encoder(features(x) (+) psi(e)); the embedding block is zeroed when
/// fiber conditioning is disabled.
Eigen::VectorXd encode(const SfkdModel& m, const VehicleState& x, const EnvInput& e);

/// Physical state reconstructed from a latent point.
VehicleState decode(const SfkdModel& m, const Eigen::VectorXd& z);

/// Residual correction r(z, u, e).
Eigen::VectorXd residual_forward(const SfkdModel& m, const Eigen::VectorXd& z,
                                 const ControlInput& u, const EnvInput& e);

/// Moves a latent point from the fiber of e_from to the fiber of e_to by
/// re-encoding through the shared decoder.
Eigen::VectorXd transport(const SfkdModel& m, const Eigen::VectorXd& z, const EnvInput& e_from,
                          const EnvInput& e_to);

// --- residual Jacobian spectral norm ----------------------------------------

struct JacNormResult {
    double value = 0.0;
    bool converged = true;
    int iterations = 0;
};

/// ||d r/d z||_2 at (z, u, e), by power iteration on J^T J with exact
/// forward- and reverse-mode directional derivatives. On non-convergence
/// the Frobenius norm (a certified upper estimate) is returned with
/// converged = false.
JacNormResult residual_jacobian_norm(const SfkdModel& m, const Eigen::VectorXd& z,
                                     const ControlInput& u, const EnvInput& e);

/// Assembles the residual network input [z; control features; embedding].
Eigen::VectorXd residual_input(const SfkdModel& m, const Eigen::VectorXd& z,
                               const ControlInput& u, const Eigen::VectorXd& psi_e);

/// Power iteration for ||d r/d z||_2 on an existing forward cache column.
/// Exposed for the trainer, which needs the converged singular vectors.
struct ResidualJacPower {
    double sigma = 0.0;
    Eigen::VectorXd u, v;  // unit singular vectors (v in latent space)
    bool converged = true;
    int iterations = 0;
};

ResidualJacPower residual_jacobian_power(const SfkdModel& m, const MlpCache& res_cache, int col,
                                         int max_iters = 200, double rel_tol = 1e-10);

}  // namespace sfkd
