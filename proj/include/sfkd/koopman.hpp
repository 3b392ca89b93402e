#pragma once

#include <Eigen/Dense>
#include <vector>

#include "sfkd/model.hpp"
#include "sfkd/vehicle_sim.hpp"

namespace sfkd {

/// Environment-conditioned linear operator generator. A(e) and B(e) are
/// affine in the environment embedding; global mode ignores the embedding
/// (single operator pair for all environments).
struct OperatorGen {
    int r = 0;
    int n_u = SfkdModelConfig::control_dim;
    int d_e = 0;
    bool global = false;
    Eigen::MatrixXd WA;  // (r*r) x d_e
    Eigen::VectorXd bA;  // r*r
    Eigen::MatrixXd WB;  // (r*n_u) x d_e
    Eigen::VectorXd bB;  // r*n_u

    static OperatorGen zeros(int r, int d_e, bool global);
};

struct OperatorEval {
    Eigen::MatrixXd A;  // spectrally projected
    Eigen::MatrixXd B;
    SpectralProjection proj;  // projection data for A (gradient bookkeeping)
};

/// Evaluates (A(e), B(e)) from an embedding vector; A is spectrally
/// projected to `bound`. In global mode psi_e is ignored.
OperatorEval eval_operators(const OperatorGen& g, const Eigen::VectorXd& psi_e, double bound);

/// Raw (unprojected) operator pair; used by gradient bookkeeping.
void eval_operators_raw(const OperatorGen& g, const Eigen::VectorXd& psi_e, Eigen::MatrixXd& A_raw,
                        Eigen::MatrixXd& B);

/// Ridge regression core of the identification problem: minimizes
/// sum_k ||Zn_k - A Z_k - B U_k||^2 + mu_reg ||A||_F^2 via the regularized
/// normal equations on stacked [z; u] regressors. Columns are samples.
/// Throws std::invalid_argument if the regressors are rank deficient and
/// mu_reg == 0 (a positive mu_reg fixes that).
struct LinearFit {
    Eigen::MatrixXd A, B;
};

LinearFit fit_linear_operators(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& U,
                               const Eigen::MatrixXd& Zn, double mu_reg);

/// A pre-lifted training tuple (latent instead of physical state).
struct LatentTuple {
    Eigen::VectorXd z;
    Eigen::Vector2d u;
    EnvInput e;
    Eigen::VectorXd z_next;
};

/// Warm start from pre-lifted data: clusters tuples by distinct environment
/// value, solves the per-cluster ridge problem, and fits the affine
/// generator through the cluster solutions (sample-count weighted,
/// minimum-norm when under-determined). The model supplies the embedding
/// used as the generator input.
OperatorGen identify_warmstart(const std::vector<LatentTuple>& tuples, const SfkdModel& m,
                               double mu_reg, bool global);

/// Warm start from a physical dataset: encodes every tuple with the current
/// (fixed) encoder, then delegates to the latent overload. Both occurrences
/// of a tuple are encoded against its own environment.
OperatorGen identify_warmstart(const Dataset& d, const SfkdModel& m, double mu_reg, bool global);

/// Lifts a physical dataset with the model encoder.
std::vector<LatentTuple> lift_dataset(const Dataset& d, const SfkdModel& m);

}  // namespace sfkd
