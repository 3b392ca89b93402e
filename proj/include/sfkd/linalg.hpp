#pragma once

#include <Eigen/Dense>

namespace sfkd {

/// Result of estimating a largest singular value by power iteration.
struct PowerIterResult {
    double sigma = 0.0;
    Eigen::VectorXd u;  // left singular vector  (unit)
    Eigen::VectorXd v;  // right singular vector (unit)
    bool converged = false;
    int iterations = 0;
};

/// Power iteration on W^T W with a deterministic start vector.
PowerIterResult power_iteration(const Eigen::MatrixXd& W, int max_iters = 1000,
                                double rel_tol = 1e-12);

/// Largest singular value by dense SVD; the independent route used by
/// audits and certification.
double spectral_norm_dense(const Eigen::MatrixXd& W);

/// Spectral projection data: W_proj = scale * W with scale = min(1, bound/sigma).
struct SpectralProjection {
    Eigen::MatrixXd projected;
    double sigma = 0.0;   // estimated ||W||_2 before projection
    double scale = 1.0;
    bool active = false;  // scale < 1
    Eigen::VectorXd u, v;
};

/// Scales W down so its spectral norm does not exceed `bound`; matrices
/// already inside the bound (and the zero matrix) pass through unchanged.
/// Throws std::invalid_argument for bound <= 0.
SpectralProjection project_spectral(const Eigen::MatrixXd& W, double bound);

/// Convenience wrapper returning just the projected matrix.
Eigen::MatrixXd spectral_project(const Eigen::MatrixXd& W, double bound);

/// Deterministic unit start vector for power iterations.
Eigen::VectorXd power_iteration_seed(int n);

}  // namespace sfkd
