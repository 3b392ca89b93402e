#include "sfkd/linalg.hpp"

#include <cmath>
#include <stdexcept>

namespace sfkd {

Eigen::VectorXd power_iteration_seed(int n) {
    // ones plus a small ramp; avoids starting orthogonal to the top
    // singular direction for structured matrices
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = 1.0 + 1e-3 * (i + 1);
    v.normalize();
    return v;
}

PowerIterResult power_iteration(const Eigen::MatrixXd& W, int max_iters, double rel_tol) {
    PowerIterResult r;
    r.v = power_iteration_seed(static_cast<int>(W.cols()));
    double prev = -1.0;
    Eigen::VectorXd w;
    for (int it = 0; it < max_iters; ++it) {
        w.noalias() = W * r.v;
        r.sigma = w.norm();
        r.iterations = it + 1;
        if (r.sigma == 0.0) {
            r.converged = true;
            r.u = Eigen::VectorXd::Zero(W.rows());
            return r;
        }
        if (prev >= 0.0 && std::abs(r.sigma - prev) <= rel_tol * r.sigma) {
            r.converged = true;
            r.u = w / r.sigma;
            return r;
        }
        prev = r.sigma;
        Eigen::VectorXd s = W.transpose() * w;
        const double sn = s.norm();
        if (sn == 0.0) break;
        r.v = s / sn;
    }
    r.u = (r.sigma > 0.0) ? Eigen::VectorXd(w / r.sigma) : Eigen::VectorXd::Zero(W.rows());
    return r;
}

double spectral_norm_dense(const Eigen::MatrixXd& W) {
    if (W.size() == 0) return 0.0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(W);
    return svd.singularValues()(0);
}

SpectralProjection project_spectral(const Eigen::MatrixXd& W, double bound) {
    if (!(bound > 0.0)) throw std::invalid_argument("project_spectral: bound must be positive");
    SpectralProjection p;
    if (W.isZero(0.0)) {
        p.projected = W;
        p.u = Eigen::VectorXd::Zero(W.rows());
        p.v = Eigen::VectorXd::Zero(W.cols());
        return p;
    }
    PowerIterResult pi = power_iteration(W, 300);
    p.sigma = pi.sigma;
    p.u = pi.u;
    p.v = pi.v;
    // Power iteration under-estimates when the top singular values cluster,
    // which is exactly the regime of a trained operator sitting at the
    // bound. After 300 iterations every direction below 0.9*sigma_max is
    // fully damped, so an estimate under 0.9*bound certifies feasibility;
    // otherwise take the exact value (and singular pair) from a dense SVD.
    if (pi.sigma >= 0.9 * bound) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(W, Eigen::ComputeThinU | Eigen::ComputeThinV);
        p.sigma = svd.singularValues()(0);
        p.u = svd.matrixU().col(0);
        p.v = svd.matrixV().col(0);
    }
    if (p.sigma > bound) {
        p.scale = bound / p.sigma;
        p.active = true;
    }
    p.projected = p.scale * W;
    return p;
}

Eigen::MatrixXd spectral_project(const Eigen::MatrixXd& W, double bound) {
    return project_spectral(W, bound).projected;
}

}  // namespace sfkd
