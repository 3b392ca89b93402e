#pragma once

#include <Eigen/Dense>
#include <random>
#include <vector>

namespace sfkd {

/// Fully-connected network with tanh hidden layers and a linear output
/// layer. Layer i maps dims[i] -> dims[i+1].
struct Mlp {
    std::vector<Eigen::MatrixXd> W;  // W[i]: dims[i+1] x dims[i]
    std::vector<Eigen::VectorXd> b;

    int layers() const { return static_cast<int>(W.size()); }
    int in_dim() const { return static_cast<int>(W.front().cols()); }
    int out_dim() const { return static_cast<int>(W.back().rows()); }

    /// Glorot-uniform initialization, deterministic in the rng state.
    static Mlp make(const std::vector<int>& dims, std::mt19937_64& rng);

    /// Zeroes the output layer (weights and bias).
    void zero_output_layer();

    std::size_t parameter_count() const;
};

/// Forward activations; H[0] is the input batch, H[layers()] the output.
struct MlpCache {
    std::vector<Eigen::MatrixXd> H;
};

struct MlpGrads {
    std::vector<Eigen::MatrixXd> dW;
    std::vector<Eigen::VectorXd> db;

    static MlpGrads zeros_like(const Mlp& m);
    void set_zero();
};

/// Batched forward pass; X is (in_dim x n). Returns cache.H.back().
const Eigen::MatrixXd& mlp_forward(const Mlp& m, const Eigen::MatrixXd& X, MlpCache& cache);

/// Convenience single-point forward without keeping the cache.
Eigen::VectorXd mlp_apply(const Mlp& m, const Eigen::VectorXd& x);

/// Reverse pass for the batch in `cache`. Accumulates parameter gradients
/// into `grads` (if non-null) and writes input gradients to dX (if non-null).
void mlp_backward(const Mlp& m, const MlpCache& cache, const Eigen::MatrixXd& dY,
                  MlpGrads* grads, Eigen::MatrixXd* dX);

/// Tangents of the activations along one input direction, for batch column
/// `col` of a cache. Hd[i] is the tangent of cache.H[i].col(col).
struct MlpTangent {
    std::vector<Eigen::VectorXd> Hd;
};

/// Forward-mode directional derivative: returns J * vin where J is the
/// network Jacobian at cache column `col`.
Eigen::VectorXd mlp_jvp(const Mlp& m, const MlpCache& cache, int col, const Eigen::VectorXd& vin,
                        MlpTangent& tangent);

/// Reverse-mode product u^T J evaluated at cache column `col`: returns
/// J^T u without touching parameter gradients.
Eigen::VectorXd mlp_vjp(const Mlp& m, const MlpCache& cache, int col, const Eigen::VectorXd& u);

/// Gradient of s = scale * u^T J v with u, v held fixed, where J is the
/// network Jacobian at cache column `col` and `tangent` holds the forward
/// tangents of v (from mlp_jvp). Accumulates parameter gradients into
/// `grads` (if non-null) and returns ds/d(input), the adjoint of the primal
/// input point.
Eigen::VectorXd mlp_jvp_backward(const Mlp& m, const MlpCache& cache, int col,
                                 const MlpTangent& tangent, const Eigen::VectorXd& u, double scale,
                                 MlpGrads* grads);

}  // namespace sfkd
