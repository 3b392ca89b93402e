#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "sfkd/linalg.hpp"
#include "sfkd/mlp.hpp"

using namespace sfkd;

namespace {

// layer-by-layer scalar re-evaluation on plain vectors
std::vector<double> oracle_forward(const Mlp& m, const std::vector<double>& input) {
    std::vector<double> h = input;
    for (int layer = 0; layer < m.layers(); ++layer) {
        const int rows = static_cast<int>(m.W[layer].rows());
        const int cols = static_cast<int>(m.W[layer].cols());
        std::vector<double> next(rows);
        for (int i = 0; i < rows; ++i) {
            double acc = m.b[layer](i);
            for (int j = 0; j < cols; ++j) acc += m.W[layer](i, j) * h[j];
            next[i] = (layer < m.layers() - 1) ? std::tanh(acc) : acc;
        }
        h = std::move(next);
    }
    return h;
}

Mlp random_mlp(const std::vector<int>& dims, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return Mlp::make(dims, rng);
}

Eigen::VectorXd random_vec(int n, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = g(rng);
    return v;
}

}  // namespace

TEST_CASE("forward pass matches the scalar oracle to 1e-12") {
    std::mt19937_64 rng(5);
    const Mlp m = random_mlp({6, 9, 7, 4}, 17);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::VectorXd x = random_vec(6, rng);
        const Eigen::VectorXd y = mlp_apply(m, x);
        const std::vector<double> ref =
            oracle_forward(m, std::vector<double>(x.data(), x.data() + 6));
        for (int i = 0; i < 4; ++i) CHECK(std::abs(y(i) - ref[i]) <= 1e-12);
    }
}

TEST_CASE("batched forward equals per-column forward") {
    std::mt19937_64 rng(6);
    const Mlp m = random_mlp({5, 8, 3}, 21);
    Eigen::MatrixXd X(5, 11);
    for (int c = 0; c < 11; ++c) X.col(c) = random_vec(5, rng);
    MlpCache cache;
    const Eigen::MatrixXd Y = mlp_forward(m, X, cache);
    for (int c = 0; c < 11; ++c)
        CHECK((Y.col(c) - mlp_apply(m, X.col(c))).cwiseAbs().maxCoeff() <= 1e-13);
}

TEST_CASE("backward gradients match central finite differences") {
    std::mt19937_64 rng(7);
    Mlp m = random_mlp({4, 6, 5, 3}, 31);
    Eigen::MatrixXd X(4, 5);
    for (int c = 0; c < 5; ++c) X.col(c) = random_vec(4, rng);
    Eigen::MatrixXd G(3, 5);  // fixed upstream gradient
    for (int c = 0; c < 5; ++c) G.col(c) = random_vec(3, rng);

    auto objective = [&]() {
        MlpCache cache;
        return (G.array() * mlp_forward(m, X, cache).array()).sum();
    };

    MlpCache cache;
    mlp_forward(m, X, cache);
    MlpGrads grads = MlpGrads::zeros_like(m);
    Eigen::MatrixXd dX;
    mlp_backward(m, cache, G, &grads, &dX);

    const double h = 1e-5;
    double worst = 0.0;
    for (int layer = 0; layer < m.layers(); ++layer) {
        for (int i = 0; i < m.W[layer].size(); ++i) {
            double& p = m.W[layer].data()[i];
            const double saved = p;
            p = saved + h;
            const double lp = objective();
            p = saved - h;
            const double lm = objective();
            p = saved;
            const double num = (lp - lm) / (2 * h);
            const double ana = grads.dW[layer].data()[i];
            worst = std::max(worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-8}));
        }
        for (int i = 0; i < m.b[layer].size(); ++i) {
            double& p = m.b[layer](i);
            const double saved = p;
            p = saved + h;
            const double lp = objective();
            p = saved - h;
            const double lm = objective();
            p = saved;
            const double num = (lp - lm) / (2 * h);
            worst = std::max(worst,
                             std::abs(num - grads.db[layer](i)) /
                                 std::max({std::abs(num), std::abs(grads.db[layer](i)), 1e-8}));
        }
    }
    // input gradients
    for (int i = 0; i < X.size(); ++i) {
        double& p = X.data()[i];
        const double saved = p;
        p = saved + h;
        const double lp = objective();
        p = saved - h;
        const double lm = objective();
        p = saved;
        const double num = (lp - lm) / (2 * h);
        worst = std::max(worst, std::abs(num - dX.data()[i]) /
                                    std::max({std::abs(num), std::abs(dX.data()[i]), 1e-8}));
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("jvp matches directional finite differences") {
    std::mt19937_64 rng(8);
    const Mlp m = random_mlp({5, 7, 4}, 41);
    const Eigen::VectorXd x = random_vec(5, rng);
    const Eigen::VectorXd v = random_vec(5, rng);
    MlpCache cache;
    mlp_forward(m, x, cache);
    MlpTangent tang;
    const Eigen::VectorXd jv = mlp_jvp(m, cache, 0, v, tang);
    const double h = 1e-6;
    const Eigen::VectorXd fd = (mlp_apply(m, x + h * v) - mlp_apply(m, x - h * v)) / (2 * h);
    CHECK((jv - fd).cwiseAbs().maxCoeff() <= 1e-7);
}

TEST_CASE("vjp is the transpose of jvp") {
    std::mt19937_64 rng(9);
    const Mlp m = random_mlp({6, 8, 5}, 43);
    const Eigen::VectorXd x = random_vec(6, rng);
    MlpCache cache;
    mlp_forward(m, x, cache);
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::VectorXd v = random_vec(6, rng);
        const Eigen::VectorXd u = random_vec(5, rng);
        MlpTangent tang;
        const double a = u.dot(mlp_jvp(m, cache, 0, v, tang));
        const double b = v.dot(mlp_vjp(m, cache, 0, u));
        CHECK(std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a)));
    }
}

TEST_CASE("jvp_backward differentiates u^T J v w.r.t. parameters and input") {
    std::mt19937_64 rng(10);
    Mlp m = random_mlp({4, 6, 6, 3}, 47);
    Eigen::VectorXd x = random_vec(4, rng);
    const Eigen::VectorXd v = random_vec(4, rng);
    const Eigen::VectorXd u = random_vec(3, rng);

    auto s_value = [&]() {
        MlpCache cache;
        mlp_forward(m, x, cache);
        MlpTangent tang;
        return u.dot(mlp_jvp(m, cache, 0, v, tang));
    };

    MlpCache cache;
    mlp_forward(m, x, cache);
    MlpTangent tang;
    mlp_jvp(m, cache, 0, v, tang);
    MlpGrads grads = MlpGrads::zeros_like(m);
    const Eigen::VectorXd dx = mlp_jvp_backward(m, cache, 0, tang, u, 1.0, &grads);

    const double h = 1e-6;
    double worst = 0.0;
    for (int layer = 0; layer < m.layers(); ++layer) {
        for (int i = 0; i < m.W[layer].size(); ++i) {
            double& p = m.W[layer].data()[i];
            const double saved = p;
            p = saved + h;
            const double sp = s_value();
            p = saved - h;
            const double sm = s_value();
            p = saved;
            const double num = (sp - sm) / (2 * h);
            const double ana = grads.dW[layer].data()[i];
            worst = std::max(worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-8}));
        }
        for (int i = 0; i < m.b[layer].size(); ++i) {
            double& p = m.b[layer](i);
            const double saved = p;
            p = saved + h;
            const double sp = s_value();
            p = saved - h;
            const double sm = s_value();
            p = saved;
            const double num = (sp - sm) / (2 * h);
            const double ana = grads.db[layer](i);
            worst = std::max(worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-8}));
        }
    }
    for (int i = 0; i < 4; ++i) {
        const double saved = x(i);
        x(i) = saved + h;
        const double sp = s_value();
        x(i) = saved - h;
        const double sm = s_value();
        x(i) = saved;
        const double num = (sp - sm) / (2 * h);
        worst = std::max(worst, std::abs(num - dx(i)) / std::max({std::abs(num), std::abs(dx(i)), 1e-8}));
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("power iteration and spectral projection") {
    std::mt19937_64 rng(11);
    SUBCASE("power iteration matches dense SVD on random matrices") {
        for (int trial = 0; trial < 20; ++trial) {
            Eigen::MatrixXd W(8, 8);
            for (int i = 0; i < W.size(); ++i) W.data()[i] = random_vec(1, rng)(0);
            const PowerIterResult p = power_iteration(W);
            CHECK(p.converged);
            CHECK(std::abs(p.sigma - spectral_norm_dense(W)) <= 1e-8 * spectral_norm_dense(W));
        }
    }
    SUBCASE("feasible matrix passes through unchanged") {
        Eigen::MatrixXd W = Eigen::MatrixXd::Identity(4, 4) * 0.5;
        CHECK((spectral_project(W, 0.9) - W).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("isotropic scaling") {
        Eigen::MatrixXd W = 2.0 * Eigen::MatrixXd::Identity(4, 4);
        const Eigen::MatrixXd P = spectral_project(W, 0.8);
        CHECK((P - 0.8 * Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-9);
    }
    SUBCASE("random 8x8 clipped to the bound, verified by dense SVD") {
        for (int trial = 0; trial < 20; ++trial) {
            Eigen::MatrixXd W(8, 8);
            for (int i = 0; i < W.size(); ++i) W.data()[i] = random_vec(1, rng)(0);
            const Eigen::MatrixXd P = spectral_project(W, 0.7);
            const double target = std::min(spectral_norm_dense(W), 0.7);
            CHECK(std::abs(spectral_norm_dense(P) - target) <= 1e-6);
        }
    }
    SUBCASE("zero matrix returned unchanged") {
        const Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(5, 5);
        CHECK(spectral_project(Z, 0.5).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("idempotent and never increases a singular value") {
        for (int trial = 0; trial < 10; ++trial) {
            Eigen::MatrixXd W(6, 6);
            for (int i = 0; i < W.size(); ++i) W.data()[i] = random_vec(1, rng)(0);
            const Eigen::MatrixXd P1 = spectral_project(W, 0.6);
            const Eigen::MatrixXd P2 = spectral_project(P1, 0.6);
            CHECK((P2 - P1).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, P1.cwiseAbs().maxCoeff()));
            Eigen::JacobiSVD<Eigen::MatrixXd> sw(W), sp(P1);
            for (int i = 0; i < 6; ++i)
                CHECK(sp.singularValues()(i) <= sw.singularValues()(i) * (1 + 1e-12));
        }
    }
    SUBCASE("bound must be positive") {
        CHECK_THROWS_AS(spectral_project(Eigen::MatrixXd::Identity(3, 3), 0.0),
                        std::invalid_argument);
    }
}
