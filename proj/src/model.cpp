#include "sfkd/model.hpp"

#include <cmath>
#include <stdexcept>

namespace sfkd {

SfkdModel SfkdModel::make(const SfkdModelConfig& cfg, std::mt19937_64& rng) {
    auto dims = [](int in, const std::vector<int>& hidden, int out) {
        std::vector<int> d;
        d.push_back(in);
        d.insert(d.end(), hidden.begin(), hidden.end());
        d.push_back(out);
        return d;
    };
    SfkdModel m;
    m.cfg = cfg;
    m.psi = Mlp::make(dims(2, cfg.psi_hidden, cfg.d_e), rng);
    m.encoder = Mlp::make(dims(SfkdModelConfig::state_feature_dim + cfg.d_e, cfg.enc_hidden, cfg.r), rng);
    m.decoder = Mlp::make(dims(cfg.r, cfg.dec_hidden, SfkdModelConfig::state_feature_dim), rng);
    m.residual = Mlp::make(dims(cfg.r + SfkdModelConfig::control_dim + cfg.d_e, cfg.res_hidden, cfg.r), rng);
    // training starts from the pure linear-operator model
    m.residual.zero_output_layer();
    return m;
}

Eigen::Vector2d env_features(const SfkdModelConfig& cfg, const EnvInput& e) {
    return {(e.mu - cfg.mu_center) / cfg.mu_halfwidth, e.w / cfg.w_scale};
}

Eigen::VectorXd state_features(const SfkdModelConfig& cfg, const VehicleState& x) {
    Eigen::VectorXd f(SfkdModelConfig::state_feature_dim);
    f << x.px / cfg.pos_scale, x.py / cfg.pos_scale, std::cos(x.psi), std::sin(x.psi),
        x.v / cfg.v_scale;
    return f;
}

Eigen::Vector2d control_features(const SfkdModelConfig& cfg, const ControlInput& u) {
    return {u.delta / cfg.delta_scale, u.a / cfg.a_scale};
}

VehicleState state_from_features(const SfkdModelConfig& cfg, const Eigen::VectorXd& f) {
    VehicleState x;
    x.px = f(0) * cfg.pos_scale;
    x.py = f(1) * cfg.pos_scale;
    x.psi = (f(2) == 0.0 && f(3) == 0.0) ? 0.0 : std::atan2(f(3), f(2));
    if (x.psi <= -M_PI) x.psi = M_PI;
    x.v = std::max(0.0, f(4) * cfg.v_scale);
    return x;
}

Eigen::VectorXd embed_env(const SfkdModel& m, const EnvInput& e) {
    if (!is_finite(e)) throw std::invalid_argument("embed_env: non-finite environment");
    return mlp_apply(m.psi, env_features(m.cfg, e));
}

Eigen::VectorXd encode(const SfkdModel& m, const VehicleState& x, const EnvInput& e) {
    if (!is_finite(x)) throw std::invalid_argument("encode: non-finite state");
    Eigen::VectorXd in(SfkdModelConfig::state_feature_dim + m.cfg.d_e);
    in.head(SfkdModelConfig::state_feature_dim) = state_features(m.cfg, x);
    if (m.cfg.fiber_conditioning)
        in.tail(m.cfg.d_e) = embed_env(m, e);
    else
        in.tail(m.cfg.d_e).setZero();
    return mlp_apply(m.encoder, in);
}

VehicleState decode(const SfkdModel& m, const Eigen::VectorXd& z) {
    if (!z.allFinite()) throw std::invalid_argument("decode: non-finite latent");
    return state_from_features(m.cfg, mlp_apply(m.decoder, z));
}

Eigen::VectorXd residual_input(const SfkdModel& m, const Eigen::VectorXd& z,
                               const ControlInput& u, const Eigen::VectorXd& psi_e) {
    Eigen::VectorXd in(m.cfg.r + SfkdModelConfig::control_dim + m.cfg.d_e);
    in.head(m.cfg.r) = z;
    in.segment(m.cfg.r, SfkdModelConfig::control_dim) = control_features(m.cfg, u);
    in.tail(m.cfg.d_e) = psi_e;
    return in;
}

Eigen::VectorXd residual_forward(const SfkdModel& m, const Eigen::VectorXd& z,
                                 const ControlInput& u, const EnvInput& e) {
    if (!z.allFinite() || !is_finite(u) || !is_finite(e))
        throw std::invalid_argument("residual_forward: non-finite input");
    return mlp_apply(m.residual, residual_input(m, z, u, embed_env(m, e)));
}

Eigen::VectorXd transport(const SfkdModel& m, const Eigen::VectorXd& z, const EnvInput& e_from,
                          const EnvInput& e_to) {
    (void)e_from;  // source fiber is implicit in z
    return encode(m, decode(m, z), e_to);
}

ResidualJacPower residual_jacobian_power(const SfkdModel& m, const MlpCache& res_cache, int col,
                                         int max_iters, double rel_tol) {
    const int r = m.cfg.r;
    const int in_dim = m.residual.in_dim();
    ResidualJacPower out;
    out.v = power_iteration_seed(r);
    double prev = -1.0;
    int polish = -1;  // extra iterations after the sigma estimate settles,
                      // letting the singular pair itself converge further
    Eigen::VectorXd w;
    MlpTangent tangent;
    for (int it = 0; it < max_iters; ++it) {
        Eigen::VectorXd vin = Eigen::VectorXd::Zero(in_dim);
        vin.head(r) = out.v;
        w = mlp_jvp(m.residual, res_cache, col, vin, tangent);
        out.sigma = w.norm();
        out.iterations = it + 1;
        if (out.sigma == 0.0) {
            out.u = Eigen::VectorXd::Zero(r);
            return out;
        }
        if (polish < 0 && prev >= 0.0 && std::abs(out.sigma - prev) <= rel_tol * out.sigma)
            polish = 10;
        if (polish == 0) {
            out.u = w / out.sigma;
            return out;
        }
        if (polish > 0) --polish;
        prev = out.sigma;
        Eigen::VectorXd s = mlp_vjp(m.residual, res_cache, col, w).head(r);
        const double sn = s.norm();
        if (sn == 0.0) break;
        out.v = s / sn;
    }
    out.converged = false;
    out.u = (out.sigma > 0.0) ? Eigen::VectorXd(w / out.sigma) : Eigen::VectorXd::Zero(r);
    return out;
}

JacNormResult residual_jacobian_norm(const SfkdModel& m, const Eigen::VectorXd& z,
                                     const ControlInput& u, const EnvInput& e) {
    if (!z.allFinite() || !is_finite(u) || !is_finite(e))
        throw std::invalid_argument("residual_jacobian_norm: non-finite input");
    MlpCache cache;
    mlp_forward(m.residual, residual_input(m, z, u, embed_env(m, e)), cache);
    ResidualJacPower p = residual_jacobian_power(m, cache, 0, /*max_iters=*/2000,
                                                 /*rel_tol=*/1e-13);
    JacNormResult res;
    res.converged = p.converged;
    res.iterations = p.iterations;
    if (p.converged) {
        res.value = p.sigma;
        return res;
    }
    // The tolerance is unreachable when the top singular values cluster (the
    // generic state of a trained residual, whose spectrum piles up at the
    // contraction budget). Assemble the dense Jacobian from exact
    // forward-mode columns and take its SVD instead.
    const int r = m.cfg.r;
    Eigen::MatrixXd J(m.residual.out_dim(), r);
    MlpTangent tangent;
    for (int i = 0; i < r; ++i) {
        Eigen::VectorXd vin = Eigen::VectorXd::Zero(m.residual.in_dim());
        vin(i) = 1.0;
        J.col(i) = mlp_jvp(m.residual, cache, 0, vin, tangent);
    }
    res.value = spectral_norm_dense(J);
    return res;
}

}  // namespace sfkd
