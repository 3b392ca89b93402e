#include "sfkd/mppi.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace sfkd {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

double clamp(double v, double lim) { return std::min(lim, std::max(-lim, v)); }
}  // namespace

ControlInput saturate(const ControlInput& u, const MppiConfig& cfg) {
    return {clamp(u.delta, cfg.delta_max), clamp(u.a, cfg.a_max)};
}

ControllerState ControllerState::init(const MppiConfig& cfg, std::uint64_t seed) {
    ControllerState s;
    s.U = Eigen::MatrixXd::Zero(2, cfg.horizon);
    s.rng.seed(seed);
    return s;
}

Eigen::MatrixXd sample_perturbations(std::mt19937_64& rng, const MppiConfig& cfg) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::MatrixXd P(2 * cfg.horizon, cfg.rollouts);
    for (int m = 0; m < cfg.rollouts; ++m) {
        for (int k = 0; k < cfg.horizon; ++k) {
            P(2 * k, m) = cfg.sigma_u(0) * gauss(rng);
            P(2 * k + 1, m) = cfg.sigma_u(1) * gauss(rng);
        }
    }
    return P;
}

Eigen::VectorXd rollout_costs(const SfkdModel& m, const OperatorGen& g, const Eigen::VectorXd& z0,
                              const Eigen::MatrixXd& U_nominal,
                              const Eigen::MatrixXd& perturbations, const ReferenceWindow& refs,
                              const EnvInput& env, const MppiConfig& cfg) {
    const int T = cfg.horizon;
    const int M = static_cast<int>(perturbations.cols());
    const int r = m.cfg.r;
    const int d_e = m.cfg.d_e;
    if (static_cast<int>(refs.x_ref.size()) != T + 1 || refs.z_ref.cols() != T + 1)
        throw std::invalid_argument("rollout_costs: reference window must have T+1 entries");
    if (U_nominal.cols() != T || perturbations.rows() != 2 * T)
        throw std::invalid_argument("rollout_costs: sequence length mismatch");

    const Eigen::VectorXd p = embed_env(m, env);
    const OperatorEval ev = eval_operators(g, p, m.cfg.spec_bound());

    Eigen::MatrixXd Z = z0.replicate(1, M);
    Eigen::VectorXd cost = Eigen::VectorXd::Zero(M);

    Eigen::MatrixXd res_in(r + 2 + d_e, M);
    res_in.bottomRows(d_e) = p.replicate(1, M);
    MlpCache res_cache, dec_cache;

    // reference poses seen through the decoder, so that a systematic
    // reconstruction offset cancels between rollout and reference
    std::vector<VehicleState> ref_dec(T + 1);
    {
        MlpCache c;
        const Eigen::MatrixXd& F = mlp_forward(m.decoder, refs.z_ref, c);
        for (int k = 0; k <= T; ++k) ref_dec[k] = state_from_features(m.cfg, F.col(k));
    }

    auto stage_pose_cost = [&](const Eigen::MatrixXd& feats, int k, double scale) {
        const VehicleState& ref = ref_dec[k];
        const double sr = std::sin(ref.psi), cr = std::cos(ref.psi);
        for (int j = 0; j < M; ++j) {
            const double px = feats(0, j) * m.cfg.pos_scale;
            const double py = feats(1, j) * m.cfg.pos_scale;
            const double psi = std::atan2(feats(3, j), feats(2, j));
            const double lat = -sr * (px - ref.px) + cr * (py - ref.py);
            const double dpsi = wrap_angle(psi - ref.psi);
            cost(j) += scale * (cfg.w_lat * lat * lat + cfg.w_head * dpsi * dpsi);
        }
    };

    for (int k = 0; k < T; ++k) {
        // stage cost at the pre-step state, matching the rollout objective
        const Eigen::MatrixXd& feats = mlp_forward(m.decoder, Z, dec_cache);
        stage_pose_cost(feats, k, 1.0);
        for (int j = 0; j < M; ++j)
            cost(j) += cfg.lambda_latent * (Z.col(j) - refs.z_ref.col(k)).squaredNorm();

        // saturated controls for this step, one column per rollout
        Eigen::Matrix2Xd Uk(2, M);
        for (int j = 0; j < M; ++j) {
            Uk(0, j) = clamp(U_nominal(0, k) + perturbations(2 * k, j), cfg.delta_max);
            Uk(1, j) = clamp(U_nominal(1, k) + perturbations(2 * k + 1, j), cfg.a_max);
            cost(j) += cfg.w_u * Uk.col(j).squaredNorm();
        }

        res_in.topRows(r) = Z;
        res_in.row(r) = Uk.row(0) / m.cfg.delta_scale;
        res_in.row(r + 1) = Uk.row(1) / m.cfg.a_scale;
        const Eigen::MatrixXd& R = mlp_forward(m.residual, res_in, res_cache);
        Z = (ev.A * Z + ev.B * Uk + R).eval();
    }

    const Eigen::MatrixXd& feats_T = mlp_forward(m.decoder, Z, dec_cache);
    stage_pose_cost(feats_T, T, cfg.terminal_scale);

    for (int j = 0; j < M; ++j)
        if (!std::isfinite(cost(j)) || !Z.col(j).allFinite()) cost(j) = kInf;
    return cost;
}

double rollout_cost(const SfkdModel& m, const OperatorGen& g, const Eigen::VectorXd& z0,
                    const Eigen::MatrixXd& u_seq, const ReferenceWindow& refs, const EnvInput& env,
                    const MppiConfig& cfg) {
    if (u_seq.rows() != 2 || u_seq.cols() != cfg.horizon)
        throw std::invalid_argument("rollout_cost: control sequence must be 2 x T");
    const Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(2 * cfg.horizon, 1);
    return rollout_costs(m, g, z0, u_seq, zero, refs, env, cfg)(0);
}

WeightedUpdate mppi_weighted_update(const Eigen::MatrixXd& U, const Eigen::MatrixXd& perturbations,
                                    const Eigen::VectorXd& costs, const MppiConfig& cfg) {
    const int T = static_cast<int>(U.cols());
    const int M = static_cast<int>(costs.size());
    if (perturbations.cols() != M || perturbations.rows() != 2 * T)
        throw std::invalid_argument("mppi_weighted_update: shape mismatch");

    WeightedUpdate out;
    out.U = U;

    double min_cost = kInf;
    double finite_sum = 0.0;
    int finite_count = 0;
    for (int j = 0; j < M; ++j) {
        if (std::isfinite(costs(j))) {
            min_cost = std::min(min_cost, costs(j));
            finite_sum += costs(j);
            ++finite_count;
        }
    }
    if (finite_count == 0) return out;  // update refused, nominal retained
    out.min_cost = min_cost;
    out.mean_finite_cost = finite_sum / finite_count;

    Eigen::VectorXd w = Eigen::VectorXd::Zero(M);
    double wsum = 0.0;
    for (int j = 0; j < M; ++j) {
        if (!std::isfinite(costs(j))) continue;  // exactly zero weight
        w(j) = std::exp(-(costs(j) - min_cost) / cfg.lambda_temp);
        wsum += w(j);
    }
    w /= wsum;
    out.ess = 1.0 / w.squaredNorm();

    const Eigen::VectorXd delta = perturbations * w;  // 2T
    for (int k = 0; k < T; ++k) {
        out.U(0, k) = clamp(U(0, k) + delta(2 * k), cfg.delta_max);
        out.U(1, k) = clamp(U(1, k) + delta(2 * k + 1), cfg.a_max);
    }
    out.applied = true;
    return out;
}

ControlStepResult control_step(ControllerState& ctrl, const SfkdModel& m, const OperatorGen& g,
                               const VehicleState& x_t, const EnvInput& e_t,
                               const PathConfig& path, double t, const MppiConfig& cfg) {
    const int T = cfg.horizon;

    // express positions relative to the current reference point
    const VehicleState ref_now = reference_state(path, t);
    auto shifted = [&](VehicleState s) {
        s.px -= ref_now.px;
        s.py -= ref_now.py;
        return s;
    };

    const Eigen::VectorXd z0 = encode(m, shifted(x_t), e_t);

    ReferenceWindow refs;
    refs.x_ref.reserve(T + 1);
    refs.z_ref.resize(m.cfg.r, T + 1);
    for (int k = 0; k <= T; ++k) {
        const VehicleState rk = shifted(reference_state(path, t + k * cfg.dt));
        refs.x_ref.push_back(rk);
        refs.z_ref.col(k) = encode(m, rk, e_t);
    }

    const Eigen::MatrixXd perts = sample_perturbations(ctrl.rng, cfg);
    const Eigen::VectorXd costs = rollout_costs(m, g, z0, ctrl.U, perts, refs, e_t, cfg);
    const WeightedUpdate upd = mppi_weighted_update(ctrl.U, perts, costs, cfg);

    ControlStepResult res;
    res.update_applied = upd.applied;
    res.min_cost = upd.min_cost;
    res.mean_cost = upd.mean_finite_cost;
    res.ess = upd.ess;
    res.u = ControlInput{upd.U(0, 0), upd.U(1, 0)};

    // receding horizon: shift left, repeat the last entry
    Eigen::MatrixXd next(2, T);
    if (T > 1) {
        next.leftCols(T - 1) = upd.U.rightCols(T - 1);
        next.col(T - 1) = upd.U.col(T - 1);
    } else {
        next = upd.U;
    }
    ctrl.U = std::move(next);
    ctrl.u_prev = Eigen::Vector2d(res.u.delta, res.u.a);
    return res;
}

}  // namespace sfkd
