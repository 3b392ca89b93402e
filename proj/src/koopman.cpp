#include "sfkd/koopman.hpp"

#include <map>
#include <stdexcept>

namespace sfkd {

OperatorGen OperatorGen::zeros(int r, int d_e, bool global) {
    OperatorGen g;
    g.r = r;
    g.d_e = d_e;
    g.global = global;
    g.WA = Eigen::MatrixXd::Zero(r * r, d_e);
    g.bA = Eigen::VectorXd::Zero(r * r);
    g.WB = Eigen::MatrixXd::Zero(r * g.n_u, d_e);
    g.bB = Eigen::VectorXd::Zero(r * g.n_u);
    return g;
}

void eval_operators_raw(const OperatorGen& g, const Eigen::VectorXd& psi_e, Eigen::MatrixXd& A_raw,
                        Eigen::MatrixXd& B) {
    Eigen::VectorXd va = g.bA, vb = g.bB;
    if (!g.global) {
        va.noalias() += g.WA * psi_e;
        vb.noalias() += g.WB * psi_e;
    }
    A_raw = Eigen::Map<const Eigen::MatrixXd>(va.data(), g.r, g.r);
    B = Eigen::Map<const Eigen::MatrixXd>(vb.data(), g.r, g.n_u);
}

OperatorEval eval_operators(const OperatorGen& g, const Eigen::VectorXd& psi_e, double bound) {
    OperatorEval ev;
    Eigen::MatrixXd A_raw;
    eval_operators_raw(g, psi_e, A_raw, ev.B);
    ev.proj = project_spectral(A_raw, bound);
    ev.A = ev.proj.projected;
    return ev;
}

LinearFit fit_linear_operators(const Eigen::MatrixXd& Z, const Eigen::MatrixXd& U,
                               const Eigen::MatrixXd& Zn, double mu_reg) {
    const int r = static_cast<int>(Z.rows());
    const int n_u = static_cast<int>(U.rows());
    const int n = static_cast<int>(Z.cols());
    if (mu_reg < 0.0) throw std::invalid_argument("fit_linear_operators: mu_reg must be >= 0");
    if (n == 0) throw std::invalid_argument("fit_linear_operators: no samples");
    if (U.cols() != n || Zn.cols() != n || Zn.rows() != r)
        throw std::invalid_argument("fit_linear_operators: inconsistent shapes");

    Eigen::MatrixXd G(r + n_u, n);
    G.topRows(r) = Z;
    G.bottomRows(n_u) = U;

    Eigen::MatrixXd S = G * G.transpose();
    if (mu_reg == 0.0) {
        Eigen::FullPivLU<Eigen::MatrixXd> lu(S);
        if (lu.rank() < r + n_u)
            throw std::invalid_argument(
                "fit_linear_operators: rank-deficient regressors with mu_reg = 0; "
                "use a positive mu_reg");
    }
    S.topLeftCorner(r, r) += mu_reg * Eigen::MatrixXd::Identity(r, r);

    // Theta = Zn G^T S^{-1}, with the penalty acting on the A block only
    Eigen::MatrixXd rhs = G * Zn.transpose();          // (r+n_u) x r
    Eigen::MatrixXd theta_t = S.ldlt().solve(rhs);     // (r+n_u) x r
    LinearFit fit;
    fit.A = theta_t.topRows(r).transpose();
    fit.B = theta_t.bottomRows(n_u).transpose();
    return fit;
}

namespace {

struct EnvKey {
    double mu, w;
    bool operator<(const EnvKey& o) const {
        if (mu != o.mu) return mu < o.mu;
        return w < o.w;
    }
};

}  // namespace

OperatorGen identify_warmstart(const std::vector<LatentTuple>& tuples, const SfkdModel& m,
                               double mu_reg, bool global) {
    if (tuples.empty()) throw std::invalid_argument("identify_warmstart: empty dataset");
    const int r = static_cast<int>(tuples.front().z.size());
    const int d_e = m.cfg.d_e;
    OperatorGen g = OperatorGen::zeros(r, d_e, global);

    // cluster by distinct environment value (scenario schedules emit a small
    // discrete set); global mode pools everything
    std::map<EnvKey, std::vector<int>> clusters;
    for (std::size_t i = 0; i < tuples.size(); ++i) {
        EnvKey key = global ? EnvKey{0.0, 0.0} : EnvKey{tuples[i].e.mu, tuples[i].e.w};
        clusters[key].push_back(static_cast<int>(i));
    }

    const int n_c = static_cast<int>(clusters.size());
    Eigen::MatrixXd TA(r * r, n_c), TB(r * g.n_u, n_c);
    Eigen::MatrixXd P(d_e + 1, n_c);
    Eigen::VectorXd weight(n_c);

    int ci = 0;
    for (const auto& [key, idx] : clusters) {
        const int n = static_cast<int>(idx.size());
        Eigen::MatrixXd Z(r, n), U(g.n_u, n), Zn(r, n);
        for (int j = 0; j < n; ++j) {
            Z.col(j) = tuples[idx[j]].z;
            U.col(j) = tuples[idx[j]].u;
            Zn.col(j) = tuples[idx[j]].z_next;
        }
        LinearFit fit = fit_linear_operators(Z, U, Zn, mu_reg);
        TA.col(ci) = Eigen::Map<const Eigen::VectorXd>(fit.A.data(), r * r);
        TB.col(ci) = Eigen::Map<const Eigen::VectorXd>(fit.B.data(), r * g.n_u);
        P.col(ci).head(d_e) = global ? Eigen::VectorXd::Zero(d_e)
                                     : embed_env(m, tuples[idx[0]].e);
        P(d_e, ci) = 1.0;
        weight(ci) = std::sqrt(static_cast<double>(n));
        ++ci;
    }

    if (global || n_c == 1) {
        g.bA = TA.col(0);
        g.bB = TB.col(0);
        return g;
    }

    // sample-count weighted least squares fit of the affine generator
    // through the cluster solutions; minimum-norm when under-determined
    Eigen::MatrixXd Pw = P * weight.asDiagonal();
    Eigen::MatrixXd TAw = TA * weight.asDiagonal();
    Eigen::MatrixXd TBw = TB * weight.asDiagonal();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(Pw.transpose(), Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::MatrixXd MA = svd.solve(TAw.transpose()).transpose();  // (r*r) x (d_e+1)
    Eigen::MatrixXd MB = svd.solve(TBw.transpose()).transpose();
    g.WA = MA.leftCols(d_e);
    g.bA = MA.col(d_e);
    g.WB = MB.leftCols(d_e);
    g.bB = MB.col(d_e);
    return g;
}

std::vector<LatentTuple> lift_dataset(const Dataset& d, const SfkdModel& m) {
    std::vector<LatentTuple> out;
    out.reserve(dataset_tuple_count(d));
    for (const auto& seg : d.segments) {
        for (const auto& t : seg.tuples) {
            LatentTuple lt;
            lt.z = encode(m, t.x, t.e);
            lt.u = Eigen::Vector2d(t.u.delta, t.u.a);
            lt.e = t.e;
            lt.z_next = encode(m, t.x_next, t.e);
            out.push_back(std::move(lt));
        }
    }
    return out;
}

OperatorGen identify_warmstart(const Dataset& d, const SfkdModel& m, double mu_reg, bool global) {
    return identify_warmstart(lift_dataset(d, m), m, mu_reg, global);
}

}  // namespace sfkd
