#include "sfkd/stability.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>

#include "sfkd/csv.hpp"
#include "sfkd/trainer.hpp"

namespace sfkd {

std::vector<EnvInput> make_env_grid(int n, const std::vector<EnvInput>& extra) {
    std::vector<EnvInput> grid;
    grid.reserve(n * n + extra.size());
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            EnvInput e;
            e.mu = 0.3 + 0.6 * (n == 1 ? 0.5 : static_cast<double>(i) / (n - 1));
            e.w = -8.0 + 16.0 * (n == 1 ? 0.5 : static_cast<double>(j) / (n - 1));
            grid.push_back(e);
        }
    }
    grid.insert(grid.end(), extra.begin(), extra.end());
    return grid;
}

std::vector<EnvInput> scenario_env_levels() {
    return {EnvInput{0.9, 0.0},  EnvInput{0.55, 3.0}, EnvInput{0.35, 6.0}, EnvInput{0.35, 0.0},
            EnvInput{0.35, 7.0}, EnvInput{0.35, 2.0}, EnvInput{0.35, 5.0}, EnvInput{0.5, 4.0},
            EnvInput{0.3, 8.0}};
}

AlphaResult compute_alpha(const OperatorGen& g, const SfkdModel& m,
                          const std::vector<EnvInput>& grid) {
    if (grid.empty()) throw std::invalid_argument("compute_alpha: empty grid");
    AlphaResult out;
    const double bound = m.cfg.spec_bound();
    for (const EnvInput& e : grid) {
        const OperatorEval ev = eval_operators(g, embed_env(m, e), bound);
        const double s = spectral_norm_dense(ev.A);
        if (s > out.max_norm) {
            out.max_norm = s;
            out.worst_env = e;
        }
    }
    out.value = out.max_norm + m.cfg.beta;
    return out;
}

bool lyapunov_decay_holds(const Eigen::MatrixXd& A, const Eigen::MatrixXd& P, double alpha,
                          double tol) {
    const Eigen::MatrixXd M =
        P - A.transpose() * P * A -
        (1.0 - alpha * alpha) * Eigen::MatrixXd::Identity(A.rows(), A.cols());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (M + M.transpose()),
                                                      Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff() >= -tol;
}

IssCertificate certify(const OperatorGen& g, const SfkdModel& m, const std::vector<EnvInput>& grid,
                       double dbar, const std::optional<Eigen::MatrixXd>& P_opt) {
    const AlphaResult alpha = compute_alpha(g, m, grid);
    if (alpha.value >= 1.0)
        throw std::runtime_error("certify: alpha = " + std::to_string(alpha.value) +
                                 " >= 1 at environment (mu=" + std::to_string(alpha.worst_env.mu) +
                                 ", w=" + std::to_string(alpha.worst_env.w) + ")");

    IssCertificate cert;
    cert.alpha = alpha.value;
    cert.beta = m.cfg.beta;
    cert.dbar = dbar;
    cert.grid_points = static_cast<int>(grid.size());
    cert.P = P_opt.value_or(Eigen::MatrixXd::Identity(m.cfg.r, m.cfg.r));

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cert.P + cert.P.transpose()),
                                                      Eigen::EigenvaluesOnly);
    const double lmin = es.eigenvalues().minCoeff();
    const double lmax = es.eigenvalues().maxCoeff();
    if (lmin <= 0.0) throw std::runtime_error("certify: P is not positive definite");
    cert.c1 = std::sqrt(lmax / lmin);
    cert.c2 = 1.0 / std::sqrt(lmin);

    const double bound = m.cfg.spec_bound();
    for (const EnvInput& e : grid) {
        const OperatorEval ev = eval_operators(g, embed_env(m, e), bound);
        if (!lyapunov_decay_holds(ev.A, cert.P, cert.alpha))
            throw std::runtime_error("certify: decay inequality fails at environment (mu=" +
                                     std::to_string(e.mu) + ", w=" + std::to_string(e.w) + ")");
    }
    return cert;
}

double iss_trajectory_bound(const IssCertificate& cert, double e0_norm, int k) {
    if (k < 0) throw std::invalid_argument("iss_trajectory_bound: negative step index");
    return cert.c1 * std::pow(cert.alpha, k) * e0_norm + cert.c2 * cert.dbar / (1.0 - cert.alpha);
}

double ultimate_bound(const IssCertificate& cert) {
    if (!(cert.alpha < 1.0)) throw std::invalid_argument("ultimate_bound: alpha must be < 1");
    return cert.c2 * cert.dbar / (1.0 - cert.alpha);
}

namespace {

struct EnvKey {
    double mu, w;
    bool operator<(const EnvKey& o) const { return mu != o.mu ? mu < o.mu : w < o.w; }
};

struct CachedOps {
    std::map<EnvKey, OperatorEval> ops;
    std::map<EnvKey, Eigen::VectorXd> embeddings;

    const OperatorEval& get(const SfkdModel& m, const OperatorGen& g, const EnvInput& e) {
        const EnvKey key{e.mu, e.w};
        auto it = ops.find(key);
        if (it != ops.end()) return it->second;
        const Eigen::VectorXd p = embed_env(m, e);
        embeddings.emplace(key, p);
        return ops.emplace(key, eval_operators(g, p, m.cfg.spec_bound())).first->second;
    }

    const Eigen::VectorXd& embedding(const SfkdModel& m, const EnvInput& e) {
        const EnvKey key{e.mu, e.w};
        auto it = embeddings.find(key);
        if (it != embeddings.end()) return it->second;
        return embeddings.emplace(key, embed_env(m, e)).first->second;
    }
};

}  // namespace

ResidualBoundEstimate estimate_dbar(const SfkdModel& m, const OperatorGen& g, const Dataset& d,
                                    double quantile) {
    if (d.segments.empty()) throw std::invalid_argument("estimate_dbar: empty dataset");
    if (!(quantile > 0.9) || quantile > 1.0)
        throw std::invalid_argument("estimate_dbar: quantile must be in (0.9, 1]");

    CachedOps cache;
    std::vector<double> d_norms;
    std::vector<double> z_norms, delta_norms;
    for (const auto& seg : d.segments) {
        for (const auto& t : seg.tuples) {
            const OperatorEval& ev = cache.get(m, g, t.e);
            const Eigen::VectorXd z = encode(m, t.x, t.e);
            const Eigen::VectorXd zn = encode(m, t.x_next, t.e);
            const Eigen::VectorXd lin = ev.A * z + ev.B * Eigen::Vector2d(t.u.delta, t.u.a);
            const Eigen::VectorXd res =
                mlp_apply(m.residual, residual_input(m, z, t.u, cache.embedding(m, t.e)));
            d_norms.push_back((zn - lin - res).norm());
            z_norms.push_back(z.norm());
            delta_norms.push_back((zn - lin).norm());
        }
    }

    ResidualBoundEstimate out;
    out.sample_count = d_norms.size();
    out.quantile = quantile;

    std::vector<double> sorted = d_norms;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    const std::size_t idx =
        std::min(n - 1, static_cast<std::size_t>(std::ceil(quantile * n)) == 0
                            ? 0
                            : static_cast<std::size_t>(std::ceil(quantile * n)) - 1);
    out.dbar = sorted[idx];
    out.above_dbar = static_cast<std::size_t>(
        std::count_if(d_norms.begin(), d_norms.end(), [&](double v) { return v > out.dbar; }));

    // least-squares line ||Delta|| ~ rho0 ||z|| + eta, then lift the offset
    // so the envelope covers every sample
    const double n_d = static_cast<double>(n);
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sx += z_norms[i];
        sy += delta_norms[i];
        sxx += z_norms[i] * z_norms[i];
        sxy += z_norms[i] * delta_norms[i];
    }
    const double denom = n_d * sxx - sx * sx;
    double rho0 = denom > 0.0 ? (n_d * sxy - sx * sy) / denom : 0.0;
    rho0 = std::max(0.0, rho0);
    double eta = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        eta = std::max(eta, delta_norms[i] - rho0 * z_norms[i]);
    out.rho0 = rho0;
    out.eta_max = eta;
    return out;
}

double violation_rate(const std::vector<double>& latent_error_norms, double delta_max) {
    if (latent_error_norms.empty()) throw std::invalid_argument("violation_rate: empty series");
    if (!(delta_max > 0.0)) throw std::invalid_argument("violation_rate: delta_max must be > 0");
    std::size_t over = 0;
    for (double v : latent_error_norms)
        if (v > delta_max) ++over;
    return static_cast<double>(over) / static_cast<double>(latent_error_norms.size());
}

double tracking_bound(const IssCertificate& cert, const TrackingBoundInputs& in) {
    if (!(in.L_phi > 0.0)) throw std::invalid_argument("tracking_bound: L_phi must be > 0");
    return (in.eps_mppi + ultimate_bound(cert)) / in.L_phi + in.eps_phi;
}

double estimate_encoder_lipschitz(const SfkdModel& m, const Dataset& d, int pairs,
                                  std::uint64_t seed) {
    auto tuples = flatten_dataset(d);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, tuples.size() - 1);
    std::normal_distribution<double> gauss(0.0, 1.0);
    double worst = 0.0;
    for (int i = 0; i < pairs; ++i) {
        const DatasetTuple& t = *tuples[pick(rng)];
        VehicleState xb = t.x;
        xb.px += 1e-3 * gauss(rng);
        xb.py += 1e-3 * gauss(rng);
        xb.psi = wrap_angle(xb.psi + 1e-4 * gauss(rng));
        xb.v = std::max(0.0, xb.v + 1e-3 * gauss(rng));
        const double dx = std::sqrt((xb.px - t.x.px) * (xb.px - t.x.px) +
                                    (xb.py - t.x.py) * (xb.py - t.x.py) +
                                    wrap_angle(xb.psi - t.x.psi) * wrap_angle(xb.psi - t.x.psi) +
                                    (xb.v - t.x.v) * (xb.v - t.x.v));
        if (dx == 0.0) continue;
        const double dz = (encode(m, xb, t.e) - encode(m, t.x, t.e)).norm();
        worst = std::max(worst, dz / dx);
    }
    return worst;
}

double estimate_reconstruction_error(const SfkdModel& m, const Dataset& d) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& seg : d.segments) {
        for (const auto& t : seg.tuples) {
            const VehicleState xr = decode(m, encode(m, t.x, t.e));
            const double dp = wrap_angle(xr.psi - t.x.psi);
            sum += std::sqrt((xr.px - t.x.px) * (xr.px - t.x.px) +
                             (xr.py - t.x.py) * (xr.py - t.x.py) + dp * dp +
                             (xr.v - t.x.v) * (xr.v - t.x.v));
            ++n;
        }
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

SegmentAudit audit_segment_bound(const SfkdModel& m, const OperatorGen& g,
                                 const IssCertificate& cert, const Segment& seg,
                                 const Eigen::VectorXd& initial_offset) {
    if (seg.tuples.empty()) throw std::invalid_argument("audit_segment_bound: empty segment");
    CachedOps cache;
    SegmentAudit out;
    const std::size_t n = seg.tuples.size();
    out.err_norms.reserve(n + 1);
    out.bounds.reserve(n + 1);
    out.checked.reserve(n + 1);
    out.d_norms.reserve(n);

    Eigen::VectorXd z_true = encode(m, seg.tuples[0].x, seg.tuples[0].e);
    Eigen::VectorXd z_model = z_true + initial_offset;

    int anchor_k = 0;
    double anchor_err = initial_offset.size() ? initial_offset.norm() : 0.0;

    out.err_norms.push_back((z_true - z_model).norm());
    out.bounds.push_back(iss_trajectory_bound(cert, anchor_err, 0));
    out.checked.push_back(1);

    // relative slack for floating-point accumulation in the comparison
    const double rel_tol = 1e-9;

    for (std::size_t k = 0; k < n; ++k) {
        const DatasetTuple& t = seg.tuples[k];
        const OperatorEval& ev = cache.get(m, g, t.e);
        const Eigen::VectorXd& p = cache.embedding(m, t.e);
        const Eigen::Vector2d u(t.u.delta, t.u.a);

        const Eigen::VectorXd zn_true = encode(m, t.x_next, t.e);
        const Eigen::VectorXd lin_true = ev.A * z_true + ev.B * u;
        const Eigen::VectorXd res_true = mlp_apply(m.residual, residual_input(m, z_true, t.u, p));
        const double d_norm = (zn_true - lin_true - res_true).norm();
        out.d_norms.push_back(d_norm);

        Eigen::VectorXd zn_model =
            ev.A * z_model + ev.B * u + mlp_apply(m.residual, residual_input(m, z_model, t.u, p));

        const bool switching = (k + 1 < n) && (seg.tuples[k + 1].e.mu != t.e.mu ||
                                               seg.tuples[k + 1].e.w != t.e.w);
        const bool conforming = d_norm <= cert.dbar && !switching;

        if (switching) {
            const EnvInput& e_next = seg.tuples[k + 1].e;
            zn_model = transport(m, zn_model, t.e, e_next);
            z_true = encode(m, t.x_next, e_next);
        } else {
            z_true = zn_true;
        }
        z_model = zn_model;

        const double err = (z_true - z_model).norm();
        out.err_norms.push_back(err);

        if (conforming) {
            const double b = iss_trajectory_bound(cert, anchor_err, static_cast<int>(k + 1) - anchor_k);
            out.bounds.push_back(b);
            out.checked.push_back(1);
            if (err > b * (1.0 + rel_tol)) ++out.violations;
        } else {
            // theorem premise broken at this step: restart the envelope here
            anchor_k = static_cast<int>(k + 1);
            anchor_err = err;
            out.bounds.push_back(iss_trajectory_bound(cert, anchor_err, 0));
            out.checked.push_back(0);
            ++out.excluded;
        }
    }
    return out;
}

void save_violation_trace_csv(const SegmentAudit& audit, const std::string& path) {
    CsvWriter w(path);
    w.header({"k", "err_norm", "bound", "checked", "violated"});
    for (std::size_t k = 0; k < audit.err_norms.size(); ++k) {
        const bool viol = audit.checked[k] && audit.err_norms[k] > audit.bounds[k] * (1.0 + 1e-9);
        w.row({std::to_string(k), fmt_double(audit.err_norms[k]), fmt_double(audit.bounds[k]),
               std::to_string(static_cast<int>(audit.checked[k])), std::to_string(viol ? 1 : 0)});
    }
    w.close();
}

void save_certificate(const IssCertificate& cert, const OperatorGen& g, const SfkdModel& m,
                      const std::vector<EnvInput>& grid, const std::string& txt_path,
                      const std::string& csv_path) {
    {
        std::ofstream out(txt_path);
        if (!out) throw std::runtime_error("cannot write " + txt_path);
        out << "iss-certificate v1\n";
        out << "alpha " << fmt_double(cert.alpha) << "\n";
        out << "beta " << fmt_double(cert.beta) << "\n";
        out << "c1 " << fmt_double(cert.c1) << "\n";
        out << "c2 " << fmt_double(cert.c2) << "\n";
        out << "dbar " << fmt_double(cert.dbar) << "\n";
        out << "ultimate_bound " << fmt_double(ultimate_bound(cert)) << "\n";
        out << "grid_points " << cert.grid_points << "\n";
        out << "P identity " << cert.P.rows() << "\n";
    }
    CsvWriter w(csv_path);
    w.header({"mu", "w", "specnorm_A", "decay_margin_min_eig"});
    const double bound = m.cfg.spec_bound();
    for (const EnvInput& e : grid) {
        const OperatorEval ev = eval_operators(g, embed_env(m, e), bound);
        const Eigen::MatrixXd M =
            cert.P - ev.A.transpose() * cert.P * ev.A -
            (1.0 - cert.alpha * cert.alpha) * Eigen::MatrixXd::Identity(ev.A.rows(), ev.A.cols());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (M + M.transpose()),
                                                          Eigen::EigenvaluesOnly);
        w.row({fmt_double(e.mu), fmt_double(e.w), fmt_double(spectral_norm_dense(ev.A)),
               fmt_double(es.eigenvalues().minCoeff())});
    }
    w.close();
}

IssCertificate load_certificate_txt(const std::string& txt_path) {
    std::ifstream in(txt_path);
    if (!in) throw std::runtime_error("cannot open " + txt_path);
    std::string tag, version;
    in >> tag >> version;
    if (tag != "iss-certificate") throw std::runtime_error("not a certificate file: " + txt_path);
    IssCertificate cert;
    std::string key;
    while (in >> key) {
        if (key == "alpha") in >> cert.alpha;
        else if (key == "beta") in >> cert.beta;
        else if (key == "c1") in >> cert.c1;
        else if (key == "c2") in >> cert.c2;
        else if (key == "dbar") in >> cert.dbar;
        else if (key == "ultimate_bound") { double skip; in >> skip; }
        else if (key == "grid_points") in >> cert.grid_points;
        else if (key == "P") {
            std::string kind;
            int n;
            in >> kind >> n;
            cert.P = Eigen::MatrixXd::Identity(n, n);
        }
    }
    return cert;
}

}  // namespace sfkd
