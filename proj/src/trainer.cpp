#include "sfkd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <stdexcept>

#include "sfkd/csv.hpp"

namespace sfkd {

std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::Full: return "full";
        case Ablation::NoFiber: return "no-fiber";
        case Ablation::NoContr: return "no-contr";
    }
    return "?";
}

Ablation ablation_from_string(const std::string& s) {
    if (s == "full") return Ablation::Full;
    if (s == "no-fiber" || s == "no_fiber") return Ablation::NoFiber;
    if (s == "no-contr" || s == "no_contr") return Ablation::NoContr;
    throw std::invalid_argument("unknown ablation: " + s);
}

OperatorGenGrads OperatorGenGrads::zeros_like(const OperatorGen& g) {
    OperatorGenGrads out;
    out.dWA = Eigen::MatrixXd::Zero(g.WA.rows(), g.WA.cols());
    out.dbA = Eigen::VectorXd::Zero(g.bA.size());
    out.dWB = Eigen::MatrixXd::Zero(g.WB.rows(), g.WB.cols());
    out.dbB = Eigen::VectorXd::Zero(g.bB.size());
    return out;
}

void OperatorGenGrads::set_zero() {
    dWA.setZero();
    dbA.setZero();
    dWB.setZero();
    dbB.setZero();
}

ModelGrads ModelGrads::zeros_like(const SfkdModel& m, const OperatorGen& g) {
    ModelGrads out;
    out.psi = MlpGrads::zeros_like(m.psi);
    out.enc = MlpGrads::zeros_like(m.encoder);
    out.dec = MlpGrads::zeros_like(m.decoder);
    out.res = MlpGrads::zeros_like(m.residual);
    out.gen = OperatorGenGrads::zeros_like(g);
    return out;
}

void ModelGrads::set_zero() {
    psi.set_zero();
    enc.set_zero();
    dec.set_zero();
    res.set_zero();
    gen.set_zero();
}

namespace {

struct EnvKey {
    double mu, w;
    bool operator<(const EnvKey& o) const { return mu != o.mu ? mu < o.mu : w < o.w; }
};

// gradient of L through A = scale(A_raw) * A_raw with scale = min(1, bound/sigma)
Eigen::MatrixXd projection_backward(const SpectralProjection& proj, const Eigen::MatrixXd& A_raw,
                                    const Eigen::MatrixXd& dA) {
    if (!proj.active) return dA;
    const double inner = (dA.array() * A_raw.array()).sum();
    return proj.scale * dA - (proj.scale / proj.sigma) * inner * (proj.u * proj.v.transpose());
}

}  // namespace

LossBreakdown total_loss(const SfkdModel& m, const OperatorGen& g,
                         const std::vector<const DatasetTuple*>& batch, const TrainConfig& cfg,
                         std::mt19937_64& rng, ModelGrads* grads) {
    if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
    const int r = m.cfg.r;
    const int d_e = m.cfg.d_e;
    const int nf = SfkdModelConfig::state_feature_dim;
    const double bound = m.cfg.spec_bound();
    const double lambda_c = (cfg.ablation == Ablation::NoContr) ? 0.0 : cfg.lambda_c;
    const bool fiber = m.cfg.fiber_conditioning;

    // contraction penalty evaluation points, drawn from the batch; the tail
    // entries flagged by cfg.forced_probe_tail are always probed
    std::vector<char> is_probe(batch.size(), 0);
    if (lambda_c > 0.0 && cfg.contraction_samples > 0) {
        const int want = std::min<int>(cfg.contraction_samples, static_cast<int>(batch.size()));
        std::vector<int> idx(batch.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
        for (int i = 0; i < want; ++i) {
            std::uniform_int_distribution<int> pick(i, static_cast<int>(idx.size()) - 1);
            std::swap(idx[i], idx[pick(rng)]);
            is_probe[idx[i]] = 1;
        }
        for (int i = 0; i < cfg.forced_probe_tail && i < static_cast<int>(batch.size()); ++i)
            is_probe[batch.size() - 1 - i] = 1;
    }

    // group tuples by environment so operators and embedding are shared
    std::map<EnvKey, int> group_of;
    std::vector<std::vector<int>> groups;
    std::vector<EnvInput> group_env;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const EnvInput& e = batch[i]->e;
        auto [it, fresh] = group_of.try_emplace(EnvKey{e.mu, e.w}, static_cast<int>(groups.size()));
        if (fresh) {
            groups.emplace_back();
            group_env.push_back(e);
        }
        groups[it->second].push_back(static_cast<int>(i));
    }

    LossBreakdown loss;

    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& members = groups[gi];
        const int n = static_cast<int>(members.size());
        const EnvInput env = group_env[gi];

        MlpCache cache_psi;
        const Eigen::VectorXd p = mlp_forward(m.psi, env_features(m.cfg, env), cache_psi);

        Eigen::MatrixXd A_raw, B;
        eval_operators_raw(g, p, A_raw, B);
        SpectralProjection proj = project_spectral(A_raw, bound);
        const Eigen::MatrixXd& A = proj.projected;

        Eigen::MatrixXd Xf(nf, n), Xnf(nf, n), U(2, n), Uf(2, n);
        for (int j = 0; j < n; ++j) {
            const DatasetTuple& t = *batch[members[j]];
            Xf.col(j) = state_features(m.cfg, t.x);
            Xnf.col(j) = state_features(m.cfg, t.x_next);
            U.col(j) = Eigen::Vector2d(t.u.delta, t.u.a);
            Uf.col(j) = control_features(m.cfg, t.u);
        }

        Eigen::MatrixXd enc_in(nf + d_e, n), enc_in_n(nf + d_e, n);
        enc_in.topRows(nf) = Xf;
        enc_in_n.topRows(nf) = Xnf;
        if (fiber) {
            enc_in.bottomRows(d_e) = p.replicate(1, n);
            enc_in_n.bottomRows(d_e) = p.replicate(1, n);
        } else {
            enc_in.bottomRows(d_e).setZero();
            enc_in_n.bottomRows(d_e).setZero();
        }

        MlpCache cache_ex, cache_exn, cache_res, cache_dec;
        const Eigen::MatrixXd& Z = mlp_forward(m.encoder, enc_in, cache_ex);
        const Eigen::MatrixXd& Zn = mlp_forward(m.encoder, enc_in_n, cache_exn);

        Eigen::MatrixXd res_in(r + 2 + d_e, n);
        res_in.topRows(r) = Z;
        res_in.middleRows(r, 2) = Uf;
        res_in.bottomRows(d_e) = p.replicate(1, n);
        const Eigen::MatrixXd& R = mlp_forward(m.residual, res_in, cache_res);

        Eigen::MatrixXd Epred = Zn - A * Z - B * U - R;
        loss.pred += Epred.squaredNorm();

        const Eigen::MatrixXd& Yf = mlp_forward(m.decoder, Z, cache_dec);
        Eigen::MatrixXd Erec = Xf - Yf;
        loss.recon += Erec.squaredNorm();

        // contraction probes living in this group
        struct Probe {
            int col;
            ResidualJacPower pw;
            double hinge;
        };
        std::vector<Probe> probes;
        for (int j = 0; j < n; ++j) {
            if (!is_probe[members[j]]) continue;
            ResidualJacPower pw = residual_jacobian_power(m, cache_res, j, 400, 1e-12);
            const double h = pw.sigma - m.cfg.beta;
            if (h > 0.0) loss.contr += h * h;
            probes.push_back({j, std::move(pw), h});
        }

        if (!grads) continue;

        Eigen::VectorXd pbar = Eigen::VectorXd::Zero(d_e);

        // prediction term
        Eigen::MatrixXd dZn = 2.0 * Epred;
        Eigen::MatrixXd dZ = -2.0 * (A.transpose() * Epred);
        Eigen::MatrixXd dA = -2.0 * (Epred * Z.transpose());
        Eigen::MatrixXd dB = -2.0 * (Epred * U.transpose());

        Eigen::MatrixXd dResIn;
        mlp_backward(m.residual, cache_res, -2.0 * Epred, &grads->res, &dResIn);
        dZ += dResIn.topRows(r);
        pbar += dResIn.bottomRows(d_e).rowwise().sum();

        // reconstruction term
        Eigen::MatrixXd dZdec;
        mlp_backward(m.decoder, cache_dec, -2.0 * cfg.lambda_r * Erec, &grads->dec, &dZdec);
        dZ += dZdec;

        // contraction term: d/dtheta of scale * u^T J v at the converged
        // singular pair, which is the exact sigma_max gradient there
        MlpTangent tangent;
        for (const Probe& pr : probes) {
            if (pr.hinge <= 0.0 || pr.pw.sigma == 0.0) continue;
            Eigen::VectorXd vin = Eigen::VectorXd::Zero(m.residual.in_dim());
            vin.head(r) = pr.pw.v;
            mlp_jvp(m.residual, cache_res, pr.col, vin, tangent);
            Eigen::VectorXd din = mlp_jvp_backward(m.residual, cache_res, pr.col, tangent, pr.pw.u,
                                                   2.0 * lambda_c * pr.hinge, &grads->res);
            dZ.col(pr.col) += din.head(r);
            pbar += din.tail(d_e);
        }

        // encoder (both occurrences)
        Eigen::MatrixXd dEncInN, dEncIn;
        mlp_backward(m.encoder, cache_exn, dZn, &grads->enc, &dEncInN);
        mlp_backward(m.encoder, cache_ex, dZ, &grads->enc, &dEncIn);
        if (fiber) {
            pbar += dEncInN.bottomRows(d_e).rowwise().sum();
            pbar += dEncIn.bottomRows(d_e).rowwise().sum();
        }

        // operator generator through the spectral projection
        Eigen::MatrixXd dAraw = projection_backward(proj, A_raw, dA);
        Eigen::Map<const Eigen::VectorXd> vecA(dAraw.data(), dAraw.size());
        Eigen::Map<const Eigen::VectorXd> vecB(dB.data(), dB.size());
        grads->gen.dbA += vecA;
        grads->gen.dbB += vecB;
        if (!g.global) {
            grads->gen.dWA.noalias() += vecA * p.transpose();
            grads->gen.dWB.noalias() += vecB * p.transpose();
            pbar.noalias() += g.WA.transpose() * vecA;
            pbar.noalias() += g.WB.transpose() * vecB;
        }

        mlp_backward(m.psi, cache_psi, pbar, &grads->psi, nullptr);
    }

    loss.total = loss.pred + lambda_c * loss.contr + cfg.lambda_r * loss.recon;
    if (!std::isfinite(loss.pred)) throw std::runtime_error("total_loss: non-finite prediction term");
    if (!std::isfinite(loss.contr)) throw std::runtime_error("total_loss: non-finite contraction term");
    if (!std::isfinite(loss.recon)) throw std::runtime_error("total_loss: non-finite reconstruction term");
    return loss;
}

namespace {

using ParamSpan = std::pair<double*, std::size_t>;

void append_mlp(std::vector<ParamSpan>& v, Mlp& m) {
    for (int i = 0; i < m.layers(); ++i) {
        v.emplace_back(m.W[i].data(), m.W[i].size());
        v.emplace_back(m.b[i].data(), m.b[i].size());
    }
}

void append_mlp_grads(std::vector<ParamSpan>& v, MlpGrads& g) {
    for (std::size_t i = 0; i < g.dW.size(); ++i) {
        v.emplace_back(g.dW[i].data(), g.dW[i].size());
        v.emplace_back(g.db[i].data(), g.db[i].size());
    }
}

std::vector<ParamSpan> param_spans(SfkdModel& m, OperatorGen& g) {
    std::vector<ParamSpan> v;
    append_mlp(v, m.psi);
    append_mlp(v, m.encoder);
    append_mlp(v, m.decoder);
    append_mlp(v, m.residual);
    v.emplace_back(g.WA.data(), g.WA.size());
    v.emplace_back(g.bA.data(), g.bA.size());
    v.emplace_back(g.WB.data(), g.WB.size());
    v.emplace_back(g.bB.data(), g.bB.size());
    return v;
}

std::vector<ParamSpan> grad_spans(ModelGrads& g) {
    std::vector<ParamSpan> v;
    append_mlp_grads(v, g.psi);
    append_mlp_grads(v, g.enc);
    append_mlp_grads(v, g.dec);
    append_mlp_grads(v, g.res);
    v.emplace_back(g.gen.dWA.data(), g.gen.dWA.size());
    v.emplace_back(g.gen.dbA.data(), g.gen.dbA.size());
    v.emplace_back(g.gen.dWB.data(), g.gen.dWB.size());
    v.emplace_back(g.gen.dbB.data(), g.gen.dbB.size());
    return v;
}

}  // namespace

double gradient_check(SfkdModel& m, OperatorGen& g, const std::vector<const DatasetTuple*>& batch,
                      const TrainConfig& cfg, double step) {
    const std::mt19937_64 rng_state(cfg.seed);  // same probe points for every evaluation

    ModelGrads grads = ModelGrads::zeros_like(m, g);
    {
        std::mt19937_64 rng = rng_state;
        total_loss(m, g, batch, cfg, rng, &grads);
    }

    auto params = param_spans(m, g);
    auto gspans = grad_spans(grads);

    double worst = 0.0;
    for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t i = 0; i < params[t].second; ++i) {
            double& theta = params[t].first[i];
            const double saved = theta;
            theta = saved + step;
            std::mt19937_64 rng_p = rng_state;
            const double lp = total_loss(m, g, batch, cfg, rng_p, nullptr).total;
            theta = saved - step;
            std::mt19937_64 rng_m = rng_state;
            const double lm = total_loss(m, g, batch, cfg, rng_m, nullptr).total;
            theta = saved;
            const double numeric = (lp - lm) / (2.0 * step);
            const double analytic = gspans[t].first[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(analytic - numeric) / denom);
        }
    }
    return worst;
}

double max_operator_norm_on_grid(const SfkdModel& m, const OperatorGen& g, int n) {
    double worst = 0.0;
    const double bound = m.cfg.spec_bound();
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            EnvInput e;
            e.mu = 0.3 + 0.6 * (n == 1 ? 0.5 : static_cast<double>(i) / (n - 1));
            e.w = -8.0 + 16.0 * (n == 1 ? 0.5 : static_cast<double>(j) / (n - 1));
            OperatorEval ev = eval_operators(g, embed_env(m, e), bound);
            worst = std::max(worst, spectral_norm_dense(ev.A));
        }
    }
    return worst;
}

std::vector<const DatasetTuple*> flatten_dataset(const Dataset& d) {
    std::vector<const DatasetTuple*> out;
    out.reserve(dataset_tuple_count(d));
    for (const auto& seg : d.segments)
        for (const auto& t : seg.tuples) out.push_back(&t);
    return out;
}

void save_train_log_csv(const TrainLog& log, const std::string& path) {
    CsvWriter w(path);
    w.header({"epoch", "l_pred", "l_contr", "l_recon", "max_specnorm_A", "max_jac_norm", "seconds"});
    for (const auto& e : log.epochs)
        w.row({std::to_string(e.epoch), fmt_double(e.l_pred), fmt_double(e.l_contr),
               fmt_double(e.l_recon), fmt_double(e.max_specnorm_A), fmt_double(e.max_jac_norm),
               fmt_double(e.seconds)});
    w.close();
}

namespace {

TrainResult train_core(const Dataset& d, SfkdModel model, std::mt19937_64 rng,
                       const TrainConfig& cfg, const EpochCallback& on_epoch) {
    if (d.segments.empty()) throw std::invalid_argument("train: empty dataset");
    OperatorGen gen =
        identify_warmstart(d, model, cfg.mu_reg, /*global=*/cfg.ablation == Ablation::NoFiber);

    auto tuples = flatten_dataset(d);
    std::vector<int> order(tuples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::vector<int> hot_probes;

    ModelGrads grads = ModelGrads::zeros_like(model, gen);
    ModelGrads adam_m = ModelGrads::zeros_like(model, gen);
    ModelGrads adam_v = ModelGrads::zeros_like(model, gen);
    auto pspans = param_spans(model, gen);
    auto gspans = grad_spans(grads);
    auto mspans = grad_spans(adam_m);
    auto vspans = grad_spans(adam_v);
    long adam_step = 0;

    TrainResult out;
    out.log.epochs.reserve(cfg.epochs);
    double initial_total = -1.0;

    for (int ep = 0; ep < cfg.epochs; ++ep) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr =
            cfg.learning_rate * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(ep) / cfg.epochs));
        std::shuffle(order.begin(), order.end(), rng);

        TrainEpochRecord rec;
        rec.epoch = ep;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            std::vector<const DatasetTuple*> batch;
            batch.reserve(stop - start + cfg.hot_probes_per_batch);
            for (std::size_t i = start; i < stop; ++i) batch.push_back(tuples[order[i]]);

            // audit-flagged high-Jacobian tuples ride along as forced probes
            TrainConfig batch_cfg = cfg;
            batch_cfg.forced_probe_tail = 0;
            if (cfg.ablation != Ablation::NoContr && !hot_probes.empty()) {
                const int extra =
                    std::min<int>(cfg.hot_probes_per_batch, static_cast<int>(hot_probes.size()));
                std::uniform_int_distribution<std::size_t> pick_hot(0, hot_probes.size() - 1);
                for (int i = 0; i < extra; ++i) batch.push_back(tuples[hot_probes[pick_hot(rng)]]);
                batch_cfg.forced_probe_tail = extra;
            }

            grads.set_zero();
            LossBreakdown l = total_loss(model, gen, batch, batch_cfg, rng, &grads);
            rec.l_pred += l.pred;
            rec.l_contr += l.contr;
            rec.l_recon += l.recon;

            ++adam_step;
            const double gscale = 1.0 / static_cast<double>(batch.size());
            const double corr1 = 1.0 - std::pow(cfg.adam_beta1, adam_step);
            const double corr2 = 1.0 - std::pow(cfg.adam_beta2, adam_step);
            for (std::size_t t = 0; t < pspans.size(); ++t) {
                double* theta = pspans[t].first;
                double* grad = gspans[t].first;
                double* mm = mspans[t].first;
                double* vv = vspans[t].first;
                for (std::size_t i = 0; i < pspans[t].second; ++i) {
                    const double g = grad[i] * gscale;
                    mm[i] = cfg.adam_beta1 * mm[i] + (1.0 - cfg.adam_beta1) * g;
                    vv[i] = cfg.adam_beta2 * vv[i] + (1.0 - cfg.adam_beta2) * g * g;
                    theta[i] -= lr * (mm[i] / corr1) / (std::sqrt(vv[i] / corr2) + cfg.adam_eps);
                }
            }
        }

        rec.max_specnorm_A = max_operator_norm_on_grid(model, gen, cfg.audit_grid);
        if (cfg.audit_jac_samples > 0) {
            std::uniform_int_distribution<std::size_t> pick(0, tuples.size() - 1);
            for (int i = 0; i < cfg.audit_jac_samples; ++i) {
                const std::size_t idx = pick(rng);
                const DatasetTuple& t = *tuples[idx];
                const Eigen::VectorXd z = encode(model, t.x, t.e);
                const double sigma = residual_jacobian_norm(model, z, t.u, t.e).value;
                rec.max_jac_norm = std::max(rec.max_jac_norm, sigma);
                if (sigma > model.cfg.beta && cfg.ablation != Ablation::NoContr)
                    hot_probes.push_back(static_cast<int>(idx));
            }
            if (static_cast<int>(hot_probes.size()) > cfg.hot_probe_capacity)
                hot_probes.erase(hot_probes.begin(),
                                 hot_probes.end() - cfg.hot_probe_capacity);
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.log.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec, model, gen);

        const double total = rec.l_pred + (cfg.ablation == Ablation::NoContr ? 0.0 : cfg.lambda_c) * rec.l_contr +
                             cfg.lambda_r * rec.l_recon;
        if (initial_total < 0.0) initial_total = total;
        if (!std::isfinite(total) || total > cfg.divergence_factor * std::max(initial_total, 1e-12))
            throw std::runtime_error("train: diverged at epoch " + std::to_string(ep) +
                                     " (loss " + std::to_string(total) + ")");
    }

    out.model = std::move(model);
    out.gen = std::move(gen);
    return out;
}

}  // namespace

TrainResult train(const Dataset& d, const SfkdModelConfig& mcfg, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
    SfkdModelConfig model_cfg = mcfg;
    if (cfg.ablation == Ablation::NoFiber) model_cfg.fiber_conditioning = false;
    std::mt19937_64 rng(cfg.seed);
    SfkdModel model = SfkdModel::make(model_cfg, rng);
    return train_core(d, std::move(model), std::move(rng), cfg, on_epoch);
}

TrainResult train_from(const Dataset& d, SfkdModel initial, const TrainConfig& cfg,
                       const EpochCallback& on_epoch) {
    if (cfg.ablation == Ablation::NoFiber) initial.cfg.fiber_conditioning = false;
    return train_core(d, std::move(initial), std::mt19937_64(cfg.seed), cfg, on_epoch);
}

}  // namespace sfkd
