#include "sfkd/harness.hpp"

#include <cmath>
#include <stdexcept>
#include <thread>

#include "sfkd/csv.hpp"

namespace sfkd {

EpisodeLog run_episode(const Scenario& scenario, const SfkdModel& m, const OperatorGen& g,
                       const IssCertificate& cert, const EvalConfig& cfg, std::uint64_t seed) {
    EpisodeLog log;
    log.scenario = scenario.id;
    log.seed = seed;
    log.dt = cfg.mppi.dt;

    const int steps = static_cast<int>(std::llround(cfg.duration / cfg.mppi.dt));
    log.steps.reserve(steps);

    const double delta_max = ultimate_bound(cert);
    const double bound_spec = m.cfg.spec_bound();

    ControllerState ctrl = ControllerState::init(cfg.mppi, seed);
    VehicleState x = reference_state(cfg.path, 0.0);

    // rolling open-loop model latent, re-anchored every resync window
    Eigen::VectorXd z_model;
    EnvInput env_prev{0.0, 0.0};
    VehicleState anchor;  // window frame: positions relative to this point
    auto in_window_frame = [&](VehicleState s) {
        s.px -= anchor.px;
        s.py -= anchor.py;
        return s;
    };

    for (int k = 0; k < steps; ++k) {
        const double t = k * cfg.mppi.dt;
        const EnvInput e = scenario_env(scenario, t);
        const VehicleState ref = reference_state(cfg.path, t);

        double latent_err = 0.0;
        if (cfg.latent_resync_window > 0 && k % cfg.latent_resync_window == 0) {
            anchor = ref;
            z_model = encode(m, in_window_frame(x), e);
            env_prev = e;
        } else {
            if (e.mu != env_prev.mu || e.w != env_prev.w) {
                z_model = transport(m, z_model, env_prev, e);
                env_prev = e;
            }
            latent_err = (encode(m, in_window_frame(x), e) - z_model).norm();
        }

        const ControlStepResult step = control_step(ctrl, m, g, x, e, cfg.path, t, cfg.mppi);
        if (!step.update_applied) {
            log.failed = true;
            break;
        }

        EpisodeStep row;
        row.t = t;
        row.x = x;
        row.ref = ref;
        row.u = step.u;
        row.e = e;
        row.latent_err = latent_err;
        row.bound = delta_max;
        row.min_cost = step.min_cost;
        row.mean_cost = step.mean_cost;
        row.ess = step.ess;
        log.steps.push_back(row);

        // advance the rolled latent with the applied control, then the truth
        const Eigen::VectorXd p = embed_env(m, e);
        const OperatorEval ev = eval_operators(g, p, bound_spec);
        z_model = ev.A * z_model + ev.B * Eigen::Vector2d(step.u.delta, step.u.a) +
                  mlp_apply(m.residual, residual_input(m, z_model, step.u, p));
        x = step_bicycle(x, step.u, e, cfg.mppi.dt);
    }
    return log;
}

std::vector<EpisodeLog> run_episode_batch(const Scenario& scenario, const SfkdModel& m,
                                          const OperatorGen& g, const IssCertificate& cert,
                                          const EvalConfig& cfg, std::uint64_t seed_base, int count,
                                          int threads) {
    std::vector<EpisodeLog> logs(count);
    if (threads < 1) threads = 1;
    std::vector<std::thread> pool;
    for (int tid = 0; tid < threads; ++tid) {
        pool.emplace_back([&, tid]() {
            for (int i = tid; i < count; i += threads)
                logs[i] = run_episode(scenario, m, g, cert, cfg, seed_base + i);
        });
    }
    for (auto& th : pool) th.join();
    return logs;
}

void save_episode_csv(const EpisodeLog& log, const std::string& path) {
    CsvWriter w(path);
    w.comment("scenario=" + to_string(log.scenario));
    w.comment("seed=" + std::to_string(log.seed));
    w.comment("checkpoint=" + log.checkpoint_id);
    w.comment("dt=" + fmt_double(log.dt));
    w.comment("failed=" + std::to_string(log.failed ? 1 : 0));
    w.header({"t", "px", "py", "psi", "v", "ref_px", "ref_py", "ref_psi", "ref_v", "delta", "a",
              "mu", "w", "latent_err", "bound", "min_cost", "mean_cost", "ess"});
    for (const auto& s : log.steps) {
        w.row({fmt_double(s.t), fmt_double(s.x.px), fmt_double(s.x.py), fmt_double(s.x.psi),
               fmt_double(s.x.v), fmt_double(s.ref.px), fmt_double(s.ref.py),
               fmt_double(s.ref.psi), fmt_double(s.ref.v), fmt_double(s.u.delta),
               fmt_double(s.u.a), fmt_double(s.e.mu), fmt_double(s.e.w), fmt_double(s.latent_err),
               fmt_double(s.bound), fmt_double(s.min_cost), fmt_double(s.mean_cost),
               fmt_double(s.ess)});
    }
    w.close();
}

EpisodeLog load_episode_csv(const std::string& path) {
    EpisodeLog log;
    {
        std::ifstream in(path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] != '#') break;
            const std::string body = line.substr(2);
            const auto eq = body.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = body.substr(0, eq), val = body.substr(eq + 1);
            if (key == "scenario") log.scenario = scenario_from_string(val);
            else if (key == "seed") log.seed = static_cast<std::uint64_t>(parse_long(val));
            else if (key == "checkpoint") log.checkpoint_id = val;
            else if (key == "dt") log.dt = parse_double(val);
            else if (key == "failed") log.failed = parse_long(val) != 0;
        }
    }
    CsvTable t = read_csv(path);
    auto c = [&](const char* n) { return t.col(n); };
    const int ct = c("t"), cpx = c("px"), cpy = c("py"), cpsi = c("psi"), cv = c("v");
    const int crx = c("ref_px"), cry = c("ref_py"), crpsi = c("ref_psi"), crv = c("ref_v");
    const int cd = c("delta"), ca = c("a"), cmu = c("mu"), cw = c("w");
    const int cle = c("latent_err"), cb = c("bound");
    const int cmin = c("min_cost"), cmean = c("mean_cost"), cess = c("ess");
    for (const auto& row : t.rows) {
        EpisodeStep s;
        s.t = parse_double(row[ct]);
        s.x = {parse_double(row[cpx]), parse_double(row[cpy]), parse_double(row[cpsi]),
               parse_double(row[cv])};
        s.ref = {parse_double(row[crx]), parse_double(row[cry]), parse_double(row[crpsi]),
                 parse_double(row[crv])};
        s.u = {parse_double(row[cd]), parse_double(row[ca])};
        s.e = {parse_double(row[cmu]), parse_double(row[cw])};
        s.latent_err = parse_double(row[cle]);
        s.bound = parse_double(row[cb]);
        s.min_cost = parse_double(row[cmin]);
        s.mean_cost = parse_double(row[cmean]);
        s.ess = parse_double(row[cess]);
        log.steps.push_back(s);
    }
    return log;
}

MetricsRow compute_metrics(const std::vector<EpisodeLog>& logs, const std::string& method) {
    if (logs.empty()) throw std::invalid_argument("compute_metrics: no logs");
    MetricsRow row;
    row.method = method;
    row.scenario = logs.front().scenario;

    std::vector<double> rmse;
    std::vector<double> latent_errs;
    double bound = 0.0;
    double abs_delta_rate_sum = 0.0;
    std::size_t rate_count = 0;

    for (const auto& log : logs) {
        if (log.scenario != row.scenario)
            throw std::invalid_argument("compute_metrics: mixed scenarios");
        if (log.failed) {
            ++row.failures;
            continue;
        }
        double sq = 0.0;
        for (std::size_t k = 0; k < log.steps.size(); ++k) {
            const auto& s = log.steps[k];
            const double lat = lateral_offset(s.x, s.ref);
            sq += lat * lat;
            latent_errs.push_back(s.latent_err);
            bound = s.bound;
            if (k > 0) {
                abs_delta_rate_sum += std::abs(s.u.delta - log.steps[k - 1].u.delta) / log.dt;
                ++rate_count;
            }
        }
        rmse.push_back(std::sqrt(sq / static_cast<double>(log.steps.size())));
        ++row.episodes;
    }
    if (row.episodes == 0) throw std::runtime_error("compute_metrics: every episode failed");

    double mean = 0.0;
    for (double v : rmse) mean += v;
    mean /= rmse.size();
    double var = 0.0;
    for (double v : rmse) var += (v - mean) * (v - mean);
    row.rmse_mean = mean;
    row.rmse_std = rmse.size() > 1 ? std::sqrt(var / (rmse.size() - 1)) : 0.0;
    row.smoothness = rate_count ? abs_delta_rate_sum / static_cast<double>(rate_count) : 0.0;
    row.violation_rate = violation_rate(latent_errs, bound);
    return row;
}

void save_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
    CsvWriter w(path);
    w.header({"method", "scenario", "rmse_mean", "rmse_std", "smoothness", "violation_rate",
              "episodes", "failures"});
    for (const auto& r : rows) {
        w.row({r.method, to_string(r.scenario), fmt_double(r.rmse_mean), fmt_double(r.rmse_std),
               fmt_double(r.smoothness), fmt_double(r.violation_rate), std::to_string(r.episodes),
               std::to_string(r.failures)});
    }
    w.close();
}

std::vector<SweepPoint> sweep_dbar(const SfkdModel& m, const OperatorGen& g,
                                   const IssCertificate& cert, const Dataset& rollouts,
                                   const std::vector<double>& magnitudes, std::uint64_t seed) {
    std::vector<SweepPoint> out;
    out.reserve(magnitudes.size());
    const double bound_spec = m.cfg.spec_bound();
    const int r = m.cfg.r;

    for (std::size_t pi = 0; pi < magnitudes.size(); ++pi) {
        const double mag = magnitudes[pi];
        IssCertificate cert_point = cert;
        cert_point.dbar = cert.dbar + mag;
        const double threshold = ultimate_bound(cert_point);

        std::mt19937_64 rng(seed + pi);
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::vector<double> errs;

        for (const auto& seg : rollouts.segments) {
            if (seg.tuples.empty()) continue;
            EnvInput env_prev = seg.tuples[0].e;
            Eigen::VectorXd z_model = encode(m, seg.tuples[0].x, env_prev);
            for (const auto& t : seg.tuples) {
                if (t.e.mu != env_prev.mu || t.e.w != env_prev.w) {
                    z_model = transport(m, z_model, env_prev, t.e);
                    env_prev = t.e;
                }
                const Eigen::VectorXd p = embed_env(m, t.e);
                const OperatorEval ev = eval_operators(g, p, bound_spec);

                Eigen::VectorXd noise(r);
                for (int i = 0; i < r; ++i) noise(i) = gauss(rng);
                const double nn = noise.norm();
                if (nn > 0.0) noise *= mag / nn;

                z_model = ev.A * z_model + ev.B * Eigen::Vector2d(t.u.delta, t.u.a) +
                          mlp_apply(m.residual, residual_input(m, z_model, t.u, p)) + noise;
                errs.push_back((encode(m, t.x_next, t.e) - z_model).norm());
            }
        }
        out.push_back({cert_point.dbar, violation_rate(errs, threshold), threshold});
    }
    return out;
}

void save_sweep_csv(const std::vector<SweepPoint>& points, const std::string& path) {
    CsvWriter w(path);
    w.header({"dbar", "violation_rate", "iss_bound"});
    for (const auto& p : points)
        w.row({fmt_double(p.dbar), fmt_double(p.violation_rate), fmt_double(p.iss_bound)});
    w.close();
}

void save_trace_csv(const std::vector<std::string>& methods, const std::vector<EpisodeLog>& logs,
                    const std::string& path) {
    if (methods.size() != logs.size() || logs.empty())
        throw std::invalid_argument("save_trace_csv: one log per method required");
    const std::size_t n = logs.front().steps.size();
    for (const auto& log : logs)
        if (log.steps.size() != n) throw std::invalid_argument("save_trace_csv: length mismatch");
    CsvWriter w(path);
    std::vector<std::string> header = {"t"};
    for (const auto& name : methods) header.push_back(name);
    w.header(header);
    for (std::size_t k = 0; k < n; ++k) {
        std::vector<std::string> row = {fmt_double(logs.front().steps[k].t)};
        for (const auto& log : logs) {
            const auto& s = log.steps[k];
            row.push_back(fmt_double(std::abs(lateral_offset(s.x, s.ref))));
        }
        w.row(row);
    }
    w.close();
}

}  // namespace sfkd
