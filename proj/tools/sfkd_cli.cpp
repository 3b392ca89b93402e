// Command-line front end: dataset generation, training, certification,
// closed-loop evaluation, metrics, disturbance sweeps, and trace export.
#include <filesystem>
#include <iostream>
#include <map>
#include <thread>

#include "CLI11.hpp"
#include "sfkd/checkpoint.hpp"
#include "sfkd/csv.hpp"
#include "sfkd/harness.hpp"

namespace fs = std::filesystem;
using namespace sfkd;

namespace {

KeyValueConfig maybe_config(const std::string& path) {
    if (path.empty()) return {};
    return load_key_value_config(path);
}

DatasetConfig dataset_config(const KeyValueConfig& kv, bool paper_scale) {
    DatasetConfig cfg;
    cfg.segments = paper_scale ? 8000 : 200;
    cfg.segment_length = 50;
    cfg.segments = static_cast<int>(kv.get_long("dataset.segments", cfg.segments));
    cfg.segment_length = static_cast<int>(kv.get_long("dataset.segment_length", cfg.segment_length));
    cfg.dt = kv.get_double("dataset.dt", cfg.dt);
    cfg.v_min = kv.get_double("dataset.v_min", cfg.v_min);
    cfg.v_max = kv.get_double("dataset.v_max", cfg.v_max);
    cfg.init_pos_range = kv.get_double("dataset.init_pos_range", cfg.init_pos_range);
    const std::string mix = kv.get("dataset.scenarios", "S1+S2");
    cfg.scenario_mix.clear();
    std::string token;
    for (char c : mix + "+") {
        if (c == '+' || c == ',') {
            if (!token.empty()) cfg.scenario_mix.push_back(scenario_from_string(token));
            token.clear();
        } else {
            token.push_back(c);
        }
    }
    return cfg;
}

SfkdModelConfig model_config(const KeyValueConfig& kv) {
    SfkdModelConfig cfg;
    cfg.r = static_cast<int>(kv.get_long("model.r", cfg.r));
    cfg.d_e = static_cast<int>(kv.get_long("model.d_e", cfg.d_e));
    cfg.beta = kv.get_double("model.beta", cfg.beta);
    cfg.eps0 = kv.get_double("model.eps0", cfg.eps0);
    return cfg;
}

TrainConfig train_config(const KeyValueConfig& kv) {
    TrainConfig cfg;
    cfg.lambda_c = kv.get_double("train.lambda_c", cfg.lambda_c);
    cfg.lambda_r = kv.get_double("train.lambda_r", cfg.lambda_r);
    cfg.mu_reg = kv.get_double("train.mu_reg", cfg.mu_reg);
    cfg.learning_rate = kv.get_double("train.learning_rate", cfg.learning_rate);
    cfg.epochs = static_cast<int>(kv.get_long("train.epochs", cfg.epochs));
    cfg.batch_size = static_cast<int>(kv.get_long("train.batch_size", cfg.batch_size));
    cfg.contraction_samples =
        static_cast<int>(kv.get_long("train.contraction_samples", cfg.contraction_samples));
    return cfg;
}

EvalConfig eval_config(const KeyValueConfig& kv, bool paper_scale) {
    EvalConfig cfg;
    cfg.mppi.rollouts = paper_scale ? 1500 : 512;
    cfg.mppi.rollouts = static_cast<int>(kv.get_long("mppi.rollouts", cfg.mppi.rollouts));
    cfg.mppi.horizon = static_cast<int>(kv.get_long("mppi.horizon", cfg.mppi.horizon));
    cfg.mppi.lambda_temp = kv.get_double("mppi.lambda_temp", cfg.mppi.lambda_temp);
    cfg.mppi.lambda_latent = kv.get_double("mppi.lambda_latent", cfg.mppi.lambda_latent);
    cfg.mppi.w_lat = kv.get_double("mppi.w_lat", cfg.mppi.w_lat);
    cfg.mppi.w_head = kv.get_double("mppi.w_head", cfg.mppi.w_head);
    cfg.mppi.w_u = kv.get_double("mppi.w_u", cfg.mppi.w_u);
    cfg.mppi.terminal_scale = kv.get_double("mppi.terminal_scale", cfg.mppi.terminal_scale);
    cfg.mppi.sigma_u(0) = kv.get_double("mppi.sigma_delta", cfg.mppi.sigma_u(0));
    cfg.mppi.sigma_u(1) = kv.get_double("mppi.sigma_a", cfg.mppi.sigma_u(1));
    cfg.path.speed = kv.get_double("path.speed", cfg.path.speed);
    cfg.path.amplitude = kv.get_double("path.amplitude", cfg.path.amplitude);
    cfg.path.period = kv.get_double("path.period", cfg.path.period);
    cfg.duration = kv.get_double("eval.duration", cfg.duration);
    cfg.latent_resync_window =
        static_cast<int>(kv.get_long("eval.resync_window", cfg.latent_resync_window));
    return cfg;
}

int threads_flag(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stable fiber-Koopman residual dynamics toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 1;
    bool paper_scale = false;
    app.add_option("--config", config_path, "key=value configuration file");
    app.add_option("--seed", seed, "master random seed")->capture_default_str();
    app.add_flag("--paper-scale", paper_scale,
                 "full-scale sizes (8000 segments, 1500 rollouts, 200 episodes)");

    auto* gen_cmd = app.add_subcommand("generate", "simulate a training dataset");
    std::string gen_out = "dataset.csv";
    gen_cmd->add_option("--out", gen_out, "output CSV")->capture_default_str();

    auto* train_cmd = app.add_subcommand("train", "train a model on a dataset");
    std::string train_data, train_out = "checkpoint.txt", train_log_path, ablation_name = "full";
    train_cmd->add_option("--data", train_data, "dataset CSV")->required();
    train_cmd->add_option("--out", train_out, "checkpoint file")->capture_default_str();
    train_cmd->add_option("--log", train_log_path, "training log CSV");
    train_cmd->add_option("--ablation", ablation_name, "full | no-fiber | no-contr")
        ->capture_default_str();

    auto* cert_cmd = app.add_subcommand("certify", "estimate dbar and emit the certificate");
    std::string cert_ckpt, cert_data, cert_txt = "certificate.txt", cert_csv = "certificate.csv";
    std::string dump_ops;
    double dump_mu = 0.9, dump_w = 0.0, quantile = 0.995;
    int grid_n = 9;
    cert_cmd->add_option("--checkpoint", cert_ckpt)->required();
    cert_cmd->add_option("--data", cert_data, "held-out dataset CSV for the dbar estimate")
        ->required();
    cert_cmd->add_option("--out-txt", cert_txt)->capture_default_str();
    cert_cmd->add_option("--out-csv", cert_csv)->capture_default_str();
    cert_cmd->add_option("--grid", grid_n, "environment grid resolution")->capture_default_str();
    cert_cmd->add_option("--quantile", quantile, "dbar quantile")->capture_default_str();
    cert_cmd->add_option("--dump-operators", dump_ops, "write A(e), B(e) for --env-mu/--env-w");
    cert_cmd->add_option("--env-mu", dump_mu)->capture_default_str();
    cert_cmd->add_option("--env-w", dump_w)->capture_default_str();

    auto* eval_cmd = app.add_subcommand("evaluate", "closed-loop scenario episodes");
    std::string eval_ckpt, eval_cert, eval_scenario = "S1", eval_dir = ".";
    int eval_episodes = 0, eval_threads = 0;
    eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
    eval_cmd->add_option("--cert", eval_cert, "certificate txt (for the violation threshold)")
        ->required();
    eval_cmd->add_option("--scenario", eval_scenario, "S1 | S2 | S3")->capture_default_str();
    eval_cmd->add_option("--episodes", eval_episodes, "episode count (0 = scale default)");
    eval_cmd->add_option("--out-dir", eval_dir)->capture_default_str();
    eval_cmd->add_option("--threads", eval_threads, "worker threads (0 = all cores)");

    auto* met_cmd = app.add_subcommand("metrics", "aggregate episode logs into a metrics table");
    std::string met_method = "sfkd", met_out = "metrics.csv";
    std::vector<std::string> met_files;
    met_cmd->add_option("--method", met_method)->capture_default_str();
    met_cmd->add_option("--out", met_out)->capture_default_str();
    met_cmd->add_option("files", met_files, "episode CSVs")->required();

    auto* sweep_cmd = app.add_subcommand("sweep-dbar", "violation rate vs disturbance magnitude");
    std::string sweep_ckpt, sweep_cert, sweep_data, sweep_out = "sweep.csv";
    int sweep_points = 11;
    double sweep_max = 0.5;
    sweep_cmd->add_option("--checkpoint", sweep_ckpt)->required();
    sweep_cmd->add_option("--cert", sweep_cert)->required();
    sweep_cmd->add_option("--data", sweep_data, "held-out rollout segments CSV")->required();
    sweep_cmd->add_option("--out", sweep_out)->capture_default_str();
    sweep_cmd->add_option("--points", sweep_points)->capture_default_str();
    sweep_cmd->add_option("--max-mag", sweep_max, "largest injected magnitude")
        ->capture_default_str();

    auto* trace_cmd = app.add_subcommand("trace", "per-step lateral deviation of several models");
    std::vector<std::string> trace_models;  // label=checkpoint:cert
    std::string trace_scenario = "S3", trace_out = "trace.csv";
    trace_cmd->add_option("--model", trace_models, "label=checkpoint.txt:certificate.txt")
        ->required();
    trace_cmd->add_option("--scenario", trace_scenario)->capture_default_str();
    trace_cmd->add_option("--out", trace_out)->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        const KeyValueConfig kv = maybe_config(config_path);

        if (*gen_cmd) {
            const DatasetConfig cfg = dataset_config(kv, paper_scale);
            const Dataset d = generate_dataset(cfg, seed);
            save_dataset_csv(d, gen_out);
            std::cout << "wrote " << dataset_tuple_count(d) << " tuples ("
                      << d.segments.size() << " segments) to " << gen_out << "\n";
        }

        if (*train_cmd) {
            const Dataset d = load_dataset_csv(train_data);
            TrainConfig cfg = train_config(kv);
            cfg.seed = seed;
            cfg.ablation = ablation_from_string(ablation_name);
            const TrainResult res = train(d, model_config(kv), cfg);
            save_checkpoint({res.model, res.gen}, train_out);
            if (!train_log_path.empty()) save_train_log_csv(res.log, train_log_path);
            const auto& last = res.log.epochs.back();
            std::cout << "trained " << ablation_name << ": pred " << last.l_pred << ", recon "
                      << last.l_recon << ", max |A| " << last.max_specnorm_A << ", max |dr/dz| "
                      << last.max_jac_norm << "\n"
                      << "checkpoint " << train_out << "\n";
        }

        if (*cert_cmd) {
            const Checkpoint ck = load_checkpoint(cert_ckpt);
            const Dataset held = load_dataset_csv(cert_data);
            const ResidualBoundEstimate est = estimate_dbar(ck.model, ck.gen, held, quantile);
            const std::vector<EnvInput> grid = make_env_grid(grid_n, scenario_env_levels());
            const IssCertificate cert = certify(ck.gen, ck.model, grid, est.dbar);
            save_certificate(cert, ck.gen, ck.model, grid, cert_txt, cert_csv);
            std::cout << "alpha " << cert.alpha << ", dbar " << cert.dbar << " ("
                      << est.sample_count << " samples, " << est.above_dbar
                      << " above), ultimate bound " << ultimate_bound(cert) << "\n"
                      << "envelope rho0 " << est.rho0 << ", eta " << est.eta_max << "\n";
            if (!dump_ops.empty()) {
                const EnvInput e{dump_mu, dump_w};
                const OperatorEval ev =
                    eval_operators(ck.gen, embed_env(ck.model, e), ck.model.cfg.spec_bound());
                CsvWriter w(dump_ops);
                w.comment("operators at mu=" + fmt_double(e.mu) + " w=" + fmt_double(e.w));
                w.header({"matrix", "row", "col", "value"});
                for (int i = 0; i < ev.A.rows(); ++i)
                    for (int j = 0; j < ev.A.cols(); ++j)
                        w.row({"A", std::to_string(i), std::to_string(j), fmt_double(ev.A(i, j))});
                for (int i = 0; i < ev.B.rows(); ++i)
                    for (int j = 0; j < ev.B.cols(); ++j)
                        w.row({"B", std::to_string(i), std::to_string(j), fmt_double(ev.B(i, j))});
                w.close();
                std::cout << "operators written to " << dump_ops << "\n";
            }
        }

        if (*eval_cmd) {
            const Checkpoint ck = load_checkpoint(eval_ckpt);
            const IssCertificate cert = load_certificate_txt(eval_cert);
            EvalConfig cfg = eval_config(kv, paper_scale);
            const int episodes = eval_episodes > 0 ? eval_episodes : (paper_scale ? 200 : 20);
            const Scenario sc = make_scenario(scenario_from_string(eval_scenario), cfg.duration);
            const auto logs = run_episode_batch(sc, ck.model, ck.gen, cert, cfg, seed, episodes,
                                                threads_flag(eval_threads));
            fs::create_directories(eval_dir);
            int failures = 0;
            for (const auto& log : logs) {
                EpisodeLog tagged = log;
                tagged.checkpoint_id = fs::path(eval_ckpt).filename().string();
                save_episode_csv(tagged, (fs::path(eval_dir) /
                                          ("episode_" + eval_scenario + "_" +
                                           std::to_string(log.seed) + ".csv"))
                                             .string());
                failures += log.failed ? 1 : 0;
            }
            std::cout << "wrote " << logs.size() << " episodes (" << failures << " failed) to "
                      << eval_dir << "\n";
        }

        if (*met_cmd) {
            std::map<ScenarioId, std::vector<EpisodeLog>> by_scenario;
            for (const auto& f : met_files) {
                EpisodeLog log = load_episode_csv(f);
                by_scenario[log.scenario].push_back(std::move(log));
            }
            std::vector<MetricsRow> rows;
            for (const auto& [sc, logs] : by_scenario)
                rows.push_back(compute_metrics(logs, met_method));
            save_metrics_csv(rows, met_out);
            for (const auto& r : rows)
                std::cout << r.method << " " << to_string(r.scenario) << ": rmse " << r.rmse_mean
                          << " +- " << r.rmse_std << ", smooth " << r.smoothness << ", viol "
                          << r.violation_rate << " (" << r.episodes << " episodes, " << r.failures
                          << " failed)\n";
        }

        if (*sweep_cmd) {
            const Checkpoint ck = load_checkpoint(sweep_ckpt);
            const IssCertificate cert = load_certificate_txt(sweep_cert);
            const Dataset held = load_dataset_csv(sweep_data);
            std::vector<double> mags;
            for (int i = 0; i < sweep_points; ++i)
                mags.push_back(sweep_max * i / std::max(1, sweep_points - 1));
            const auto points = sweep_dbar(ck.model, ck.gen, cert, held, mags, seed);
            save_sweep_csv(points, sweep_out);
            std::cout << "wrote " << points.size() << " sweep points to " << sweep_out << "\n";
        }

        if (*trace_cmd) {
            std::vector<std::string> labels;
            std::vector<EpisodeLog> logs;
            EvalConfig cfg = eval_config(kv, paper_scale);
            const Scenario sc = make_scenario(scenario_from_string(trace_scenario), cfg.duration);
            for (const auto& spec_str : trace_models) {
                const auto eq = spec_str.find('=');
                const auto colon = spec_str.rfind(':');
                if (eq == std::string::npos || colon == std::string::npos || colon < eq)
                    throw std::runtime_error("--model expects label=checkpoint:certificate");
                const std::string label = spec_str.substr(0, eq);
                const std::string ckpt = spec_str.substr(eq + 1, colon - eq - 1);
                const std::string cert_path = spec_str.substr(colon + 1);
                const Checkpoint ck = load_checkpoint(ckpt);
                const IssCertificate cert = load_certificate_txt(cert_path);
                labels.push_back(label);
                logs.push_back(run_episode(sc, ck.model, ck.gen, cert, cfg, seed));
            }
            save_trace_csv(labels, logs, trace_out);
            std::cout << "wrote trace for " << labels.size() << " methods to " << trace_out << "\n";
        }
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
