#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "sfkd/koopman.hpp"
#include "sfkd/model.hpp"
#include "sfkd/vehicle_sim.hpp"

namespace sfkd {

enum class Ablation { Full, NoFiber, NoContr };

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);

struct TrainConfig {
    double lambda_c = 25.0;  // contraction penalty weight
    double lambda_r = 2.0;   // reconstruction weight
    double mu_reg = 1e-3;    // ridge weight for the warm start
    double learning_rate = 2e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int epochs = 150;
    int batch_size = 256;
    int contraction_samples = 16;  // penalty evaluation points per batch
    // batch entries at the tail that are always probed (the training loop
    // appends audit-flagged high-Jacobian tuples there)
    int forced_probe_tail = 0;
    int hot_probe_capacity = 128;  // retained audit-flagged tuples
    int hot_probes_per_batch = 8;
    Ablation ablation = Ablation::Full;
    std::uint64_t seed = 1;
    double divergence_factor = 1e6;
    int audit_grid = 9;           // env grid for the per-epoch spectral audit
    int audit_jac_samples = 128;  // residual Jacobian audit points per epoch
};

struct LossBreakdown {
    double total = 0.0;
    double pred = 0.0;
    double contr = 0.0;  // unweighted hinge^2 sum
    double recon = 0.0;  // unweighted reconstruction sum
};

struct OperatorGenGrads {
    Eigen::MatrixXd dWA, dWB;
    Eigen::VectorXd dbA, dbB;

    static OperatorGenGrads zeros_like(const OperatorGen& g);
    void set_zero();
};

struct ModelGrads {
    MlpGrads psi, enc, dec, res;
    OperatorGenGrads gen;

    static ModelGrads zeros_like(const SfkdModel& m, const OperatorGen& g);
    void set_zero();
};

/// Composite loss over a batch of chained tuples:
///   pred  = sum ||z' - A(e) z - B(e) u - r(z, u, e)||^2
///   contr = sum over sampled points of max(0, ||dr/dz||_2 - beta)^2
///   recon = sum ||f(x) - decoder(z)||^2   (state feature space)
/// with z = encode(x, e) and z' = encode(x_next, e); gradients flow through
/// every occurrence of the encoder, the embedding, the residual, and the
/// spectral projection of A. Contraction points are drawn from the batch
/// with `rng`. Throws on a non-finite loss, naming the offending component.
LossBreakdown total_loss(const SfkdModel& m, const OperatorGen& g,
                         const std::vector<const DatasetTuple*>& batch, const TrainConfig& cfg,
                         std::mt19937_64& rng, ModelGrads* grads);

/// Worst relative error between the analytic gradient of total_loss and a
/// central finite difference, over every trainable parameter.
double gradient_check(SfkdModel& m, OperatorGen& g, const std::vector<const DatasetTuple*>& batch,
                      const TrainConfig& cfg, double step);

struct TrainEpochRecord {
    int epoch = 0;
    double l_pred = 0.0, l_contr = 0.0, l_recon = 0.0;
    double max_specnorm_A = 0.0;  // over the audit env grid, dense SVD
    double max_jac_norm = 0.0;    // over sampled residual Jacobians
    double seconds = 0.0;
};

struct TrainLog {
    std::vector<TrainEpochRecord> epochs;
};

void save_train_log_csv(const TrainLog& log, const std::string& path);

struct TrainResult {
    SfkdModel model;
    OperatorGen gen;
    TrainLog log;
};

using EpochCallback = std::function<void(const TrainEpochRecord&, const SfkdModel&, const OperatorGen&)>;

/// Joint minibatch training with momentum and a cosine learning-rate decay,
/// warm-started by ridge identification. Deterministic given cfg.seed.
/// Throws std::runtime_error if the loss exceeds divergence_factor times
/// its initial value.
TrainResult train(const Dataset& d, const SfkdModelConfig& mcfg, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = nullptr);

/// Same loop starting from a caller-supplied model instead of a fresh
/// random initialization.
TrainResult train_from(const Dataset& d, SfkdModel initial, const TrainConfig& cfg,
                       const EpochCallback& on_epoch = nullptr);

/// Spectral-norm audit: max ||A(e)||_2 (dense SVD) over an n x n grid of
/// the environment box.
double max_operator_norm_on_grid(const SfkdModel& m, const OperatorGen& g, int n);

std::vector<const DatasetTuple*> flatten_dataset(const Dataset& d);

}  // namespace sfkd
