#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "perlcf/neuralnet.hpp"
#include "perlcf/physics.hpp"

namespace perlcf {

enum class Variant { physics, nn, pinn, perl };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);
bool uses_physics(Variant v);
bool uses_network(Variant v);

struct TrainConfig {
    Variant variant = Variant::perl;
    std::size_t max_epochs = 200;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t patience = 20;  // epochs without validation improvement
    double mu = 0.5;            // PINN data-term weight
    double delta = 0.1;         // s, for speed reconstruction
    std::uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double mse_a_val = 0.0;
    double mse_v_val = 0.0;
};

struct TestMetrics {
    double mse_a = 0.0;
    double mse_v = 0.0;
};

struct TrainReport {
    Variant variant = Variant::nn;
    TrainConfig config;
    NetConfig net_config;
    std::optional<PhysicsParams> physics;
    std::vector<EpochRecord> per_epoch;
    std::size_t best_epoch = 0;
    bool early_stopped = false;
    std::optional<TestMetrics> test;
};

void to_json(nlohmann::json& j, const TrainReport& r);
void from_json(const nlohmann::json& j, TrainReport& r);

struct TrainResult {
    RecurrentNet net;
    TrainReport report;
};

// v_j = v0 + delta * (a_1 + ... + a_j) for the future steps j = 1..T^f.
std::vector<double> reconstruct_speed(double v0, std::span<const double> accel, double delta);

// Per-sample PINN loss mu*mean((f-g)^2) + (1-mu)*mean((f-f_phy)^2).
double pinn_loss(std::span<const double> f, std::span<const double> g, std::span<const double> f_phy, double mu);

// Ground truth minus the physics rollout, per sample and future step.
std::vector<std::vector<double>> make_residual_targets(std::span<const TrajectorySample> samples,
                                                       const PhysicsParams& params, double delta);

/// Adam on the batch-mean squared error against the ego's future
/// accelerations; validation MSE is tracked every epoch and the best-epoch
/// weights are restored on return.
TrainResult train_nn(std::span<const TrajectorySample> samples, const SplitIndex& split,
                     const TrainConfig& config, const NetConfig& net_config);

/// Same loop with per-sample loss mu*(f-g)^2 + (1-mu)*(f-f_phy)^2, both terms
/// averaged over the horizon. Physics parameters stay frozen.
TrainResult train_pinn(std::span<const TrajectorySample> samples, const SplitIndex& split,
                       const TrainConfig& config, const NetConfig& net_config, const PhysicsParams& physics);

/// The network learns the physics residual; validation metrics are computed
/// on the composed prediction physics + residual.
TrainResult train_perl(std::span<const TrajectorySample> samples, const SplitIndex& split,
                       const TrainConfig& config, const NetConfig& net_config, const PhysicsParams& physics);

// Dispatches on config.variant. The physics variant trains nothing and
// returns an empty net with a report carrying only the parameters.
TrainResult train_variant(std::span<const TrajectorySample> samples, const SplitIndex& split,
                          const TrainConfig& config, const NetConfig& net_config,
                          const std::optional<PhysicsParams>& physics);

// Network sizes for samples of this shape (input 3K, output T^f).
NetConfig net_config_for(const NetConfig& base, const TrajectorySample& shape);

struct PredictorArtifacts {
    std::optional<PhysicsParams> physics;
    std::optional<RecurrentNet> net;
    double delta = 0.1;
};

struct PredictionRecord {
    std::int64_t sample_id = 0;
    std::vector<double> predicted_accel;
    std::vector<double> predicted_speed;
    std::vector<double> physics_component;   // PERL only
    std::vector<double> residual_component;  // PERL only
    bool collision = false;                  // physics rollout floored the gap
};

void to_json(nlohmann::json& j, const PredictionRecord& r);
void from_json(const nlohmann::json& j, PredictionRecord& r);

PredictionRecord predict(Variant variant, const TrajectorySample& sample, const PredictorArtifacts& artifacts);

std::vector<PredictionRecord> predict_all(Variant variant, std::span<const TrajectorySample> samples,
                                          const PredictorArtifacts& artifacts);

// JSON-lines records file: header {format_version, variant, delta} then one
// record per line.
void write_records(std::span<const PredictionRecord> records, Variant variant, double delta,
                   const std::filesystem::path& path);
std::vector<PredictionRecord> read_records(const std::filesystem::path& path, Variant* variant = nullptr);

}  // namespace perlcf
