#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "perlcf/calibrate.hpp"
#include "perlcf/predictors.hpp"

namespace perlcf {

struct SampleError {
    std::int64_t sample_id = 0;
    double mse_a = 0.0;
    double mse_v = 0.0;
};

struct MseResult {
    double mse_a = 0.0;  // m^2/s^4
    double mse_v = 0.0;  // m^2/s^2
    std::vector<SampleError> per_sample;  // in record order
};

/// Means over all samples and horizon steps. The speed truth is rebuilt from
/// the true accelerations with reconstruct_speed, so MSE^v only reflects
/// acceleration error. Records and samples must carry the same id set.
MseResult mse_metrics(std::span<const PredictionRecord> records, std::span<const TrajectorySample> truth,
                      double delta);

struct EvalReport {
    Variant variant = Variant::nn;
    std::size_t data_size = 0;
    std::uint64_t seed = 0;
    double mse_a_test = 0.0;
    double mse_v_test = 0.0;
    std::vector<SampleError> per_sample;
    std::size_t collision_count = 0;
    std::optional<TrainReport> train;  // absent when only records were evaluated
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

EvalReport evaluate_records(Variant variant, std::span<const PredictionRecord> records,
                            std::span<const TrajectorySample> truth, double delta);

struct SweepConfig {
    std::vector<std::size_t> data_sizes{300, 500, 1000, 2000, 5000, 10000, 12000};
    std::vector<Variant> variants{Variant::physics, Variant::nn, Variant::pinn, Variant::perl};
    PhysicsModel model = PhysicsModel::idm;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    DatasetConfig dataset;
    NetConfig net;
    TrainConfig train;
    CalibrationConfig calibration;
    std::size_t jobs = 1;

    void validate() const;
};

void to_json(nlohmann::json& j, const SweepConfig& c);
void from_json(const nlohmann::json& j, SweepConfig& c);

struct SweepCell {
    Variant variant = Variant::nn;
    std::size_t data_size = 0;
    std::uint64_t seed = 0;
    std::optional<EvalReport> report;
    std::string error;  // non-empty when the cell failed
};

struct SweepResult {
    SplitIndex split;                         // the fixed full split
    std::vector<SweepCell> cells;             // ordered by (size, variant, seed)
    std::vector<CalibrationReport> calibrations;  // one per size, over seeds
    std::size_t failures() const;
};

// The size-n training subset for a seed: the first n ids of a seeded
// permutation of the train split, sorted. Smaller sizes are prefixes.
std::vector<std::int64_t> nested_subset(std::span<const std::int64_t> train_ids, std::size_t n,
                                        std::uint64_t seed);

/// For every (size, seed): calibrate on the nested subset, then train and
/// test each variant on the fixed test split. Cell failures are recorded and
/// the sweep continues.
SweepResult run_sweep(std::span<const TrajectorySample> samples, const SweepConfig& config);

// sweep/<variant>/<size>/<seed>/report.json, aggregate.{csv,json},
// calibration/<size>.json and the plot data. Returns the files written.
std::vector<std::filesystem::path> write_sweep(const SweepResult& result, const std::filesystem::path& dir);

struct SummaryRow {
    std::string variant;
    std::size_t data_size = 0;
    std::uint64_t seed = 0;
    std::string metric;
    double value = 0.0;
};

struct ConvergenceRow {
    std::string variant;
    std::size_t data_size = 0;
    std::uint64_t seed = 0;
    std::size_t epoch = 0;
    double mse_a_val = 0.0;
    double mse_v_val = 0.0;
};

/// Writes summary.csv (variant,data_size,seed,metric,value) and
/// convergence.csv (variant,data_size,seed,epoch,mse_a_val,mse_v_val).
std::vector<std::filesystem::path> emit_plot_data(std::span<const EvalReport> reports,
                                                  const std::filesystem::path& dir);

std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path);
std::vector<ConvergenceRow> read_convergence_csv(const std::filesystem::path& path);

}  // namespace perlcf
