#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "perlcf/physics.hpp"

namespace perlcf {

struct ParamBound {
    std::string name;
    double lo = 0.0;
    double hi = 1.0;
};

// Default search boxes; they bracket the reference values of each model.
std::vector<ParamBound> default_bounds(PhysicsModel m);

struct NelderMeadSettings {
    std::size_t restarts = 5;
    std::size_t max_iterations = 2000;
    double tolerance = 1e-6;     // simplex diameter in the unbounded space
    double initial_step = 1.0;   // simplex edge in the unbounded space
};

struct CalibrationConfig {
    PhysicsModel model = PhysicsModel::newell;
    std::size_t sample_size = 300;
    std::size_t repetitions = 5;
    std::uint64_t seed = 0;
    std::vector<ParamBound> bounds;  // empty -> default_bounds(model)
    NelderMeadSettings nelder_mead;
    double golden_tolerance = 1e-3;  // m/s, Newell only
    double delta = 0.1;
    FvdParams fvd_constants;         // v1, v2, c1, c2, l_c held fixed

    const std::vector<ParamBound>& effective_bounds() const;
    void validate() const;
};

void to_json(nlohmann::json& j, const CalibrationConfig& c);
void from_json(const nlohmann::json& j, CalibrationConfig& c);

// Flat parameter vector <-> typed parameters, in default_bounds order.
std::vector<double> param_vector(const PhysicsParams& p);
PhysicsParams params_from_vector(PhysicsModel m, std::span<const double> x, const FvdParams& fvd_constants);

// Sum over samples of the squared one-step acceleration error.
double calibration_objective(std::span<const TrajectorySample> samples, const PhysicsParams& p, double delta);

struct FitResult {
    PhysicsParams params;
    double objective = 0.0;
    std::size_t evaluations = 0;
    // Objective at each restart's starting point (Nelder-Mead only).
    std::vector<double> restart_start_objectives;
};

FitResult fit_physics_detailed(std::span<const TrajectorySample> samples, const CalibrationConfig& config);

inline PhysicsParams fit_physics(std::span<const TrajectorySample> samples, const CalibrationConfig& config) {
    return fit_physics_detailed(samples, config).params;
}

// Golden-section minimization on [lo, hi] after a coarse scan picks the
// bracket. Exposed for testing.
struct ScalarMin {
    double x = 0.0;
    double f = 0.0;
    std::size_t evaluations = 0;
};
ScalarMin golden_section_minimize(const std::function<double(double)>& f, double lo, double hi,
                                  double tolerance, std::size_t scan_points = 91);

struct NelderMeadResult {
    std::vector<double> x;
    double f = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
};
NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& f,
                             std::vector<double> start, double initial_step, double tolerance,
                             std::size_t max_iterations);

struct CalibrationRepetition {
    PhysicsParams params;
    double train_mse = 0.0;
};

struct CalibrationReport {
    PhysicsModel model = PhysicsModel::newell;
    std::size_t sample_size = 0;
    std::size_t repetitions = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> names;
    std::vector<double> mean;
    std::vector<double> variance;  // population variance over repetitions
    std::vector<CalibrationRepetition> runs;

    // Parameters built from the per-parameter means.
    PhysicsParams mean_params(const FvdParams& fvd_constants = {}) const;
};

void to_json(nlohmann::json& j, const CalibrationReport& r);
void from_json(const nlohmann::json& j, CalibrationReport& r);

// Aggregates already-fitted repetitions into a report.
CalibrationReport summarize_calibration(PhysicsModel model, std::size_t sample_size, std::uint64_t seed,
                                        std::vector<CalibrationRepetition> runs);

/// R repetitions, each fitting on n samples drawn without replacement with a
/// repetition-indexed sub-seed. Errors carry the repetition index.
CalibrationReport monte_carlo_calibrate(std::span<const TrajectorySample> train, const CalibrationConfig& config);

}  // namespace perlcf
