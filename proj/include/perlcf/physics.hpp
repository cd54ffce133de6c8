#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "perlcf/domain.hpp"

namespace perlcf {

enum class PhysicsModel { newell, idm, fvd };

std::string to_string(PhysicsModel m);
PhysicsModel parse_physics_model(const std::string& name);

// Adapted Newell: the ego copies a leader's acceleration shifted back in
// time by (position distance) / w.
struct NewellParams {
    double w = 4.01;  // wave speed, m/s
};

struct IdmParams {
    double v_free = 22.495;  // m/s
    double a_max = 0.911;    // m/s^2
    double b_comf = 2.859;   // m/s^2
    double s0 = 1.627;       // m
    double t_gap = 1.132;    // s
};

// Only kappa and lambda are calibrated; the optimal-speed constants are fixed.
struct FvdParams {
    double kappa = 0.1;   // 1/s
    double lambda = 0.3;  // 1/s
    double v1 = 6.75;     // m/s
    double v2 = 7.91;     // m/s
    double c1 = 0.13;     // 1/m
    double c2 = 1.54;
    double l_c = 5.0;     // m
};

using PhysicsParams = std::variant<NewellParams, IdmParams, FvdParams>;

PhysicsModel model_of(const PhysicsParams& p);
PhysicsParams default_params(PhysicsModel m);

// Throws ConfigError when a parameter is outside its physical domain.
void validate_params(const PhysicsParams& p);

void to_json(nlohmann::json& j, const PhysicsParams& p);
void from_json(const nlohmann::json& j, PhysicsParams& p);

// The speed difference fed to idm_accel and fvd_accel at every call site:
// leader minus ego, so a closing gap (dv < 0) widens S and lowers the FVD
// acceleration.
inline double speed_difference(double v_ego, double v_lead) { return v_lead - v_ego; }

/// IDM acceleration with S = s0 + T*v - v*dv / (2*sqrt(a*b)).
/// Throws DataError when gap <= 0.
double idm_accel(double v, double dv, double gap, const IdmParams& p);

// Desired space headway S(v, dv) of the IDM.
double idm_desired_gap(double v, double dv, const IdmParams& p);

double fvd_optimal_speed(double gap, const FvdParams& p);

/// FVD acceleration kappa * (V(gap) - v) + lambda * dv.
double fvd_accel(double v, double dv, double gap, const FvdParams& p);

// Linear interpolation of a uniformly sampled series at fractional index
// `idx`, clamped to the series endpoints.
double interpolate_series(std::span<const double> series, double idx);

struct NewellPlan {
    std::size_t leader = 0;     // vehicle index k' (0 = lead vehicle)
    double shift_steps = 0.0;   // D / (w * delta)
    bool clamped = false;       // no leader had its whole source window observed
};

/// Picks the closest leader whose source times for steps 1..horizon all
/// fall inside the observed history; falls back to the farthest leader with
/// clamped source times. D is the position distance at t0.
NewellPlan newell_plan(const TrajectorySample& s, const NewellParams& p, double delta,
                       std::size_t horizon);

// Predicted ego accelerations for future steps 1..horizon (horizon 0 = T^f).
std::vector<double> newell_predict(const TrajectorySample& s, const NewellParams& p, double delta,
                                   std::size_t horizon = 0);

struct RolloutDiagnostics {
    bool collision = false;  // the rolled-out gap reached zero at some step
};

inline constexpr double kRolloutGapFloor = 0.1;  // m

/// Multi-step physics prediction. Newell evaluates the shift rule directly;
/// IDM and FVD roll the ego forward by explicit Euler against the immediate
/// leader's realized future. Speeds are clamped at zero, in which case the
/// emitted acceleration is the one that actually brings the ego to rest.
std::vector<double> physics_rollout(const TrajectorySample& s, const PhysicsParams& p, double delta,
                                    RolloutDiagnostics* diag = nullptr, std::size_t horizon = 0);

// IDM/FVD acceleration for one Euler step from the given ego/leader state,
// with the gap floor and zero-speed clamp of physics_rollout applied.
double car_following_step(const PhysicsParams& p, double v_ego, double v_lead, double gap, double delta,
                          bool* collision = nullptr);

// First future step only (the calibration objective's prediction).
double one_step_accel(const TrajectorySample& s, const PhysicsParams& p, double delta);

// Kinematic update shared by rollouts and the synthetic generator:
// v' = max(0, v + a*delta), x' = x + (v + v')/2 * delta. Returns the
// acceleration actually applied.
double advance_kinematics(double& position, double& speed, double accel, double delta);

}  // namespace perlcf
