#include "perlcf/physics.hpp"

#include <cmath>

#include "perlcf/error.hpp"

namespace perlcf {

std::string to_string(PhysicsModel m) {
    switch (m) {
        case PhysicsModel::newell: return "newell";
        case PhysicsModel::idm: return "idm";
        case PhysicsModel::fvd: return "fvd";
    }
    return "unknown";
}

PhysicsModel parse_physics_model(const std::string& name) {
    if (name == "newell") return PhysicsModel::newell;
    if (name == "idm") return PhysicsModel::idm;
    if (name == "fvd") return PhysicsModel::fvd;
    throw ConfigError("unknown physics model '" + name + "' (expected newell|idm|fvd)");
}

PhysicsModel model_of(const PhysicsParams& p) {
    return static_cast<PhysicsModel>(p.index());
}

PhysicsParams default_params(PhysicsModel m) {
    switch (m) {
        case PhysicsModel::newell: return NewellParams{};
        case PhysicsModel::idm: return IdmParams{};
        case PhysicsModel::fvd: return FvdParams{};
    }
    throw ConfigError("unknown physics model");
}

void validate_params(const PhysicsParams& params) {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be > 0");
    };
    if (const auto* n = std::get_if<NewellParams>(&params)) {
        positive(n->w, "newell.w");
    } else if (const auto* i = std::get_if<IdmParams>(&params)) {
        positive(i->v_free, "idm.v_free");
        positive(i->a_max, "idm.a_max");
        positive(i->b_comf, "idm.b_comf");
        positive(i->s0, "idm.s0");
        positive(i->t_gap, "idm.t_gap");
    } else {
        const auto& f = std::get<FvdParams>(params);
        if (!(f.kappa >= 0.0)) throw ConfigError("fvd.kappa must be >= 0");
        if (!(f.lambda >= 0.0)) throw ConfigError("fvd.lambda must be >= 0");
        positive(f.c1, "fvd.c1");
    }
}

void to_json(nlohmann::json& j, const PhysicsParams& params) {
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, NewellParams>) {
                j = {{"model", "newell"}, {"w", p.w}};
            } else if constexpr (std::is_same_v<T, IdmParams>) {
                j = {{"model", "idm"}, {"v_free", p.v_free}, {"a_max", p.a_max},
                     {"b_comf", p.b_comf}, {"s0", p.s0}, {"t_gap", p.t_gap}};
            } else {
                j = {{"model", "fvd"}, {"kappa", p.kappa}, {"lambda", p.lambda}, {"v1", p.v1},
                     {"v2", p.v2}, {"c1", p.c1}, {"c2", p.c2}, {"l_c", p.l_c}};
            }
        },
        params);
}

void from_json(const nlohmann::json& j, PhysicsParams& params) {
    switch (parse_physics_model(j.at("model").get<std::string>())) {
        case PhysicsModel::newell: {
            NewellParams p;
            p.w = j.value("w", p.w);
            params = p;
            break;
        }
        case PhysicsModel::idm: {
            IdmParams p;
            p.v_free = j.value("v_free", p.v_free);
            p.a_max = j.value("a_max", p.a_max);
            p.b_comf = j.value("b_comf", p.b_comf);
            p.s0 = j.value("s0", p.s0);
            p.t_gap = j.value("t_gap", p.t_gap);
            params = p;
            break;
        }
        case PhysicsModel::fvd: {
            FvdParams p;
            p.kappa = j.value("kappa", p.kappa);
            p.lambda = j.value("lambda", p.lambda);
            p.v1 = j.value("v1", p.v1);
            p.v2 = j.value("v2", p.v2);
            p.c1 = j.value("c1", p.c1);
            p.c2 = j.value("c2", p.c2);
            p.l_c = j.value("l_c", p.l_c);
            params = p;
            break;
        }
    }
}

double idm_desired_gap(double v, double dv, const IdmParams& p) {
    return p.s0 + p.t_gap * v - v * dv / (2.0 * std::sqrt(p.a_max * p.b_comf));
}

double idm_accel(double v, double dv, double gap, const IdmParams& p) {
    if (!(gap > 0.0)) throw DataError("idm_accel: gap must be > 0");
    const double free = std::pow(v / p.v_free, 4);
    const double inter = idm_desired_gap(v, dv, p) / gap;
    return p.a_max * (1.0 - free - inter * inter);
}

double fvd_optimal_speed(double gap, const FvdParams& p) {
    return p.v1 + p.v2 * std::tanh(p.c1 * (gap - p.l_c) - p.c2);
}

double fvd_accel(double v, double dv, double gap, const FvdParams& p) {
    return p.kappa * (fvd_optimal_speed(gap, p) - v) + p.lambda * dv;
}

double interpolate_series(std::span<const double> series, double idx) {
    const double last = static_cast<double>(series.size() - 1);
    if (!(idx > 0.0)) return series.front();
    if (idx >= last) return series.back();
    const double base = std::floor(idx);
    const double frac = idx - base;
    const auto i = static_cast<std::size_t>(base);
    return series[i] + frac * (series[i + 1] - series[i]);
}

NewellPlan newell_plan(const TrajectorySample& s, const NewellParams& p, double delta,
                       std::size_t horizon) {
    constexpr double eps = 1e-9;
    const std::size_t ego = s.ego();
    const double x_ego = s.positions[ego][s.last()];
    const double h = static_cast<double>(horizon);
    const double tb = static_cast<double>(s.t_back());
    for (std::size_t k = ego; k-- > 0;) {
        const double shift = (s.positions[k][s.last()] - x_ego) / (p.w * delta);
        if (shift >= h - eps && shift <= tb + eps) return {k, shift, false};
    }
    const double shift = (s.positions[0][s.last()] - x_ego) / (p.w * delta);
    return {0, shift, true};
}

std::vector<double> newell_predict(const TrajectorySample& s, const NewellParams& p, double delta,
                                   std::size_t horizon) {
    if (horizon == 0) horizon = s.t_fwd();
    const auto plan = newell_plan(s, p, delta, horizon);
    std::vector<double> leader_accel(s.t_back());
    for (std::size_t t = 0; t < s.t_back(); ++t) leader_accel[t] = s.history[plan.leader][t].accel;

    std::vector<double> out(horizon);
    const double t0_idx = static_cast<double>(s.last());
    for (std::size_t j = 0; j < horizon; ++j) {
        const double idx = t0_idx + static_cast<double>(j + 1) - plan.shift_steps;
        out[j] = interpolate_series(leader_accel, idx);
    }
    return out;
}

double advance_kinematics(double& position, double& speed, double accel, double delta) {
    double next = speed + accel * delta;
    double applied = accel;
    if (next < 0.0) {
        applied = -speed / delta;
        next = 0.0;
    }
    position += 0.5 * (speed + next) * delta;
    speed = next;
    return applied;
}

std::vector<double> physics_rollout(const TrajectorySample& s, const PhysicsParams& params,
                                    double delta, RolloutDiagnostics* diag, std::size_t horizon) {
    if (horizon == 0) horizon = s.t_fwd();
    if (const auto* n = std::get_if<NewellParams>(&params)) return newell_predict(s, *n, delta, horizon);
    if (horizon > s.t_fwd()) throw DataError("rollout horizon exceeds the sample's leader future");

    const std::size_t ego = s.ego();
    const std::size_t lead = ego - 1;
    double x_e = s.positions[ego][s.last()];
    double v_e = s.history[ego][s.last()].speed;
    double x_l = s.positions[lead][s.last()];
    double v_l = s.history[lead][s.last()].speed;

    std::vector<double> out(horizon);
    for (std::size_t j = 0; j < horizon; ++j) {
        bool collided = false;
        out[j] = car_following_step(params, v_e, v_l, x_l - x_e, delta, &collided);
        if (collided && diag) diag->collision = true;
        advance_kinematics(x_e, v_e, out[j], delta);
        advance_kinematics(x_l, v_l, s.leader_future_accel[lead][j], delta);
    }
    return out;
}

double car_following_step(const PhysicsParams& params, double v_ego, double v_lead, double gap,
                          double delta, bool* collision) {
    if (!(gap > 0.0)) {
        gap = kRolloutGapFloor;
        if (collision) *collision = true;
    }
    const double dv = speed_difference(v_ego, v_lead);
    double a = 0.0;
    if (const auto* idm = std::get_if<IdmParams>(&params)) a = idm_accel(v_ego, dv, gap, *idm);
    else if (const auto* fvd = std::get_if<FvdParams>(&params)) a = fvd_accel(v_ego, dv, gap, *fvd);
    else throw ConfigError("car_following_step needs idm or fvd parameters");
    if (v_ego + a * delta < 0.0) a = -v_ego / delta;
    return a;
}

double one_step_accel(const TrajectorySample& s, const PhysicsParams& p, double delta) {
    return physics_rollout(s, p, delta, nullptr, 1).front();
}

}  // namespace perlcf
