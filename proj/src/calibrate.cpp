#include "perlcf/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "perlcf/error.hpp"

namespace perlcf {

std::vector<ParamBound> default_bounds(PhysicsModel m) {
    switch (m) {
        case PhysicsModel::newell: return {{"w", 1.0, 10.0}};
        case PhysicsModel::idm:
            return {{"v_free", 5.0, 40.0},
                    {"a_max", 0.1, 4.0},
                    {"b_comf", 0.5, 6.0},
                    {"s0", 0.1, 10.0},
                    {"t_gap", 0.1, 4.0}};
        case PhysicsModel::fvd: return {{"kappa", 0.001, 2.0}, {"lambda", 0.0, 2.0}};
    }
    return {};
}

const std::vector<ParamBound>& CalibrationConfig::effective_bounds() const {
    static const std::vector<ParamBound> newell = default_bounds(PhysicsModel::newell);
    static const std::vector<ParamBound> idm = default_bounds(PhysicsModel::idm);
    static const std::vector<ParamBound> fvd = default_bounds(PhysicsModel::fvd);
    if (!bounds.empty()) return bounds;
    switch (model) {
        case PhysicsModel::newell: return newell;
        case PhysicsModel::idm: return idm;
        case PhysicsModel::fvd: return fvd;
    }
    return newell;
}

void CalibrationConfig::validate() const {
    if (sample_size < 1) throw ConfigError("calibration.sample_size must be >= 1");
    if (repetitions < 1) throw ConfigError("calibration.repetitions must be >= 1");
    if (!(delta > 0.0)) throw ConfigError("calibration.delta must be > 0");
    const auto& b = effective_bounds();
    if (b.size() != default_bounds(model).size())
        throw ConfigError("calibration bounds do not match the model's parameter count");
    for (const auto& pb : b)
        if (!(pb.lo < pb.hi)) throw ConfigError("calibration bound for " + pb.name + " needs lo < hi");
    if (nelder_mead.restarts < 1) throw ConfigError("calibration.restarts must be >= 1");
    if (!(golden_tolerance > 0.0)) throw ConfigError("calibration.golden_tolerance must be > 0");
}

void to_json(nlohmann::json& j, const CalibrationConfig& c) {
    auto bounds = nlohmann::json::object();
    for (const auto& b : c.effective_bounds()) bounds[b.name] = {b.lo, b.hi};
    j = {{"model", to_string(c.model)},
         {"sample_size", c.sample_size},
         {"repetitions", c.repetitions},
         {"seed", c.seed},
         {"bounds", bounds},
         {"restarts", c.nelder_mead.restarts},
         {"max_iterations", c.nelder_mead.max_iterations},
         {"simplex_tolerance", c.nelder_mead.tolerance},
         {"golden_tolerance", c.golden_tolerance},
         {"delta", c.delta}};
}

void from_json(const nlohmann::json& j, CalibrationConfig& c) {
    CalibrationConfig d;
    c.model = parse_physics_model(j.value("model", to_string(d.model)));
    c.sample_size = j.value("sample_size", d.sample_size);
    c.repetitions = j.value("repetitions", d.repetitions);
    c.seed = j.value("seed", d.seed);
    c.nelder_mead.restarts = j.value("restarts", d.nelder_mead.restarts);
    c.nelder_mead.max_iterations = j.value("max_iterations", d.nelder_mead.max_iterations);
    c.nelder_mead.tolerance = j.value("simplex_tolerance", d.nelder_mead.tolerance);
    c.golden_tolerance = j.value("golden_tolerance", d.golden_tolerance);
    c.delta = j.value("delta", d.delta);
    c.bounds.clear();
    if (j.contains("bounds")) {
        for (auto b : default_bounds(c.model)) {
            if (j["bounds"].contains(b.name)) {
                b.lo = j["bounds"][b.name].at(0).get<double>();
                b.hi = j["bounds"][b.name].at(1).get<double>();
            }
            c.bounds.push_back(b);
        }
    }
}

std::vector<double> param_vector(const PhysicsParams& params) {
    if (const auto* n = std::get_if<NewellParams>(&params)) return {n->w};
    if (const auto* i = std::get_if<IdmParams>(&params))
        return {i->v_free, i->a_max, i->b_comf, i->s0, i->t_gap};
    const auto& f = std::get<FvdParams>(params);
    return {f.kappa, f.lambda};
}

PhysicsParams params_from_vector(PhysicsModel m, std::span<const double> x, const FvdParams& fvd_constants) {
    switch (m) {
        case PhysicsModel::newell: return NewellParams{x[0]};
        case PhysicsModel::idm: return IdmParams{x[0], x[1], x[2], x[3], x[4]};
        case PhysicsModel::fvd: {
            FvdParams f = fvd_constants;
            f.kappa = x[0];
            f.lambda = x[1];
            return f;
        }
    }
    throw ConfigError("unknown physics model");
}

double calibration_objective(std::span<const TrajectorySample> samples, const PhysicsParams& p, double delta) {
    double sum = 0.0;
    for (const auto& s : samples) {
        const double e = one_step_accel(s, p, delta) - s.ego_future_accel.front();
        sum += e * e;
    }
    return sum;
}

ScalarMin golden_section_minimize(const std::function<double(double)>& f, double lo, double hi,
                                  double tolerance, std::size_t scan_points) {
    ScalarMin best{lo, std::numeric_limits<double>::infinity(), 0};
    auto eval = [&](double x) {
        double v = f(x);
        ++best.evaluations;
        if (!std::isfinite(v)) v = std::numeric_limits<double>::infinity();
        if (v < best.f) {
            best.f = v;
            best.x = x;
        }
        return v;
    };

    // Coarse scan picks the bracket; golden-section refines inside it.
    double a = lo, b = hi;
    if (scan_points >= 3) {
        const double step = (hi - lo) / static_cast<double>(scan_points - 1);
        std::size_t arg = 0;
        double fmin = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < scan_points; ++i) {
            const double v = eval(lo + step * static_cast<double>(i));
            if (v < fmin) {
                fmin = v;
                arg = i;
            }
        }
        a = std::max(lo, lo + step * (static_cast<double>(arg) - 1.0));
        b = std::min(hi, lo + step * (static_cast<double>(arg) + 1.0));
    }

    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - inv_phi * (b - a);
    double d = a + inv_phi * (b - a);
    double fc = eval(c), fd = eval(d);
    while (b - a > tolerance) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d);
        }
    }
    eval(0.5 * (a + b));
    return best;
}

NelderMeadResult nelder_mead(const std::function<double(std::span<const double>)>& f,
                             std::vector<double> start, double initial_step, double tolerance,
                             std::size_t max_iterations) {
    const std::size_t n = start.size();
    auto safe = [&](std::span<const double> x) {
        const double v = f(x);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };

    std::vector<std::vector<double>> simplex(n + 1, start);
    for (std::size_t i = 0; i < n; ++i) simplex[i + 1][i] += initial_step;
    std::vector<double> values(n + 1);
    for (std::size_t i = 0; i <= n; ++i) values[i] = safe(simplex[i]);

    std::vector<std::size_t> order(n + 1);
    std::vector<double> centroid(n), trial(n), trial2(n);
    NelderMeadResult res;

    auto diameter = [&]() {
        double d = 0.0;
        for (std::size_t i = 1; i <= n; ++i)
            for (std::size_t k = 0; k < n; ++k)
                d = std::max(d, std::abs(simplex[i][k] - simplex[0][k]));
        return d;
    };

    for (res.iterations = 0; res.iterations < max_iterations; ++res.iterations) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
        {
            std::vector<std::vector<double>> s2(n + 1);
            std::vector<double> v2(n + 1);
            for (std::size_t i = 0; i <= n; ++i) {
                s2[i] = std::move(simplex[order[i]]);
                v2[i] = values[order[i]];
            }
            simplex = std::move(s2);
            values = std::move(v2);
        }
        if (diameter() < tolerance) {
            res.converged = true;
            break;
        }

        std::fill(centroid.begin(), centroid.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < n; ++k) centroid[k] += simplex[i][k] / static_cast<double>(n);

        const auto& worst = simplex[n];
        for (std::size_t k = 0; k < n; ++k) trial[k] = centroid[k] + (centroid[k] - worst[k]);
        const double fr = safe(trial);

        if (fr < values[0]) {
            for (std::size_t k = 0; k < n; ++k) trial2[k] = centroid[k] + 2.0 * (centroid[k] - worst[k]);
            const double fe = safe(trial2);
            if (fe < fr) {
                simplex[n] = trial2;
                values[n] = fe;
            } else {
                simplex[n] = trial;
                values[n] = fr;
            }
            continue;
        }
        if (fr < values[n - 1]) {
            simplex[n] = trial;
            values[n] = fr;
            continue;
        }
        // Contraction: outside if the reflection improved on the worst point.
        const bool outside = fr < values[n];
        for (std::size_t k = 0; k < n; ++k)
            trial2[k] = outside ? centroid[k] + 0.5 * (trial[k] - centroid[k])
                                : centroid[k] + 0.5 * (worst[k] - centroid[k]);
        const double fc = safe(trial2);
        if (fc < (outside ? fr : values[n])) {
            simplex[n] = trial2;
            values[n] = fc;
            continue;
        }
        for (std::size_t i = 1; i <= n; ++i) {
            for (std::size_t k = 0; k < n; ++k)
                simplex[i][k] = simplex[0][k] + 0.5 * (simplex[i][k] - simplex[0][k]);
            values[i] = safe(simplex[i]);
        }
    }
    const auto best = static_cast<std::size_t>(std::min_element(values.begin(), values.end()) - values.begin());
    res.x = simplex[best];
    res.f = values[best];
    return res;
}

namespace {

double to_bounded(double u, const ParamBound& b) {
    return b.lo + (b.hi - b.lo) / (1.0 + std::exp(-u));
}

double to_unbounded(double x, const ParamBound& b) {
    const double p = std::clamp((x - b.lo) / (b.hi - b.lo), 1e-12, 1.0 - 1e-12);
    return std::log(p / (1.0 - p));
}

// One-step inputs of an IDM/FVD sample, precomputed once per fit.
struct OneStep {
    double v_ego, v_lead, gap, target;
};

}  // namespace

namespace {

constexpr std::size_t kMaxPolish = 20;

}  // namespace

FitResult fit_physics_detailed(std::span<const TrajectorySample> samples, const CalibrationConfig& config) {
    config.validate();
    if (samples.empty()) throw CalibrationError("fit_physics: empty sample subset");
    const auto& bounds = config.effective_bounds();
    FitResult result;

    if (config.model == PhysicsModel::newell) {
        auto objective = [&](double w) {
            return calibration_objective(samples, NewellParams{w}, config.delta);
        };
        const auto m = golden_section_minimize(objective, bounds[0].lo, bounds[0].hi, config.golden_tolerance);
        if (!std::isfinite(m.f)) throw CalibrationError("fit_physics: every candidate objective was non-finite");
        result.params = NewellParams{m.x};
        result.objective = m.f;
        result.evaluations = m.evaluations;
        return result;
    }

    std::vector<OneStep> steps;
    steps.reserve(samples.size());
    for (const auto& s : samples) {
        const std::size_t e = s.ego();
        steps.push_back({s.history[e][s.last()].speed, s.history[e - 1][s.last()].speed,
                         s.positions[e - 1][s.last()] - s.positions[e][s.last()], s.ego_future_accel.front()});
    }

    const std::size_t dim = bounds.size();
    std::vector<double> x(dim);
    auto decode = [&](std::span<const double> u) {
        for (std::size_t i = 0; i < dim; ++i) x[i] = to_bounded(u[i], bounds[i]);
        return params_from_vector(config.model, x, config.fvd_constants);
    };
    std::size_t evaluations = 0;
    auto objective = [&](std::span<const double> u) {
        ++evaluations;
        const PhysicsParams p = decode(u);
        double sum = 0.0;
        for (const auto& st : steps) {
            const double e = car_following_step(p, st.v_ego, st.v_lead, st.gap, config.delta) - st.target;
            sum += e * e;
        }
        return sum;
    };

    Rng rng(derive_seed(config.seed, 0xCA1));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double best_f = std::numeric_limits<double>::infinity();
    std::vector<double> best_u;
    for (std::size_t r = 0; r < config.nelder_mead.restarts; ++r) {
        std::vector<double> start(dim);
        for (std::size_t i = 0; i < dim; ++i)
            start[i] = to_unbounded(bounds[i].lo + (bounds[i].hi - bounds[i].lo) * unit(rng), bounds[i]);
        const double f0 = objective(start);
        result.restart_start_objectives.push_back(f0);
        auto nm = nelder_mead(objective, start, config.nelder_mead.initial_step, config.nelder_mead.tolerance,
                              config.nelder_mead.max_iterations);
        // A collapsed simplex is not necessarily a minimum; rebuild it around
        // the best point until that stops paying off.
        for (std::size_t polish = 0; polish < kMaxPolish; ++polish) {
            auto again = nelder_mead(objective, nm.x, config.nelder_mead.initial_step, config.nelder_mead.tolerance,
                                     config.nelder_mead.max_iterations);
            const bool improved = again.f < nm.f - 1e-12 * std::abs(nm.f);
            if (again.f < nm.f) nm = std::move(again);
            if (!improved) break;
        }
        if (nm.f < best_f) {
            best_f = nm.f;
            best_u = nm.x;
        }
    }
    if (!std::isfinite(best_f)) throw CalibrationError("fit_physics: every candidate objective was non-finite");
    result.params = decode(best_u);
    result.objective = best_f;
    result.evaluations = evaluations;
    return result;
}

namespace {

std::vector<std::string> param_names(PhysicsModel m) {
    std::vector<std::string> names;
    for (const auto& b : default_bounds(m)) names.push_back(b.name);
    return names;
}

}  // namespace

PhysicsParams CalibrationReport::mean_params(const FvdParams& fvd_constants) const {
    FvdParams constants = fvd_constants;
    if (!runs.empty())
        if (const auto* f = std::get_if<FvdParams>(&runs.front().params)) constants = *f;
    return params_from_vector(model, mean, constants);
}

CalibrationReport summarize_calibration(PhysicsModel model, std::size_t sample_size, std::uint64_t seed,
                                        std::vector<CalibrationRepetition> runs) {
    CalibrationReport report;
    report.model = model;
    report.sample_size = sample_size;
    report.repetitions = runs.size();
    report.seed = seed;
    report.names = param_names(model);
    const std::size_t dim = report.names.size();
    report.mean.assign(dim, 0.0);
    report.variance.assign(dim, 0.0);
    const double R = static_cast<double>(runs.size());
    for (const auto& run : runs) {
        const auto v = param_vector(run.params);
        for (std::size_t i = 0; i < dim; ++i) report.mean[i] += v[i] / R;
    }
    for (const auto& run : runs) {
        const auto v = param_vector(run.params);
        for (std::size_t i = 0; i < dim; ++i) report.variance[i] += (v[i] - report.mean[i]) * (v[i] - report.mean[i]) / R;
    }
    report.runs = std::move(runs);
    return report;
}

CalibrationReport monte_carlo_calibrate(std::span<const TrajectorySample> train, const CalibrationConfig& config) {
    config.validate();
    if (train.size() < config.sample_size)
        throw ConfigError("monte_carlo_calibrate: sample_size " + std::to_string(config.sample_size) +
                          " exceeds the " + std::to_string(train.size()) + " training samples");
    std::vector<CalibrationRepetition> runs;
    for (std::size_t r = 0; r < config.repetitions; ++r) {
        Rng rng(derive_seed(config.seed, r));
        std::vector<std::size_t> idx(train.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        std::vector<TrajectorySample> subset;
        subset.reserve(config.sample_size);
        for (std::size_t i = 0; i < config.sample_size; ++i) subset.push_back(train[idx[i]]);

        CalibrationConfig rep = config;
        rep.seed = derive_seed(config.seed, 1000 + r);
        try {
            const auto fit = fit_physics_detailed(subset, rep);
            runs.push_back({fit.params, fit.objective / static_cast<double>(subset.size())});
        } catch (const Error& e) {
            throw CalibrationError("repetition " + std::to_string(r) + ": " + e.what());
        }
    }
    return summarize_calibration(config.model, config.sample_size, config.seed, std::move(runs));
}

void to_json(nlohmann::json& j, const CalibrationReport& r) {
    auto params = nlohmann::json::object();
    for (std::size_t i = 0; i < r.names.size(); ++i)
        params[r.names[i]] = {{"mean", r.mean[i]}, {"variance", r.variance[i]}};
    auto runs = nlohmann::json::array();
    for (const auto& run : r.runs) runs.push_back({{"params", run.params}, {"train_mse", run.train_mse}});
    j = {{"model", to_string(r.model)},
         {"sample_size", r.sample_size},
         {"repetitions", r.repetitions},
         {"seed", r.seed},
         {"parameters", params},
         {"runs", runs},
         {"params", r.mean_params()}};
}

void from_json(const nlohmann::json& j, CalibrationReport& r) {
    r.model = parse_physics_model(j.at("model").get<std::string>());
    r.sample_size = j.at("sample_size").get<std::size_t>();
    r.repetitions = j.at("repetitions").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.names = param_names(r.model);
    r.mean.clear();
    r.variance.clear();
    for (const auto& name : r.names) {
        r.mean.push_back(j.at("parameters").at(name).at("mean").get<double>());
        r.variance.push_back(j.at("parameters").at(name).at("variance").get<double>());
    }
    r.runs.clear();
    for (const auto& run : j.at("runs"))
        r.runs.push_back({run.at("params").get<PhysicsParams>(), run.at("train_mse").get<double>()});
}

}  // namespace perlcf
