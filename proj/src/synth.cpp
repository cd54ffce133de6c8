#include "perlcf/synth.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "perlcf/error.hpp"
#include "perlcf/text.hpp"

namespace perlcf {

std::string to_string(SynthGenerator g) {
    return g == SynthGenerator::idm ? "idm" : "newell_shift";
}

SynthGenerator parse_synth_generator(const std::string& name) {
    if (name == "idm") return SynthGenerator::idm;
    if (name == "newell_shift") return SynthGenerator::newell_shift;
    throw ConfigError("unknown generator '" + name + "' (expected idm|newell_shift)");
}

SynthConfig synth_defaults(SynthGenerator g) {
    SynthConfig c;
    c.generator = g;
    if (g == SynthGenerator::newell_shift) {
        c.true_params = NewellParams{4.0};
        c.platoons = 10;
        c.vehicles_per_platoon = 4;
        c.duration_steps = 300;
        c.lead.wave_amplitude = 0.5;
        c.lead.period_min = 12.0;
        c.lead.pulse_probability = 0.0;
    }
    return c;
}

void SynthConfig::validate() const {
    if (generator == SynthGenerator::idm && !std::holds_alternative<IdmParams>(true_params))
        throw ConfigError("idm generator needs idm parameters");
    if (generator == SynthGenerator::newell_shift && !std::holds_alternative<NewellParams>(true_params))
        throw ConfigError("newell_shift generator needs newell parameters");
    validate_params(true_params);
    if (platoons < 1) throw ConfigError("synth.platoons must be >= 1");
    if (vehicles_per_platoon < 2) throw ConfigError("synth.vehicles_per_platoon must be >= 2");
    if (duration_steps < 2) throw ConfigError("synth.duration_steps must be >= 2");
    if (!(delta > 0.0)) throw ConfigError("synth.delta must be > 0");
    if (!(noise_sigma >= 0.0)) throw ConfigError("synth.noise_sigma must be >= 0");
    if (!(initial_spacing >= 0.0)) throw ConfigError("synth.initial_spacing must be >= 0");
    if (!(lead.period_min > 0.0) || lead.period_max < lead.period_min)
        throw ConfigError("synth.lead period range invalid");
    if (!(lead.segment_min > 0.0) || lead.segment_max < lead.segment_min)
        throw ConfigError("synth.lead segment range invalid");
    if (!(lead.v_min >= 0.0) || lead.v_max <= lead.v_min) throw ConfigError("synth.lead speed range invalid");
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
    j = {{"generator", to_string(c.generator)},
         {"true_params", c.true_params},
         {"platoons", c.platoons},
         {"vehicles_per_platoon", c.vehicles_per_platoon},
         {"duration_steps", c.duration_steps},
         {"delta", c.delta},
         {"noise_sigma", c.noise_sigma},
         {"initial_spacing", c.initial_spacing},
         {"seed", c.seed},
         {"lead",
          {{"base_speed", c.lead.base_speed},
           {"wave_amplitude", c.lead.wave_amplitude},
           {"period_min", c.lead.period_min},
           {"period_max", c.lead.period_max},
           {"segment_min", c.lead.segment_min},
           {"segment_max", c.lead.segment_max},
           {"pulse_probability", c.lead.pulse_probability},
           {"pulse_accel", c.lead.pulse_accel},
           {"pulse_duration", c.lead.pulse_duration},
           {"v_min", c.lead.v_min},
           {"v_max", c.lead.v_max}}}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
    const SynthConfig d = synth_defaults(parse_synth_generator(j.value("generator", std::string("idm"))));
    c.generator = d.generator;
    c.true_params = j.contains("true_params") ? j.at("true_params").get<PhysicsParams>() : d.true_params;
    c.platoons = j.value("platoons", d.platoons);
    c.vehicles_per_platoon = j.value("vehicles_per_platoon", d.vehicles_per_platoon);
    c.duration_steps = j.value("duration_steps", d.duration_steps);
    c.delta = j.value("delta", d.delta);
    c.noise_sigma = j.value("noise_sigma", d.noise_sigma);
    c.initial_spacing = j.value("initial_spacing", d.initial_spacing);
    c.seed = j.value("seed", d.seed);
    if (j.contains("lead")) {
        const auto& l = j.at("lead");
        c.lead.base_speed = l.value("base_speed", d.lead.base_speed);
        c.lead.wave_amplitude = l.value("wave_amplitude", d.lead.wave_amplitude);
        c.lead.period_min = l.value("period_min", d.lead.period_min);
        c.lead.period_max = l.value("period_max", d.lead.period_max);
        c.lead.segment_min = l.value("segment_min", d.lead.segment_min);
        c.lead.segment_max = l.value("segment_max", d.lead.segment_max);
        c.lead.pulse_probability = l.value("pulse_probability", d.lead.pulse_probability);
        c.lead.pulse_accel = l.value("pulse_accel", d.lead.pulse_accel);
        c.lead.pulse_duration = l.value("pulse_duration", d.lead.pulse_duration);
        c.lead.v_min = l.value("v_min", d.lead.v_min);
        c.lead.v_max = l.value("v_max", d.lead.v_max);
    }
}

namespace {

// Lead accelerations a[n] applied over (n-1, n]; a[0] = 0.
std::vector<double> lead_accelerations(const LeadProfile& lp, std::size_t steps, double delta, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> a(steps, 0.0);
    double v = lp.base_speed;
    std::size_t n = 1;
    while (n < steps) {
        const double seg_len = lp.segment_min + (lp.segment_max - lp.segment_min) * unit(rng);
        const double period = lp.period_min + (lp.period_max - lp.period_min) * unit(rng);
        const double amp = lp.wave_amplitude * (0.5 + 0.5 * unit(rng));
        const double phase = 2.0 * std::numbers::pi * unit(rng);
        const bool pulse = unit(rng) < lp.pulse_probability;
        const double pulse_sign = unit(rng) < 0.5 ? -1.0 : 1.0;
        const double pulse_start = seg_len * unit(rng);
        const double omega = 2.0 * std::numbers::pi / period;
        const auto seg_steps = static_cast<std::size_t>(std::max(1.0, std::round(seg_len / delta)));
        for (std::size_t i = 0; i < seg_steps && n < steps; ++i, ++n) {
            const double t = static_cast<double>(i) * delta;
            double acc = amp * omega * std::cos(omega * t + phase);
            if (pulse && t >= pulse_start && t < pulse_start + lp.pulse_duration)
                acc += pulse_sign * lp.pulse_accel;
            const double next = v + acc * delta;
            if (next > lp.v_max || next < lp.v_min) acc = 0.0;
            v += acc * delta;
            a[n] = acc;
        }
    }
    return a;
}

struct Platoon {
    std::vector<std::vector<double>> x, v, a;  // [vehicle][step]
};

bool simulate_platoon(const SynthConfig& c, const std::vector<double>& lead_a, double spacing,
                      std::uint64_t noise_seed, Platoon& out) {
    const std::size_t N = c.vehicles_per_platoon;
    const std::size_t T = c.duration_steps;
    out.x.assign(N, std::vector<double>(T));
    out.v.assign(N, std::vector<double>(T));
    out.a.assign(N, std::vector<double>(T, 0.0));
    for (std::size_t i = 0; i < N; ++i) {
        out.x[i][0] = -static_cast<double>(i) * spacing;
        out.v[i][0] = c.lead.base_speed;
    }
    Rng rng(noise_seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<double> next_a(N);
    for (std::size_t n = 0; n + 1 < T; ++n) {
        next_a[0] = lead_a[n + 1];
        for (std::size_t i = 1; i < N; ++i) {
            const double gap = out.x[i - 1][n] - out.x[i][n];
            if (!(gap > 0.0)) return false;
            double acc = 0.0;
            if (const auto* idm = std::get_if<IdmParams>(&c.true_params)) {
                acc = idm_accel(out.v[i][n], speed_difference(out.v[i][n], out.v[i - 1][n]), gap, *idm);
            } else {
                const double w = std::get<NewellParams>(c.true_params).w;
                const double idx = static_cast<double>(n + 1) - gap / (w * c.delta);
                acc = interpolate_series(std::span<const double>(out.a[i - 1].data(), n + 1), idx);
            }
            if (c.noise_sigma > 0.0) acc += c.noise_sigma * noise(rng);
            next_a[i] = acc;
        }
        for (std::size_t i = 0; i < N; ++i) {
            double x = out.x[i][n];
            double v = out.v[i][n];
            out.a[i][n + 1] = advance_kinematics(x, v, next_a[i], c.delta);
            out.x[i][n + 1] = x;
            out.v[i][n + 1] = v;
        }
    }
    for (std::size_t i = 1; i < N; ++i)
        if (!(out.x[i - 1][T - 1] - out.x[i][T - 1] > 0.0)) return false;
    return true;
}

double equilibrium_spacing(const SynthConfig& c) {
    if (c.initial_spacing > 0.0) return c.initial_spacing;
    if (const auto* idm = std::get_if<IdmParams>(&c.true_params)) {
        const double v = c.lead.base_speed;
        const double ratio = std::pow(v / idm->v_free, 4);
        if (ratio >= 1.0) return 50.0;
        return idm_desired_gap(v, 0.0, *idm) / std::sqrt(1.0 - ratio);
    }
    return 8.0;
}


}  // namespace

std::vector<RawTrajectoryRow> generate_corpus(const SynthConfig& config) {
    config.validate();
    std::vector<RawTrajectoryRow> rows;
    rows.reserve(config.platoons * config.vehicles_per_platoon * config.duration_steps);
    for (std::size_t p = 0; p < config.platoons; ++p) {
        Rng profile_rng(derive_seed(config.seed, 2 * p));
        const auto lead_a = lead_accelerations(config.lead, config.duration_steps, config.delta, profile_rng);
        Platoon platoon;
        double spacing = equilibrium_spacing(config);
        bool ok = false;
        for (int attempt = 0; attempt < 10 && !ok; ++attempt, spacing *= 1.5)
            ok = simulate_platoon(config, lead_a, spacing, derive_seed(config.seed, 2 * p + 1), platoon);
        if (!ok)
            throw DataError("synthetic platoon " + std::to_string(p) +
                            " kept closing a gap after 10 spacing retries");
        for (std::size_t i = 0; i < config.vehicles_per_platoon; ++i) {
            const std::int64_t id = 1000 * static_cast<std::int64_t>(p + 1) + static_cast<std::int64_t>(i);
            for (std::size_t n = 0; n < config.duration_steps; ++n) {
                RawTrajectoryRow r;
                r.vehicle_id = id;
                r.time = static_cast<double>(n) * config.delta;
                r.position = platoon.x[i][n];
                r.speed = platoon.v[i][n];
                r.accel = platoon.a[i][n];
                if (i > 0) r.leader_id = id - 1;
                rows.push_back(r);
            }
        }
    }
    return rows;
}

void write_trajectory_csv(std::span<const RawTrajectoryRow> rows, std::ostream& out) {
    out << kRawCsvHeader << '\n';
    for (const auto& r : rows) {
        out << r.vehicle_id << ',' << format_number(r.time) << ',' << format_number(r.position) << ','
            << format_number(r.speed) << ',' << format_number(r.accel) << ',';
        if (r.leader_id) out << *r.leader_id;
        out << '\n';
    }
    if (!out) throw DataError("failed writing trajectory CSV");
}

void write_trajectory_csv(std::span<const RawTrajectoryRow> rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    write_trajectory_csv(rows, out);
}

std::vector<VehicleSeries> generate_series(const SynthConfig& config) {
    std::stringstream buf;
    write_trajectory_csv(generate_corpus(config), buf);
    return parse_trajectory_csv(buf, config.delta);
}

}  // namespace perlcf
