#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "perlcf/ingest.hpp"
#include "perlcf/physics.hpp"

namespace perlcf {

enum class SynthGenerator { idm, newell_shift };

std::string to_string(SynthGenerator g);
SynthGenerator parse_synth_generator(const std::string& name);

// Lead-vehicle speed profile: consecutive sinusoidal speed waves of random
// period and amplitude, with occasional constant-acceleration pulses.
struct LeadProfile {
    double base_speed = 12.0;        // m/s, initial speed of every vehicle
    double wave_amplitude = 3.0;     // m/s, upper bound on each wave's amplitude
    double period_min = 8.0;         // s
    double period_max = 20.0;        // s
    double segment_min = 10.0;       // s
    double segment_max = 25.0;       // s
    double pulse_probability = 0.3;  // per segment
    double pulse_accel = 1.0;        // m/s^2
    double pulse_duration = 2.0;     // s
    double v_min = 2.0;              // m/s
    double v_max = 25.0;             // m/s
};

struct SynthConfig {
    SynthGenerator generator = SynthGenerator::idm;
    PhysicsParams true_params = IdmParams{};
    std::size_t platoons = 4;
    std::size_t vehicles_per_platoon = 6;
    std::size_t duration_steps = 400;
    double delta = 0.1;
    LeadProfile lead;
    double noise_sigma = 0.0;      // m/s^2, added to follower accelerations
    double initial_spacing = 0.0;  // m; 0 selects the model's equilibrium gap
    std::uint64_t seed = 0;

    void validate() const;
};

// Defaults per generator. A newell_shift follower's shift follows its own
// gap, so speed differences feed back into the gap and it drifts; newell_shift
// runs are shorter, with a gentler lead, so gaps stay within a 50-step history.
SynthConfig synth_defaults(SynthGenerator g);

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

/// Rows of every vehicle in platoon order, then vehicle order, then time.
/// Vehicle ids are 1000 * (platoon + 1) + position in platoon; each
/// follower's leader is the vehicle directly ahead. Retries with wider
/// initial spacing when a gap closes, and throws DataError after 10 attempts.
std::vector<RawTrajectoryRow> generate_corpus(const SynthConfig& config);

void write_trajectory_csv(std::span<const RawTrajectoryRow> rows, std::ostream& out);
void write_trajectory_csv(std::span<const RawTrajectoryRow> rows, const std::filesystem::path& path);

// Convenience: generate straight into in-memory series (same as writing the
// CSV and parsing it back).
std::vector<VehicleSeries> generate_series(const SynthConfig& config);

}  // namespace perlcf
