#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "json.hpp"

namespace perlcf {

using Rng = std::mt19937_64;

// Mixes a base seed with a stream index (splitmix64 finalizer) so that
// repetitions, cells and restarts each own an independent generator.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

struct DatasetConfig {
    double delta = 0.1;           // s
    std::size_t k_vehicles = 4;   // chained vehicles per sample, lead first
    std::size_t t_back = 50;      // history steps, t0 included
    std::size_t t_fwd = 1;        // horizon steps
    double omega_train = 0.6;
    double omega_val = 0.2;
    std::uint64_t seed = 0;

    // Throws ConfigError when any invariant is violated.
    void validate() const;
};

void to_json(nlohmann::json& j, const DatasetConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);

// Lead vehicles have no spacing; the stored value is NaN and the checked
// accessor on TrajectorySample refuses to return it.
inline constexpr double kNoLeader = std::numeric_limits<double>::quiet_NaN();

struct VehicleState {
    double accel = 0.0;    // m/s^2
    double speed = 0.0;    // m/s
    double spacing = 0.0;  // m, front-position difference to the preceding vehicle
};

/// One training/evaluation unit: K chained vehicles observed over T^b
/// history steps ending at t0, plus the ego's realized future accelerations.
///
/// Vehicle index 0 is the upstream lead vehicle, index K-1 is the ego.
struct TrajectorySample {
    std::int64_t sample_id = 0;
    std::vector<std::int64_t> vehicle_ids;               // [K]
    double t0 = 0.0;                                     // s
    std::vector<std::vector<VehicleState>> history;      // [K][T^b]
    std::vector<std::vector<double>> positions;          // [K][T^b], m
    std::vector<double> ego_future_accel;                // [T^f]
    double ego_speed_at_t0 = 0.0;
    std::vector<std::vector<double>> leader_future_accel;  // [K-1][T^f]

    std::size_t k() const noexcept { return history.size(); }
    std::size_t t_back() const noexcept { return history.empty() ? 0 : history.front().size(); }
    std::size_t t_fwd() const noexcept { return ego_future_accel.size(); }

    std::size_t ego() const noexcept { return k() - 1; }
    std::size_t last() const noexcept { return t_back() - 1; }

    // Throws DataError when k == 0 (the lead vehicle has no leader).
    double spacing(std::size_t k, std::size_t t) const;

    // Number of scalars in the network input state: 3 * K * T^b.
    std::size_t input_size() const noexcept { return 3 * k() * t_back(); }
};

// Checks shapes, grid consistency and the spacing/position identity.
void validate_sample(const TrajectorySample& s, double spacing_tol = 1e-6);

void to_json(nlohmann::json& j, const TrajectorySample& s);
void from_json(const nlohmann::json& j, TrajectorySample& s);

struct SplitIndex {
    std::vector<std::int64_t> train_ids;
    std::vector<std::int64_t> val_ids;
    std::vector<std::int64_t> test_ids;
};

void to_json(nlohmann::json& j, const SplitIndex& s);

// Floor of fraction * count, robust to products like 0.29 * 100 landing a
// hair below the exact integer.
std::size_t floor_fraction(double fraction, std::size_t count);

/// Seeded random partition of `ids` into train/val/test with sizes
/// floor(omega_train * I), floor(omega_val * I) and the remainder.
/// Each output set is sorted ascending. Throws ConfigError when a set would
/// be empty or fewer than three ids are given.
SplitIndex split_dataset(std::span<const std::int64_t> ids, const DatasetConfig& config);

}  // namespace perlcf
