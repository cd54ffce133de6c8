#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "perlcf/domain.hpp"

namespace perlcf {

struct RawTrajectoryRow {
    std::int64_t vehicle_id = 0;
    double time = 0.0;      // s
    double position = 0.0;  // m
    double speed = 0.0;     // m/s
    double accel = 0.0;     // m/s^2
    std::optional<std::int64_t> leader_id;
};

// All rows of one vehicle on the uniform time grid, sorted by time.
struct VehicleSeries {
    std::int64_t vehicle_id = 0;
    std::int64_t first_step = 0;  // round(time / delta) of the first row
    std::vector<RawTrajectoryRow> rows;

    std::int64_t last_step() const noexcept {
        return first_step + static_cast<std::int64_t>(rows.size()) - 1;
    }
};

inline constexpr const char* kRawCsvHeader = "vehicle_id,time,position,speed,accel,leader_id";

// Series are returned in order of each vehicle's first appearance in the file.
// Errors (missing column, gaps, duplicates, bad numbers) name the line.
std::vector<VehicleSeries> parse_trajectory_csv(std::istream& in, double delta);
std::vector<VehicleSeries> parse_trajectory_csv(const std::filesystem::path& path, double delta);

/// Emits one sample per stride-1 window over every maximal run of steps in
/// which the same K-vehicle leader chain ending at an ego is co-present.
/// Samples are numbered from `first_id` in (ego order, run order, window start).
std::vector<TrajectorySample> extract_samples(std::span<const VehicleSeries> series,
                                              const DatasetConfig& config,
                                              std::int64_t first_id = 0);

struct NormStats {
    double accel_mean = 0.0, accel_std = 1.0;
    double speed_mean = 0.0, speed_std = 1.0;
    double spacing_mean = 0.0, spacing_std = 1.0;
};

void to_json(nlohmann::json& j, const NormStats& s);
void from_json(const nlohmann::json& j, NormStats& s);

// Pooled z-score statistics over the history inputs of training samples only.
// Lead-vehicle spacing (the sentinel) is excluded from the spacing channel.
NormStats compute_norm_stats(std::span<const TrajectorySample> samples, const SplitIndex& split);

struct SampleFileHeader {
    int format_version = 1;
    double delta = 0.1;
    std::size_t k_vehicles = 0;
    std::size_t t_back = 0;
    std::size_t t_fwd = 0;
};

struct SampleFile {
    SampleFileHeader header;
    std::vector<TrajectorySample> samples;
};

// JSON-lines: a header object on line 1, then one sample per line.
void write_samples(std::span<const TrajectorySample> samples, const DatasetConfig& config,
                   std::ostream& out);
void write_samples(std::span<const TrajectorySample> samples, const DatasetConfig& config,
                   const std::filesystem::path& path);
SampleFile read_samples(std::istream& in);
SampleFile read_samples(const std::filesystem::path& path);

// Looks up samples by id; throws DataError for unknown ids.
std::vector<TrajectorySample> select_samples(std::span<const TrajectorySample> samples,
                                             std::span<const std::int64_t> ids);

}  // namespace perlcf
