#pragma once

#include <filesystem>
#include <string>

#include "perlcf/domain.hpp"

namespace testutil {

// Platoon cruising at constant speed with equal gaps; lead is vehicle 0.
inline perlcf::TrajectorySample cruising_sample(std::size_t K, std::size_t Tb, std::size_t Tf, double gap = 20.0,
                                                double v = 10.0, double delta = 0.1, std::int64_t id = 0) {
    perlcf::TrajectorySample s;
    s.sample_id = id;
    s.t0 = (static_cast<double>(Tb) - 1.0) * delta;
    s.history.assign(K, std::vector<perlcf::VehicleState>(Tb));
    s.positions.assign(K, std::vector<double>(Tb));
    for (std::size_t k = 0; k < K; ++k) {
        s.vehicle_ids.push_back(static_cast<std::int64_t>(k + 1));
        for (std::size_t t = 0; t < Tb; ++t) {
            s.positions[k][t] = static_cast<double>(K - 1 - k) * gap + v * delta * static_cast<double>(t);
            s.history[k][t] = {0.0, v, k == 0 ? perlcf::kNoLeader : gap};
        }
    }
    s.ego_future_accel.assign(Tf, 0.0);
    s.leader_future_accel.assign(K - 1, std::vector<double>(Tf, 0.0));
    s.ego_speed_at_t0 = v;
    return s;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::path(PERLCF_TEST_TMP) / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testutil
