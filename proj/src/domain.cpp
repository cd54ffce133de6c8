#include "perlcf/domain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "perlcf/error.hpp"

namespace perlcf {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

void DatasetConfig::validate() const {
    if (!(delta > 0.0)) throw ConfigError("dataset.delta must be > 0");
    if (k_vehicles < 2) throw ConfigError("dataset.k_vehicles must be >= 2");
    if (t_back < 1) throw ConfigError("dataset.t_back must be >= 1");
    if (t_fwd < 1) throw ConfigError("dataset.t_fwd must be >= 1");
    if (!(omega_train > 0.0)) throw ConfigError("dataset.omega_train must be > 0");
    if (!(omega_val >= 0.0)) throw ConfigError("dataset.omega_val must be >= 0");
    if (!(omega_train + omega_val < 1.0))
        throw ConfigError("dataset.omega_train + dataset.omega_val must be < 1");
}

void to_json(nlohmann::json& j, const DatasetConfig& c) {
    j = {{"delta", c.delta},           {"k_vehicles", c.k_vehicles},
         {"t_back", c.t_back},         {"t_fwd", c.t_fwd},
         {"omega_train", c.omega_train}, {"omega_val", c.omega_val},
         {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, DatasetConfig& c) {
    DatasetConfig d;
    c.delta = j.value("delta", d.delta);
    c.k_vehicles = j.value("k_vehicles", d.k_vehicles);
    c.t_back = j.value("t_back", d.t_back);
    c.t_fwd = j.value("t_fwd", d.t_fwd);
    c.omega_train = j.value("omega_train", d.omega_train);
    c.omega_val = j.value("omega_val", d.omega_val);
    c.seed = j.value("seed", d.seed);
}

double TrajectorySample::spacing(std::size_t k, std::size_t t) const {
    if (k == 0) throw DataError("spacing requested for the lead vehicle (no leader)");
    return history.at(k).at(t).spacing;
}

void validate_sample(const TrajectorySample& s, double spacing_tol) {
    const auto id = " (sample " + std::to_string(s.sample_id) + ")";
    const std::size_t K = s.k();
    const std::size_t Tb = s.t_back();
    const std::size_t Tf = s.t_fwd();
    if (K < 2 || Tb < 1 || Tf < 1) throw DataError("sample has empty dimensions" + id);
    if (s.positions.size() != K) throw DataError("positions must have K rows" + id);
    if (s.leader_future_accel.size() != K - 1)
        throw DataError("leader_future_accel must have K-1 rows" + id);
    if (!s.vehicle_ids.empty() && s.vehicle_ids.size() != K)
        throw DataError("vehicle_ids must have K entries" + id);
    for (std::size_t k = 0; k < K; ++k) {
        if (s.history[k].size() != Tb || s.positions[k].size() != Tb)
            throw DataError("history rows must have T^b entries" + id);
        for (std::size_t t = 0; t < Tb; ++t) {
            const auto& st = s.history[k][t];
            if (!std::isfinite(st.accel) || !std::isfinite(st.speed) ||
                !std::isfinite(s.positions[k][t]))
                throw DataError("non-finite history value" + id);
            if (st.speed < 0.0) throw DataError("negative speed" + id);
            if (k == 0) {
                if (!std::isnan(st.spacing)) throw DataError("lead spacing must be the sentinel" + id);
                continue;
            }
            if (!(st.spacing > 0.0)) throw DataError("non-positive spacing" + id);
            const double gap = s.positions[k - 1][t] - s.positions[k][t];
            if (std::abs(gap - st.spacing) > spacing_tol)
                throw DataError("spacing does not match positions" + id);
        }
    }
    for (const auto& row : s.leader_future_accel)
        if (row.size() != Tf) throw DataError("leader_future_accel rows must have T^f entries" + id);
    if (std::abs(s.ego_speed_at_t0 - s.history[K - 1][Tb - 1].speed) > 1e-12)
        throw DataError("ego_speed_at_t0 disagrees with history" + id);
}

namespace {

nlohmann::json grid_field(const TrajectorySample& s, double VehicleState::*field) {
    auto out = nlohmann::json::array();
    for (const auto& row : s.history) {
        auto r = nlohmann::json::array();
        for (const auto& st : row) {
            const double v = st.*field;
            if (std::isnan(v)) r.push_back(nullptr);
            else r.push_back(v);
        }
        out.push_back(std::move(r));
    }
    return out;
}

double number_or_sentinel(const nlohmann::json& v) {
    return v.is_null() ? kNoLeader : v.get<double>();
}

}  // namespace

void to_json(nlohmann::json& j, const TrajectorySample& s) {
    j = nlohmann::json::object();
    j["id"] = s.sample_id;
    j["vehicle_ids"] = s.vehicle_ids;
    j["t0"] = s.t0;
    j["accel"] = grid_field(s, &VehicleState::accel);
    j["speed"] = grid_field(s, &VehicleState::speed);
    j["spacing"] = grid_field(s, &VehicleState::spacing);
    j["position"] = s.positions;
    j["ego_future_accel"] = s.ego_future_accel;
    j["ego_speed_t0"] = s.ego_speed_at_t0;
    j["leader_future_accel"] = s.leader_future_accel;
}

void from_json(const nlohmann::json& j, TrajectorySample& s) {
    s.sample_id = j.at("id").get<std::int64_t>();
    s.vehicle_ids = j.value("vehicle_ids", std::vector<std::int64_t>{});
    s.t0 = j.value("t0", 0.0);
    const auto& a = j.at("accel");
    const auto& v = j.at("speed");
    const auto& d = j.at("spacing");
    const std::size_t K = a.size();
    if (v.size() != K || d.size() != K) throw DataError("history grids disagree on K");
    s.history.assign(K, {});
    for (std::size_t k = 0; k < K; ++k) {
        const std::size_t Tb = a[k].size();
        if (v[k].size() != Tb || d[k].size() != Tb) throw DataError("history grids disagree on T^b");
        s.history[k].resize(Tb);
        for (std::size_t t = 0; t < Tb; ++t) {
            s.history[k][t].accel = a[k][t].get<double>();
            s.history[k][t].speed = v[k][t].get<double>();
            s.history[k][t].spacing = number_or_sentinel(d[k][t]);
        }
    }
    s.positions = j.at("position").get<std::vector<std::vector<double>>>();
    s.ego_future_accel = j.at("ego_future_accel").get<std::vector<double>>();
    s.ego_speed_at_t0 = j.at("ego_speed_t0").get<double>();
    s.leader_future_accel = j.at("leader_future_accel").get<std::vector<std::vector<double>>>();
}

void to_json(nlohmann::json& j, const SplitIndex& s) {
    j = {{"train", s.train_ids}, {"val", s.val_ids}, {"test", s.test_ids}};
}

std::size_t floor_fraction(double fraction, std::size_t count) {
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(count) + 1e-9));
}

SplitIndex split_dataset(std::span<const std::int64_t> ids, const DatasetConfig& config) {
    config.validate();
    if (ids.size() < 3) throw ConfigError("split_dataset needs at least 3 samples");
    std::vector<std::int64_t> order(ids.begin(), ids.end());
    std::sort(order.begin(), order.end());
    if (std::adjacent_find(order.begin(), order.end()) != order.end())
        throw ConfigError("split_dataset: duplicate sample id");

    const std::size_t n = order.size();
    const std::size_t n_train = floor_fraction(config.omega_train, n);
    const std::size_t n_val = floor_fraction(config.omega_val, n);
    if (n_train == 0 || n_val == 0 || n_train + n_val >= n)
        throw ConfigError("split_dataset: fractions leave an empty train, val or test set");

    Rng rng(derive_seed(config.seed, 0x5917));
    std::shuffle(order.begin(), order.end(), rng);

    SplitIndex out;
    out.train_ids.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                       order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    out.test_ids.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
    std::sort(out.train_ids.begin(), out.train_ids.end());
    std::sort(out.val_ids.begin(), out.val_ids.end());
    std::sort(out.test_ids.begin(), out.test_ids.end());
    return out;
}

}  // namespace perlcf
