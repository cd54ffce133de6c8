#include "perlcf/ingest.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "perlcf/error.hpp"
#include "perlcf/text.hpp"

namespace perlcf {

namespace {

constexpr double kGridTol = 1e-6;

struct LocatedRow {
    RawTrajectoryRow row;
    std::size_t line = 0;
};

std::string strip_cr(std::string s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    return s;
}

}  // namespace

std::vector<VehicleSeries> parse_trajectory_csv(std::istream& in, double delta) {
    if (!(delta > 0.0)) throw ConfigError("delta must be > 0");
    std::string line;
    if (!std::getline(in, line)) throw ParseError("no rows");
    line = strip_cr(line);
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);

    const std::array<std::string_view, 6> names{"vehicle_id", "time", "position",
                                                "speed",      "accel", "leader_id"};
    const auto header = split_fields(line);
    std::array<std::size_t, 6> col{};
    for (std::size_t c = 0; c < names.size(); ++c) {
        auto it = std::find(header.begin(), header.end(), names[c]);
        if (it == header.end()) throw ParseError("missing column '" + std::string(names[c]) + "'", 1);
        col[c] = static_cast<std::size_t>(it - header.begin());
    }

    std::vector<VehicleSeries> series;
    std::vector<std::vector<LocatedRow>> pending;
    std::unordered_map<std::int64_t, std::size_t> index;

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != header.size())
            throw ParseError("expected " + std::to_string(header.size()) + " fields, got " +
                                 std::to_string(fields.size()),
                             line_no);
        LocatedRow r;
        r.line = line_no;
        long long id = 0;
        if (!parse_integer(fields[col[0]], id)) throw ParseError("bad vehicle_id", line_no);
        r.row.vehicle_id = id;
        if (!parse_number(fields[col[1]], r.row.time)) throw ParseError("bad time", line_no);
        if (!parse_number(fields[col[2]], r.row.position)) throw ParseError("bad position", line_no);
        if (!parse_number(fields[col[3]], r.row.speed)) throw ParseError("bad speed", line_no);
        if (!parse_number(fields[col[4]], r.row.accel)) throw ParseError("bad accel", line_no);
        const auto leader = fields[col[5]];
        if (!leader.empty() && leader != "none") {
            long long lid = 0;
            if (!parse_integer(leader, lid)) throw ParseError("bad leader_id", line_no);
            r.row.leader_id = lid;
        }
        auto [it, inserted] = index.try_emplace(r.row.vehicle_id, series.size());
        if (inserted) {
            series.push_back(VehicleSeries{r.row.vehicle_id, 0, {}});
            pending.emplace_back();
        }
        pending[it->second].push_back(r);
    }
    if (series.empty()) throw ParseError("no rows");

    for (std::size_t v = 0; v < series.size(); ++v) {
        auto& rows = pending[v];
        std::stable_sort(rows.begin(), rows.end(), [](const LocatedRow& a, const LocatedRow& b) {
            return a.row.time < b.row.time;
        });
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const double t = rows[i].row.time;
            const double step = std::round(t / delta);
            if (std::abs(t - step * delta) > kGridTol)
                throw ParseError("time " + format_number(t) + " is off the delta grid", rows[i].line);
            if (i > 0) {
                const double dt = t - rows[i - 1].row.time;
                if (std::abs(dt) <= kGridTol)
                    throw ParseError("duplicate (vehicle, time) for vehicle " +
                                         std::to_string(series[v].vehicle_id),
                                     rows[i].line);
                if (std::abs(dt - delta) > kGridTol)
                    throw ParseError("non-uniform timestep " + format_number(dt) + " s for vehicle " +
                                         std::to_string(series[v].vehicle_id),
                                     rows[i].line);
            }
        }
        series[v].first_step = static_cast<std::int64_t>(std::llround(rows.front().row.time / delta));
        series[v].rows.reserve(rows.size());
        for (auto& r : rows) series[v].rows.push_back(r.row);
    }
    return series;
}

std::vector<VehicleSeries> parse_trajectory_csv(const std::filesystem::path& path, double delta) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return parse_trajectory_csv(in, delta);
}

std::vector<TrajectorySample> extract_samples(std::span<const VehicleSeries> series,
                                              const DatasetConfig& config, std::int64_t first_id) {
    config.validate();
    const std::size_t K = config.k_vehicles;
    const std::size_t Tb = config.t_back;
    const std::size_t Tf = config.t_fwd;
    const std::int64_t span_len = static_cast<std::int64_t>(Tb + Tf);

    std::unordered_map<std::int64_t, const VehicleSeries*> by_id;
    for (const auto& s : series) by_id.emplace(s.vehicle_id, &s);

    auto row_at = [&](const VehicleSeries* v, std::int64_t step) -> const RawTrajectoryRow* {
        if (step < v->first_step || step > v->last_step()) return nullptr;
        return &v->rows[static_cast<std::size_t>(step - v->first_step)];
    };

    // Lead-first chain ending at `ego` at `step`, or empty when incomplete.
    auto chain_at = [&](const VehicleSeries* ego, std::int64_t step) {
        std::vector<const VehicleSeries*> chain{ego};
        const VehicleSeries* cur = ego;
        for (std::size_t hop = 1; hop < K; ++hop) {
            const auto* row = row_at(cur, step);
            if (!row || !row->leader_id) return std::vector<const VehicleSeries*>{};
            auto it = by_id.find(*row->leader_id);
            if (it == by_id.end()) return std::vector<const VehicleSeries*>{};
            const auto* lead_row = row_at(it->second, step);
            if (!lead_row || !(lead_row->position - row->position > 0.0))
                return std::vector<const VehicleSeries*>{};
            cur = it->second;
            chain.push_back(cur);
        }
        std::reverse(chain.begin(), chain.end());
        return chain;
    };

    std::vector<TrajectorySample> out;
    std::int64_t next_id = first_id;

    auto emit_run = [&](const std::vector<const VehicleSeries*>& chain, std::int64_t run_start,
                        std::int64_t run_end) {
        for (std::int64_t w = run_start; w + span_len - 1 <= run_end; ++w) {
            TrajectorySample s;
            s.sample_id = next_id++;
            s.history.assign(K, std::vector<VehicleState>(Tb));
            s.positions.assign(K, std::vector<double>(Tb));
            s.leader_future_accel.assign(K - 1, std::vector<double>(Tf));
            s.ego_future_accel.resize(Tf);
            for (std::size_t k = 0; k < K; ++k) {
                s.vehicle_ids.push_back(chain[k]->vehicle_id);
                for (std::size_t t = 0; t < Tb; ++t) {
                    const auto* row = row_at(chain[k], w + static_cast<std::int64_t>(t));
                    s.history[k][t].accel = row->accel;
                    s.history[k][t].speed = row->speed;
                    s.positions[k][t] = row->position;
                }
            }
            for (std::size_t k = 0; k < K; ++k)
                for (std::size_t t = 0; t < Tb; ++t)
                    s.history[k][t].spacing =
                        k == 0 ? kNoLeader : s.positions[k - 1][t] - s.positions[k][t];
            const std::int64_t t0 = w + static_cast<std::int64_t>(Tb) - 1;
            for (std::size_t j = 0; j < Tf; ++j) {
                const std::int64_t step = t0 + 1 + static_cast<std::int64_t>(j);
                s.ego_future_accel[j] = row_at(chain[K - 1], step)->accel;
                for (std::size_t k = 0; k + 1 < K; ++k)
                    s.leader_future_accel[k][j] = row_at(chain[k], step)->accel;
            }
            s.t0 = row_at(chain[K - 1], t0)->time;
            s.ego_speed_at_t0 = s.history[K - 1][Tb - 1].speed;
            out.push_back(std::move(s));
        }
    };

    for (const auto& ego : series) {
        std::vector<const VehicleSeries*> current;
        std::int64_t run_start = 0;
        for (std::int64_t step = ego.first_step; step <= ego.last_step() + 1; ++step) {
            auto chain = step <= ego.last_step() ? chain_at(&ego, step)
                                                 : std::vector<const VehicleSeries*>{};
            if (chain != current) {
                if (!current.empty() && step - run_start >= span_len)
                    emit_run(current, run_start, step - 1);
                current = std::move(chain);
                run_start = step;
            }
        }
    }
    return out;
}

void to_json(nlohmann::json& j, const NormStats& s) {
    j = {{"accel_mean", s.accel_mean},     {"accel_std", s.accel_std},
         {"speed_mean", s.speed_mean},     {"speed_std", s.speed_std},
         {"spacing_mean", s.spacing_mean}, {"spacing_std", s.spacing_std}};
}

void from_json(const nlohmann::json& j, NormStats& s) {
    s.accel_mean = j.at("accel_mean").get<double>();
    s.accel_std = j.at("accel_std").get<double>();
    s.speed_mean = j.at("speed_mean").get<double>();
    s.speed_std = j.at("speed_std").get<double>();
    s.spacing_mean = j.at("spacing_mean").get<double>();
    s.spacing_std = j.at("spacing_std").get<double>();
}

namespace {

struct Moments {
    double sum = 0.0;
    std::size_t n = 0;
    std::vector<double> values;

    void add(double v) {
        sum += v;
        ++n;
        values.push_back(v);
    }

    std::pair<double, double> finish(const char* channel) const {
        if (n == 0) throw DataError(std::string("no values for channel ") + channel);
        const double mean = sum / static_cast<double>(n);
        double ss = 0.0;
        for (double v : values) ss += (v - mean) * (v - mean);
        const double sd = std::sqrt(ss / static_cast<double>(n));
        if (!(sd > 1e-12 * std::max(1.0, std::abs(mean))))
            throw DataError(std::string("zero variance in training channel ") + channel);
        return {mean, sd};
    }
};

}  // namespace

NormStats compute_norm_stats(std::span<const TrajectorySample> samples, const SplitIndex& split) {
    if (split.train_ids.empty()) throw DataError("compute_norm_stats: empty train split");
    const auto train = select_samples(samples, split.train_ids);
    Moments acc, spd, gap;
    for (const auto& s : train) {
        for (std::size_t k = 0; k < s.k(); ++k) {
            for (std::size_t t = 0; t < s.t_back(); ++t) {
                acc.add(s.history[k][t].accel);
                spd.add(s.history[k][t].speed);
                if (k > 0) gap.add(s.history[k][t].spacing);
            }
        }
    }
    NormStats st;
    std::tie(st.accel_mean, st.accel_std) = acc.finish("accel");
    std::tie(st.speed_mean, st.speed_std) = spd.finish("speed");
    std::tie(st.spacing_mean, st.spacing_std) = gap.finish("spacing");
    return st;
}

void write_samples(std::span<const TrajectorySample> samples, const DatasetConfig& config,
                   std::ostream& out) {
    nlohmann::json header = {{"format_version", 1},
                             {"delta", config.delta},
                             {"k_vehicles", config.k_vehicles},
                             {"t_back", config.t_back},
                             {"t_fwd", config.t_fwd}};
    out << header.dump() << '\n';
    for (const auto& s : samples) out << nlohmann::json(s).dump() << '\n';
    if (!out) throw DataError("failed writing samples");
}

void write_samples(std::span<const TrajectorySample> samples, const DatasetConfig& config,
                   const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    write_samples(samples, config, out);
}

SampleFile read_samples(std::istream& in) {
    SampleFile file;
    std::string line;
    if (!std::getline(in, line)) throw ParseError("missing header", 1);
    try {
        const auto h = nlohmann::json::parse(line);
        file.header.format_version = h.at("format_version").get<int>();
        if (file.header.format_version != 1)
            throw ParseError("unsupported format_version " + std::to_string(file.header.format_version), 1);
        file.header.delta = h.at("delta").get<double>();
        file.header.k_vehicles = h.at("k_vehicles").get<std::size_t>();
        file.header.t_back = h.at("t_back").get<std::size_t>();
        file.header.t_fwd = h.at("t_fwd").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed header: ") + e.what(), 1);
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        TrajectorySample s;
        try {
            s = nlohmann::json::parse(line).get<TrajectorySample>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("malformed sample: ") + e.what(), line_no);
        } catch (const DataError& e) {
            throw ParseError(e.what(), line_no);
        }
        if (s.k() != file.header.k_vehicles || s.t_back() != file.header.t_back ||
            s.t_fwd() != file.header.t_fwd)
            throw ParseError("sample shape disagrees with header", line_no);
        file.samples.push_back(std::move(s));
    }
    return file;
}

SampleFile read_samples(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return read_samples(in);
}

std::vector<TrajectorySample> select_samples(std::span<const TrajectorySample> samples,
                                             std::span<const std::int64_t> ids) {
    std::unordered_map<std::int64_t, std::size_t> pos;
    pos.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) pos.emplace(samples[i].sample_id, i);
    std::vector<TrajectorySample> out;
    out.reserve(ids.size());
    for (auto id : ids) {
        auto it = pos.find(id);
        if (it == pos.end()) throw DataError("unknown sample id " + std::to_string(id));
        out.push_back(samples[it->second]);
    }
    return out;
}

}  // namespace perlcf
