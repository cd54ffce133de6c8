#include "perlcf/eval.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>
#include <unordered_map>

#include "perlcf/error.hpp"
#include "perlcf/ingest.hpp"
#include "perlcf/text.hpp"

namespace perlcf {

MseResult mse_metrics(std::span<const PredictionRecord> records, std::span<const TrajectorySample> truth,
                      double delta) {
    if (records.size() != truth.size())
        throw DataError("record count " + std::to_string(records.size()) + " does not match sample count " +
                        std::to_string(truth.size()));
    if (records.empty()) throw DataError("no records to evaluate");
    std::unordered_map<std::int64_t, const TrajectorySample*> by_id;
    for (const auto& s : truth)
        if (!by_id.emplace(s.sample_id, &s).second)
            throw DataError("duplicate sample id " + std::to_string(s.sample_id));

    MseResult out;
    double sa = 0.0, sv = 0.0;
    std::size_t n = 0;
    for (const auto& r : records) {
        const auto it = by_id.find(r.sample_id);
        if (it == by_id.end()) throw DataError("record id " + std::to_string(r.sample_id) + " has no sample");
        const auto& s = *it->second;
        const std::size_t T = s.t_fwd();
        if (r.predicted_accel.size() != T || r.predicted_speed.size() != T)
            throw DataError("record " + std::to_string(r.sample_id) + " has the wrong horizon");
        const auto vt = reconstruct_speed(s.ego_speed_at_t0, s.ego_future_accel, delta);
        double ea = 0.0, ev = 0.0;
        for (std::size_t j = 0; j < T; ++j) {
            const double da = r.predicted_accel[j] - s.ego_future_accel[j];
            const double dv = r.predicted_speed[j] - vt[j];
            ea += da * da;
            ev += dv * dv;
        }
        sa += ea;
        sv += ev;
        n += T;
        out.per_sample.push_back({r.sample_id, ea / static_cast<double>(T), ev / static_cast<double>(T)});
        by_id.erase(it);
    }
    out.mse_a = sa / static_cast<double>(n);
    out.mse_v = sv / static_cast<double>(n);
    if (!std::isfinite(out.mse_a) || !std::isfinite(out.mse_v)) throw NumericError("non-finite test MSE");
    return out;
}

void to_json(nlohmann::json& j, const EvalReport& r) {
    auto per = nlohmann::json::array();
    for (const auto& e : r.per_sample) per.push_back({{"sample_id", e.sample_id}, {"mse_a", e.mse_a}, {"mse_v", e.mse_v}});
    j = {{"variant", to_string(r.variant)},
         {"data_size", r.data_size},
         {"seed", r.seed},
         {"mse_a_test", r.mse_a_test},
         {"mse_v_test", r.mse_v_test},
         {"collision_count", r.collision_count},
         {"per_sample", per}};
    j["train"] = r.train ? nlohmann::json(*r.train) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, EvalReport& r) {
    r.variant = parse_variant(j.at("variant").get<std::string>());
    r.data_size = j.at("data_size").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.mse_a_test = j.at("mse_a_test").get<double>();
    r.mse_v_test = j.at("mse_v_test").get<double>();
    r.collision_count = j.at("collision_count").get<std::size_t>();
    r.per_sample.clear();
    for (const auto& e : j.at("per_sample"))
        r.per_sample.push_back({e.at("sample_id").get<std::int64_t>(), e.at("mse_a").get<double>(),
                                e.at("mse_v").get<double>()});
    r.train.reset();
    if (j.contains("train") && !j["train"].is_null()) r.train = j["train"].get<TrainReport>();
}

EvalReport evaluate_records(Variant variant, std::span<const PredictionRecord> records,
                            std::span<const TrajectorySample> truth, double delta) {
    auto m = mse_metrics(records, truth, delta);
    EvalReport r;
    r.variant = variant;
    r.mse_a_test = m.mse_a;
    r.mse_v_test = m.mse_v;
    r.per_sample = std::move(m.per_sample);
    r.collision_count = static_cast<std::size_t>(
        std::count_if(records.begin(), records.end(), [](const PredictionRecord& p) { return p.collision; }));
    return r;
}

void SweepConfig::validate() const {
    if (data_sizes.empty()) throw ConfigError("sweep.data_sizes is empty");
    if (variants.empty()) throw ConfigError("sweep.variants is empty");
    if (seeds.empty()) throw ConfigError("sweep.seeds is empty");
    if (jobs < 1) throw ConfigError("sweep.jobs must be >= 1");
    for (auto n : data_sizes)
        if (n == 0) throw ConfigError("sweep.data_sizes entries must be positive");
    dataset.validate();
    net.validate();
    train.validate();
}

void to_json(nlohmann::json& j, const SweepConfig& c) {
    std::vector<std::string> variants;
    for (auto v : c.variants) variants.push_back(to_string(v));
    j = {{"data_sizes", c.data_sizes}, {"variants", variants},  {"model", to_string(c.model)},
         {"seeds", c.seeds},           {"dataset", c.dataset},  {"net", c.net},
         {"train", c.train},           {"calibration", c.calibration}, {"jobs", c.jobs}};
}

void from_json(const nlohmann::json& j, SweepConfig& c) {
    SweepConfig d;
    c.data_sizes = j.value("data_sizes", d.data_sizes);
    c.variants = d.variants;
    if (j.contains("variants")) {
        c.variants.clear();
        for (const auto& v : j["variants"]) c.variants.push_back(parse_variant(v.get<std::string>()));
    }
    c.model = parse_physics_model(j.value("model", to_string(d.model)));
    c.seeds = j.value("seeds", d.seeds);
    c.dataset = j.contains("dataset") ? j["dataset"].get<DatasetConfig>() : d.dataset;
    c.net = j.contains("net") ? j["net"].get<NetConfig>() : d.net;
    c.train = j.contains("train") ? j["train"].get<TrainConfig>() : d.train;
    c.calibration = j.contains("calibration") ? j["calibration"].get<CalibrationConfig>() : d.calibration;
    c.jobs = j.value("jobs", d.jobs);
}

std::size_t SweepResult::failures() const {
    return static_cast<std::size_t>(
        std::count_if(cells.begin(), cells.end(), [](const SweepCell& c) { return !c.error.empty(); }));
}

std::vector<std::int64_t> nested_subset(std::span<const std::int64_t> train_ids, std::size_t n,
                                        std::uint64_t seed) {
    if (n > train_ids.size())
        throw ConfigError("data size " + std::to_string(n) + " exceeds the train split (" +
                          std::to_string(train_ids.size()) + ")");
    std::vector<std::int64_t> ids(train_ids.begin(), train_ids.end());
    std::sort(ids.begin(), ids.end());
    Rng rng(derive_seed(seed, 0x5B5E7));
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(n);
    std::sort(ids.begin(), ids.end());
    return ids;
}

namespace {

struct Group {
    std::size_t size_index = 0;
    std::size_t seed_index = 0;
};

}  // namespace

SweepResult run_sweep(std::span<const TrajectorySample> samples, const SweepConfig& config) {
    config.validate();
    std::vector<std::int64_t> ids;
    ids.reserve(samples.size());
    for (const auto& s : samples) ids.push_back(s.sample_id);

    SweepResult result;
    result.split = split_dataset(ids, config.dataset);
    for (auto n : config.data_sizes)
        if (n > result.split.train_ids.size())
            throw ConfigError("data size " + std::to_string(n) + " exceeds the train split (" +
                              std::to_string(result.split.train_ids.size()) + ")");
    const auto test = select_samples(samples, result.split.test_ids);
    const double delta = config.dataset.delta;

    const std::size_t nv = config.variants.size(), ns = config.seeds.size();
    // cells[(size * nv + variant) * ns + seed]
    result.cells.resize(config.data_sizes.size() * nv * ns);
    std::vector<std::optional<CalibrationRepetition>> fits(config.data_sizes.size() * ns);

    std::vector<Group> groups;
    for (std::size_t a = 0; a < config.data_sizes.size(); ++a)
        for (std::size_t b = 0; b < ns; ++b) groups.push_back({a, b});

    auto run_group = [&](const Group& g) {
        const std::size_t n = config.data_sizes[g.size_index];
        const std::uint64_t seed = config.seeds[g.seed_index];
        SplitIndex split = result.split;
        split.train_ids = nested_subset(result.split.train_ids, n, seed);

        std::optional<PhysicsParams> physics;
        std::string calib_error;
        const bool need_physics = std::any_of(config.variants.begin(), config.variants.end(), uses_physics);
        if (need_physics) {
            try {
                const auto train = select_samples(samples, split.train_ids);
                CalibrationConfig cc = config.calibration;
                cc.model = config.model;
                cc.seed = seed;
                cc.delta = delta;
                cc.sample_size = n;
                const auto fit = fit_physics_detailed(train, cc);
                physics = fit.params;
                fits[g.size_index * ns + g.seed_index] =
                    CalibrationRepetition{fit.params, fit.objective / static_cast<double>(n)};
            } catch (const std::exception& e) {
                calib_error = std::string("calibration failed: ") + e.what();
            }
        }

        for (std::size_t v = 0; v < nv; ++v) {
            auto& cell = result.cells[(g.size_index * nv + v) * ns + g.seed_index];
            cell.variant = config.variants[v];
            cell.data_size = n;
            cell.seed = seed;
            if (uses_physics(cell.variant) && !physics) {
                cell.error = calib_error;
                continue;
            }
            try {
                TrainConfig tc = config.train;
                tc.variant = cell.variant;
                tc.seed = seed;
                tc.delta = delta;
                NetConfig nc = config.net;
                nc.seed = seed;
                auto trained = train_variant(samples, split, tc, nc, physics);
                PredictorArtifacts art;
                art.physics = physics;
                art.delta = delta;
                if (uses_network(cell.variant)) art.net = std::move(trained.net);
                const auto records = predict_all(cell.variant, test, art);
                EvalReport rep = evaluate_records(cell.variant, records, test, delta);
                rep.data_size = n;
                rep.seed = seed;
                trained.report.test = TestMetrics{rep.mse_a_test, rep.mse_v_test};
                rep.train = std::move(trained.report);
                cell.report = std::move(rep);
            } catch (const std::exception& e) {
                cell.error = e.what();
            }
        }
    };

    const std::size_t workers = std::min(config.jobs, groups.size());
    if (workers <= 1) {
        for (const auto& g : groups) run_group(g);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i; (i = next.fetch_add(1)) < groups.size();) run_group(groups[i]);
            });
        for (auto& t : pool) t.join();
    }

    for (std::size_t a = 0; a < config.data_sizes.size(); ++a) {
        std::vector<CalibrationRepetition> runs;
        for (std::size_t b = 0; b < ns; ++b)
            if (fits[a * ns + b]) runs.push_back(*fits[a * ns + b]);
        if (!runs.empty())
            result.calibrations.push_back(
                summarize_calibration(config.model, config.data_sizes[a], config.seeds.front(), std::move(runs)));
    }
    return result;
}

namespace {

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw DataError("failed writing " + path.string());
}

std::ofstream open_csv(const std::filesystem::path& path) {
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

}  // namespace

std::vector<std::filesystem::path> write_sweep(const SweepResult& result, const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    std::vector<EvalReport> reports;
    auto table = nlohmann::json::array();

    auto csv_path = dir / "aggregate.csv";
    auto csv = open_csv(csv_path);
    csv << "variant,data_size,seed,status,mse_a_test,mse_v_test,best_epoch,epochs\n";
    for (const auto& c : result.cells) {
        const auto cell_dir = dir / "sweep" / to_string(c.variant) / std::to_string(c.data_size) / std::to_string(c.seed);
        nlohmann::json row = {{"variant", to_string(c.variant)}, {"data_size", c.data_size}, {"seed", c.seed}};
        if (c.report) {
            write_json(cell_dir / "report.json", *c.report);
            files.push_back(cell_dir / "report.json");
            reports.push_back(*c.report);
            const std::size_t best = c.report->train ? c.report->train->best_epoch : 0;
            const std::size_t epochs = c.report->train ? c.report->train->per_epoch.size() : 0;
            csv << to_string(c.variant) << ',' << c.data_size << ',' << c.seed << ",ok,"
                << format_number(c.report->mse_a_test) << ',' << format_number(c.report->mse_v_test) << ','
                << best << ',' << epochs << '\n';
            row["status"] = "ok";
            row["mse_a_test"] = c.report->mse_a_test;
            row["mse_v_test"] = c.report->mse_v_test;
            row["best_epoch"] = best;
            row["epochs"] = epochs;
        } else {
            write_json(cell_dir / "error.json", {{"error", c.error}});
            files.push_back(cell_dir / "error.json");
            csv << to_string(c.variant) << ',' << c.data_size << ',' << c.seed << ",failed,,,,\n";
            row["status"] = "failed";
            row["error"] = c.error;
        }
        table.push_back(row);
    }
    if (!csv) throw DataError("failed writing " + csv_path.string());
    csv.close();
    files.push_back(csv_path);

    write_json(dir / "aggregate.json", {{"split", result.split}, {"cells", table}});
    files.push_back(dir / "aggregate.json");

    for (const auto& cal : result.calibrations) {
        const auto p = dir / "calibration" / (std::to_string(cal.sample_size) + ".json");
        write_json(p, cal);
        files.push_back(p);
    }
    if (!reports.empty()) {
        const auto plot = emit_plot_data(reports, dir);
        files.insert(files.end(), plot.begin(), plot.end());
    }
    return files;
}

std::vector<std::filesystem::path> emit_plot_data(std::span<const EvalReport> reports,
                                                  const std::filesystem::path& dir) {
    if (reports.empty()) throw DataError("no reports to emit");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    const auto summary_path = dir / "summary.csv";
    const auto conv_path = dir / "convergence.csv";

    auto summary = open_csv(summary_path);
    summary << "variant,data_size,seed,metric,value\n";
    for (const auto& r : reports) {
        const std::string key = to_string(r.variant) + ',' + std::to_string(r.data_size) + ',' + std::to_string(r.seed);
        summary << key << ",mse_a_test," << format_number(r.mse_a_test) << '\n';
        summary << key << ",mse_v_test," << format_number(r.mse_v_test) << '\n';
    }
    if (!summary) throw DataError("failed writing " + summary_path.string());

    auto conv = open_csv(conv_path);
    conv << "variant,data_size,seed,epoch,mse_a_val,mse_v_val\n";
    for (const auto& r : reports) {
        if (!r.train) continue;
        for (const auto& e : r.train->per_epoch)
            conv << to_string(r.variant) << ',' << r.data_size << ',' << r.seed << ',' << e.epoch << ','
                 << format_number(e.mse_a_val) << ',' << format_number(e.mse_v_val) << '\n';
    }
    if (!conv) throw DataError("failed writing " + conv_path.string());
    return {summary_path, conv_path};
}

namespace {

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path, std::string_view header) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != header) throw ParseError("expected header '" + std::string(header) + "'", 1);
    const std::size_t width = split_fields(header).size();
    std::vector<std::vector<std::string>> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_fields(line);
        if (fields.size() != width) throw ParseError("expected " + std::to_string(width) + " fields", line_no);
        rows.emplace_back(fields.begin(), fields.end());
    }
    return rows;
}

double csv_number(const std::string& s, std::size_t line) {
    double v = 0.0;
    if (!parse_number(s, v)) throw ParseError("bad number '" + s + "'", line);
    return v;
}

std::uint64_t csv_integer(const std::string& s, std::size_t line) {
    long long v = 0;
    if (!parse_integer(s, v) || v < 0) throw ParseError("bad integer '" + s + "'", line);
    return static_cast<std::uint64_t>(v);
}

}  // namespace

std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path) {
    std::vector<SummaryRow> out;
    const auto rows = read_csv(path, "variant,data_size,seed,metric,value");
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& f = rows[i];
        out.push_back({f[0], csv_integer(f[1], i + 2), csv_integer(f[2], i + 2), f[3], csv_number(f[4], i + 2)});
    }
    return out;
}

std::vector<ConvergenceRow> read_convergence_csv(const std::filesystem::path& path) {
    std::vector<ConvergenceRow> out;
    const auto rows = read_csv(path, "variant,data_size,seed,epoch,mse_a_val,mse_v_val");
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& f = rows[i];
        out.push_back({f[0], csv_integer(f[1], i + 2), csv_integer(f[2], i + 2), csv_integer(f[3], i + 2),
                       csv_number(f[4], i + 2), csv_number(f[5], i + 2)});
    }
    return out;
}

}  // namespace perlcf
