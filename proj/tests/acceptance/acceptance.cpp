// Acceptance checks: one PASS/FAIL line per criterion. Pass criterion
// numbers as arguments to run a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "perlcf/calibrate.hpp"
#include "perlcf/cli.hpp"
#include "perlcf/eval.hpp"
#include "perlcf/neuralnet.hpp"
#include "perlcf/physics.hpp"
#include "perlcf/predictors.hpp"
#include "perlcf/synth.hpp"

namespace fs = std::filesystem;
using namespace perlcf;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

fs::path work_dir(const std::string& name) {
    const auto dir = fs::path(PERLCF_TEST_TMP) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int cli(std::vector<std::string> args, std::string* out = nullptr) {
    args.insert(args.begin(), "perlcf");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream o, e;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), o, e);
    if (out) *out = o.str();
    if (code != 0) std::cerr << "  perlcf " << args[1] << " exited " << code << ": " << e.str();
    return code;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double sample_variance(const std::vector<double>& x) {
    double m = 0.0;
    for (double v : x) m += v;
    m /= static_cast<double>(x.size());
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size() - 1);
}

SplitIndex split_of(const std::vector<TrajectorySample>& samples, const DatasetConfig& d) {
    std::vector<std::int64_t> ids;
    for (const auto& s : samples) ids.push_back(s.sample_id);
    return split_dataset(ids, d);
}

// 1 -------------------------------------------------------------------------
Outcome gradient_correctness() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    int runs = 0;
    for (auto cell : {CellType::lstm, CellType::gru})
        for (double p : {0.0, 0.2})
            for (auto act : {OutputActivation::linear, OutputActivation::relu}) {
                GradCheckConfig g;
                g.cell = cell;
                g.units1 = 4;
                g.units2 = 3;
                g.steps = 5;
                g.dropout = p;
                g.output_activation = act;
                worst = std::max(worst, gradient_check(g).max_relative_error);
                ++runs;
            }
    const double secs = seconds_since(t0);
    return {worst < 1e-4 && secs < 30.0,
            "max relative error " + fmt("%.2e", worst) + " over " + std::to_string(runs) +
                " LSTM/GRU configurations in " + fmt("%.2f", secs) + " s"};
}

// 2 -------------------------------------------------------------------------
long double idm_direct(long double v, long double dv, long double gap, const IdmParams& p) {
    const long double s = p.s0 + p.t_gap * v - v * dv / (2.0L * std::sqrt((long double)p.a_max * p.b_comf));
    return p.a_max * (1.0L - std::pow(v / p.v_free, 4.0L) - (s / gap) * (s / gap));
}

long double fvd_direct(long double v, long double dv, long double gap, const FvdParams& p) {
    return p.kappa * (p.v1 + p.v2 * std::tanh(p.c1 * (gap - p.l_c) - p.c2) - v) + p.lambda * dv;
}

Outcome physics_fidelity() {
    const IdmParams idm;
    const FvdParams fvd;
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> v(0.0, 30.0), dv(-6.0, 6.0), gap(0.5, 150.0);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const double a = v(rng), b = dv(rng), c = gap(rng);
        worst = std::max(worst, (double)std::abs(idm_direct(a, b, c, idm) - idm_accel(a, b, c, idm)));
        worst = std::max(worst, (double)std::abs(fvd_direct(a, b, c, fvd) - fvd_accel(a, b, c, fvd)));
    }
    const double stationary = std::abs(idm_accel(0.0, 0.0, 1e9, idm) - idm.a_max);
    const double free_flow = std::abs(idm_accel(idm.v_free, 0.0, 1e9, idm));
    const double equilibrium = std::abs(fvd_accel(fvd_optimal_speed(30.0, fvd), 0.0, 30.0, fvd));
    const double limit = std::max({stationary, free_flow, equilibrium});
    return {worst < 1e-10 && limit < 1e-9,
            "max |model - direct| " + fmt("%.1e", worst) + " on 2x100 inputs; limit cases " + fmt("%.1e", limit)};
}

// 3 -------------------------------------------------------------------------
Outcome newell_recovery() {
    auto sc = synth_defaults(SynthGenerator::newell_shift);
    sc.seed = 4;
    DatasetConfig d;
    d.t_back = 50;
    const auto samples = extract_samples(generate_series(sc), d);
    const auto split = split_of(samples, d);
    const auto train = select_samples(samples, split.train_ids);
    const auto test = select_samples(samples, split.test_ids);

    CalibrationConfig cc;
    const auto fit = fit_physics_detailed(train, cc);
    const double w = std::get<NewellParams>(fit.params).w;
    const PredictorArtifacts art{fit.params, std::nullopt, d.delta};
    const auto mse = mse_metrics(predict_all(Variant::physics, test, art), test, d.delta).mse_a;
    double grid = INFINITY;
    for (int i = 0; i <= 900; ++i) grid = std::min(grid, calibration_objective(train, NewellParams{1.0 + 0.01 * i}, d.delta));
    const bool ok = w >= 3.999 && w <= 4.001 && mse < 1e-10 && grid >= fit.objective - 1e-6;
    return {ok, "w=" + fmt("%.6f", w) + ", held-out MSE^a " + fmt("%.1e", mse) + " on " +
                    std::to_string(test.size()) + " samples, grid minus golden " + fmt("%.1e", grid - fit.objective)};
}

// 4 -------------------------------------------------------------------------
Outcome idm_recovery() {
    const auto t0 = Clock::now();
    const auto truth = param_vector(IdmParams{});
    double worst[2] = {0.0, 0.0};
    std::size_t n = 0;
    for (int k = 0; k < 2; ++k) {
        SynthConfig sc;
        sc.platoons = 8;
        sc.duration_steps = 1000;
        sc.noise_sigma = k == 0 ? 0.0 : 0.1;
        sc.seed = 12;
        DatasetConfig d;
        d.t_back = 20;
        const auto samples = extract_samples(generate_series(sc), d);
        const auto train = select_samples(samples, split_of(samples, d).train_ids);
        n = train.size();
        CalibrationConfig cc;
        cc.model = PhysicsModel::idm;
        cc.seed = 1;
        const auto got = param_vector(fit_physics(train, cc));
        for (std::size_t i = 0; i < truth.size(); ++i)
            worst[k] = std::max(worst[k], std::abs(got[i] - truth[i]) / truth[i]);
    }
    const double secs = seconds_since(t0);
    return {worst[0] <= 0.05 && worst[1] <= 0.15 && secs < 300.0,
            "worst relative parameter error " + fmt("%.2e", worst[0]) + " (noise 0), " + fmt("%.3f", worst[1]) +
                " (noise 0.1) on " + std::to_string(n) + " samples in " + fmt("%.1f", secs) + " s"};
}

// 5 -------------------------------------------------------------------------
Outcome composition_and_degeneracy() {
    SynthConfig sc;
    sc.platoons = 2;
    sc.duration_steps = 300;
    sc.noise_sigma = 0.1;
    sc.seed = 5;
    DatasetConfig d;
    d.t_back = 10;
    d.t_fwd = 5;
    const auto samples = extract_samples(generate_series(sc), d);
    const auto split = split_of(samples, d);
    NetConfig net;
    net.units1 = 8;
    net.units2 = 4;
    net.dense_units = 4;
    TrainConfig tc;
    tc.max_epochs = 4;
    tc.seed = 3;

    const auto perl = train_perl(samples, split, tc, net, IdmParams{});
    const auto test = select_samples(samples, split.test_ids);
    std::size_t mismatches = 0, checked = 0;
    for (const auto& r : predict_all(Variant::perl, test, {IdmParams{}, perl.net, d.delta}))
        for (std::size_t j = 0; j < r.predicted_accel.size(); ++j, ++checked) {
            const double sum = r.physics_component[j] + r.residual_component[j];
            if (std::memcmp(&sum, &r.predicted_accel[j], sizeof sum) != 0) ++mismatches;
        }

    const auto nn = train_nn(samples, split, tc, net);
    tc.mu = 1.0;
    const auto pinn = train_pinn(samples, split, tc, net, IdmParams{});
    bool same = nn.report.per_epoch.size() == pinn.report.per_epoch.size();
    for (std::size_t e = 0; same && e < nn.report.per_epoch.size(); ++e) {
        const auto &a = nn.report.per_epoch[e], &b = pinn.report.per_epoch[e];
        same = std::memcmp(&a.train_loss, &b.train_loss, sizeof(double)) == 0 &&
               std::memcmp(&a.mse_a_val, &b.mse_a_val, sizeof(double)) == 0 &&
               std::memcmp(&a.mse_v_val, &b.mse_v_val, sizeof(double)) == 0;
    }
    return {mismatches == 0 && checked > 0 && same,
            std::to_string(mismatches) + " composition mismatches over " + std::to_string(checked) +
                " test predictions; PINN(mu=1) vs NN per-epoch losses " + (same ? "bit-identical" : "DIFFER") +
                " over " + std::to_string(nn.report.per_epoch.size()) + " epochs"};
}

// 6 and 7 share one corpus and sweep ----------------------------------------
struct SmallData {
    std::vector<TrajectorySample> samples;
    SweepResult sweep;
    double secs = 0.0;
};

const SmallData& small_data() {
    static const SmallData data = [] {
        const auto t0 = Clock::now();
        SmallData out;
        SynthConfig sc;
        sc.noise_sigma = 0.1;
        sc.seed = 6;
        SweepConfig cfg;
        cfg.dataset.t_back = 20;
        out.samples = extract_samples(generate_series(sc), cfg.dataset);
        cfg.data_sizes = {300};
        cfg.variants = {Variant::nn, Variant::perl};
        cfg.model = PhysicsModel::idm;
        cfg.seeds = {0, 1, 2, 3, 4};
        cfg.net.units1 = 32;
        cfg.net.units2 = 16;
        cfg.train.max_epochs = 100;
        out.sweep = run_sweep(out.samples, cfg);
        out.secs = seconds_since(t0);
        return out;
    }();
    return data;
}

Outcome small_data_ordering() {
    const auto& d = small_data();
    std::vector<double> nn, perl;
    for (const auto& c : d.sweep.cells) {
        if (!c.report) continue;
        (c.variant == Variant::nn ? nn : perl).push_back(c.report->mse_a_test);
    }
    if (nn.size() != 5 || perl.size() != 5)
        return {false, std::to_string(d.sweep.failures()) + " sweep cells failed"};
    const double mn = median(nn), mp = median(perl);
    return {mp < mn && d.samples.size() >= 3000 && d.secs < 900.0,
            "median test MSE^a PERL " + fmt("%.4f", mp) + " vs NN " + fmt("%.4f", mn) + " at size 300 over 5 seeds (" +
                std::to_string(d.samples.size()) + " samples, " + fmt("%.0f", d.secs) + " s)"};
}

Outcome residual_variance() {
    const auto& d = small_data();
    if (d.sweep.calibrations.empty() || d.sweep.calibrations[0].runs.empty())
        return {false, "no calibration available"};
    const auto params = d.sweep.calibrations[0].runs[0].params;
    std::vector<double> truth, resid;
    for (const auto& s : d.samples) truth.insert(truth.end(), s.ego_future_accel.begin(), s.ego_future_accel.end());
    for (const auto& r : make_residual_targets(d.samples, params, 0.1)) resid.insert(resid.end(), r.begin(), r.end());
    const double vr = sample_variance(resid), vt = sample_variance(truth);
    return {vr < vt, "residual variance " + fmt("%.4f", vr) + " vs acceleration variance " + fmt("%.4f", vt) +
                         " over " + std::to_string(resid.size()) + " targets"};
}

// 8 -------------------------------------------------------------------------
Outcome metric_exactness() {
    std::vector<std::string> failed;
    auto expect = [&](bool ok, const char* what) {
        if (!ok) failed.push_back(what);
    };
    expect(reconstruct_speed(10.0, std::vector<double>(5, 1.0), 0.1) == std::vector<double>{10.1, 10.2, 10.3, 10.4, 10.5},
           "constant acceleration");
    expect(reconstruct_speed(10.0, std::vector<double>(3, 0.0), 0.1) == std::vector<double>(3, 10.0), "zero acceleration");
    expect(reconstruct_speed(10.0, std::vector<double>{1.0, -1.0}, 0.1) == std::vector<double>{10.1, 10.0}, "(1,-1)");

    auto sample = [](std::int64_t id, std::vector<double> future) {
        TrajectorySample s;
        s.sample_id = id;
        s.history.assign(2, std::vector<VehicleState>(1));
        s.positions.assign(2, std::vector<double>(1));
        s.leader_future_accel.assign(1, std::vector<double>(future.size(), 0.0));
        s.ego_future_accel = std::move(future);
        s.ego_speed_at_t0 = 10.0;
        return s;
    };
    auto record = [](std::int64_t id, std::vector<double> a) {
        PredictionRecord r;
        r.sample_id = id;
        r.predicted_speed = reconstruct_speed(10.0, a, 0.1);
        r.predicted_accel = std::move(a);
        return r;
    };
    const std::vector<TrajectorySample> one{sample(0, {1.0})};
    const auto m1 = mse_metrics(std::vector<PredictionRecord>{record(0, {0.8})}, one, 0.1);
    expect(m1.mse_a == (1.0 - 0.8) * (1.0 - 0.8) && std::abs(m1.mse_a - 0.04) < 1e-15, "0.04 example");
    const std::vector<TrajectorySample> two{sample(0, {0.0, 0.0}), sample(1, {0.0, 0.0})};
    const auto m2 = mse_metrics(std::vector<PredictionRecord>{record(0, {0.1, 0.1}), record(1, {0.1, 0.1})}, two, 0.1);
    expect(m2.mse_a == 0.1 * 0.1 && std::abs(m2.mse_a - 0.01) < 1e-15, "0.01 example");
    const auto m3 = mse_metrics(std::vector<PredictionRecord>{record(0, {0.0, 0.0}), record(1, {0.0, 0.0})}, two, 0.1);
    expect(m3.mse_a == 0.0 && m3.mse_v == 0.0, "perfect predictions");

    std::string detail = "speed reconstruction and MSE hand examples";
    if (!failed.empty()) {
        detail += "; failed:";
        for (const auto& f : failed) detail += " " + f;
    }
    return {failed.empty(), detail};
}

// 9 -------------------------------------------------------------------------
std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string content = slurp(e.path());
        if (e.path().filename().string().find("manifest") != std::string::npos) {
            auto j = nlohmann::json::parse(content);
            j.erase("wall_clock_seconds");
            content = j.dump();
        }
        out[fs::relative(e.path(), dir).string()] = std::move(content);
    }
    return out;
}

bool run_command_chain(const fs::path& dir) {
    const auto p = [&](const char* f) { return (dir / f).string(); };
    const std::vector<std::string> small{"--set", "net.units1=6", "--set", "net.units2=4", "--set", "net.dense_units=4"};
    auto with = [](std::vector<std::string> a, const std::vector<std::string>& b) {
        a.insert(a.end(), b.begin(), b.end());
        return a;
    };
    return cli({"synth", "--out", p("raw.csv"), "--seed", "9", "--platoons", "2", "--steps", "300", "--noise", "0.1"}) == 0 &&
           cli({"extract", "--input", p("raw.csv"), "--out", p("samples.jsonl"), "--t-back", "15", "--t-fwd", "2"}) == 0 &&
           cli({"calibrate", "--samples", p("samples.jsonl"), "--out", p("calib.json"), "--seed", "3", "--model", "idm",
                "--sample-size", "150", "--repetitions", "2"}) == 0 &&
           cli(with({"train", "--samples", p("samples.jsonl"), "--out", p("model"), "--seed", "4", "--variant", "perl",
                     "--params", p("calib.json"), "--epochs", "3"},
                    small)) == 0 &&
           cli({"predict", "--samples", p("samples.jsonl"), "--model", p("model"), "--out", p("records.jsonl")}) == 0 &&
           cli({"evaluate", "--records", p("records.jsonl"), "--samples", p("samples.jsonl"), "--out", p("eval.json"),
                "--model", p("model"), "--plot-dir", p("plots")}) == 0 &&
           cli(with({"sweep", "--samples", p("samples.jsonl"), "--out", p("sweep"), "--seed", "0", "--seeds", "2",
                     "--sizes", "60", "120", "--epochs", "2", "--jobs", "2"},
                    small)) == 0 &&
           cli({"gradcheck", "--out", p("gradcheck.json")}) == 0;
}

Outcome determinism() {
    const auto dir = work_dir("determinism");
    if (!run_command_chain(dir)) return {false, "a command failed"};
    const auto first = snapshot(dir);
    fs::remove_all(dir);
    fs::create_directories(dir);
    if (!run_command_chain(dir)) return {false, "a command failed on the rerun"};
    const auto second = snapshot(dir);
    std::vector<std::string> diff;
    for (const auto& [name, content] : first) {
        const auto it = second.find(name);
        if (it == second.end() || it->second != content) diff.push_back(name);
    }
    if (second.size() != first.size()) diff.push_back("(file set)");
    std::string detail = std::to_string(first.size()) + " files from 8 commands compared byte-for-byte";
    for (const auto& d : diff) detail += "; differs: " + d;
    return {diff.empty() && first.size() > 10, detail};
}

// 10 ------------------------------------------------------------------------
Outcome end_to_end() {
    const auto t0 = Clock::now();
    const auto dir = work_dir("pipeline");
    const auto p = [&](const std::string& f) { return (dir / f).string(); };
    const bool ran =
        cli({"synth", "--out", p("raw.csv"), "--seed", "1", "--noise", "0.1"}) == 0 &&
        cli({"extract", "--input", p("raw.csv"), "--out", p("samples.jsonl")}) == 0 &&
        cli({"calibrate", "--samples", p("samples.jsonl"), "--out", p("calib.json"), "--seed", "1", "--model", "idm"}) == 0 &&
        cli({"train", "--samples", p("samples.jsonl"), "--out", p("model"), "--seed", "1", "--variant", "perl", "--params",
             p("calib.json"), "--epochs", "30"}) == 0 &&
        cli({"predict", "--samples", p("samples.jsonl"), "--model", p("model"), "--out", p("records.jsonl")}) == 0 &&
        cli({"evaluate", "--records", p("records.jsonl"), "--samples", p("samples.jsonl"), "--out", p("eval.json"),
             "--model", p("model"), "--plot-dir", p("plots")}) == 0;
    if (!ran) return {false, "a pipeline command failed"};
    const double secs = seconds_since(t0);

    // Every emitted file must load through its reader.
    std::vector<std::string> bad;
    std::size_t files = 0;
    auto check = [&](const std::string& name, const std::function<void()>& load) {
        ++files;
        try {
            load();
        } catch (const std::exception& e) {
            bad.push_back(name + " (" + e.what() + ")");
        }
    };
    std::size_t sample_count = 0;
    check("raw.csv", [&] { parse_trajectory_csv(fs::path(p("raw.csv")), 0.1); });
    check("samples.jsonl", [&] { sample_count = read_samples(fs::path(p("samples.jsonl"))).samples.size(); });
    check("calib.json", [&] { nlohmann::json::parse(slurp(p("calib.json"))).get<CalibrationReport>(); });
    check("model/weights.json", [&] { load_net(p("model/weights.json")); });
    check("model/train_report.json",
          [&] { nlohmann::json::parse(slurp(p("model/train_report.json"))).get<TrainReport>(); });
    check("model/artifacts.json", [&] {
        const auto j = nlohmann::json::parse(slurp(p("model/artifacts.json")));
        j.at("physics").get<PhysicsParams>();
        if (j.at("format_version") != 1 || j.at("variant") != "perl") throw std::runtime_error("bad header");
    });
    check("records.jsonl", [&] {
        Variant v;
        if (read_records(p("records.jsonl"), &v).empty() || v != Variant::perl) throw std::runtime_error("no records");
    });
    check("eval.json", [&] {
        const auto r = nlohmann::json::parse(slurp(p("eval.json"))).get<EvalReport>();
        if (!r.train || !(r.mse_a_test >= 0.0)) throw std::runtime_error("incomplete report");
    });
    check("plots/summary.csv", [&] {
        if (read_summary_csv(p("plots/summary.csv")).size() != 2) throw std::runtime_error("expected 2 rows");
    });
    check("plots/convergence.csv", [&] {
        if (read_convergence_csv(p("plots/convergence.csv")).empty()) throw std::runtime_error("no rows");
    });
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (name.find("manifest") == std::string::npos) continue;
        check(fs::relative(e.path(), dir).string(), [&] {
            const auto j = nlohmann::json::parse(slurp(e.path()));
            for (const char* k : {"tool", "version", "command", "config", "inputs", "outputs", "wall_clock_seconds"})
                if (!j.contains(k)) throw std::runtime_error(std::string("missing ") + k);
            for (const auto& o : j.at("outputs"))
                if (o.at("sha256").get<std::string>().size() != 64) throw std::runtime_error("bad digest");
        });
    }
    std::string detail = std::to_string(files) + " emitted files parsed, " + std::to_string(sample_count) +
                         " samples, pipeline " + fmt("%.0f", secs) + " s";
    for (const auto& b : bad) detail += "; bad: " + b;
    return {bad.empty() && secs < 600.0, detail};
}

struct Criterion {
    int id;
    const char* name;
    Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria{
        {1, "gradient correctness", gradient_correctness},
        {2, "physics formula fidelity", physics_fidelity},
        {3, "Newell-shift recovery", newell_recovery},
        {4, "IDM calibration recovery", idm_recovery},
        {5, "PERL composition identity and PINN degeneracy", composition_and_degeneracy},
        {6, "small-data ordering", small_data_ordering},
        {7, "residual variance", residual_variance},
        {8, "metric and kinematics exactness", metric_exactness},
        {9, "determinism", determinism},
        {10, "end-to-end pipeline", end_to_end},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  [" << c.id << "] " << c.name << ": " << o.detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
