#include "perlcf/cli.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "perlcf/calibrate.hpp"
#include "perlcf/error.hpp"
#include "perlcf/eval.hpp"
#include "perlcf/ingest.hpp"
#include "perlcf/synth.hpp"

#ifndef PERLCF_VERSION
#define PERLCF_VERSION "0.0.0"
#endif

namespace perlcf {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Flat = std::map<std::string, json>;

void flatten(const json& j, const std::string& prefix, Flat& out) {
    if (j.is_object()) {
        for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
    } else {
        out[prefix] = j;
    }
}

json unflatten(const Flat& flat) {
    json j = json::object();
    for (const auto& [key, value] : flat) {
        json* node = &j;
        std::size_t start = 0;
        for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1)
            node = &(*node)[key.substr(start, dot - start)];
        (*node)[key.substr(start)] = value;
    }
    return j;
}

json parse_value(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::exception&) {
        return text;
    }
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return hex.str();
}

void write_json_file(const fs::path& path, const json& j) {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw DataError("failed writing " + path.string());
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what(), 0);
    }
}

// Options shared by every subcommand plus the merged dotted settings.
struct Common {
    std::string config_path;
    std::vector<std::string> sets;
    std::string manifest;
    Flat flags;  // dotted keys set by dedicated flags

    void add_to(CLI::App* app) {
        app->add_option("--config", config_path, "JSON config with flat dotted keys")->check(CLI::ExistingFile);
        app->add_option("--set", sets, "Override a config key, key=value")->allow_extra_args(false);
        app->add_option("--manifest", manifest, "Manifest path (defaults next to the output)");
    }

    // Defaults < config file < --set < dedicated flags.
    Flat settings(const std::vector<std::string>& sections) const {
        Flat user;
        if (!config_path.empty()) {
            const json j = read_json_file(config_path);
            if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
            flatten(j, "", user);
        }
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
            user[s.substr(0, eq)] = parse_value(s.substr(eq + 1));
        }
        for (const auto& [k, v] : flags) user[k] = v;
        for (const auto& [k, v] : user) {
            const auto dot = k.find('.');
            const std::string section = k.substr(0, dot);
            if (dot == std::string::npos ||
                std::find(sections.begin(), sections.end(), section) == sections.end())
                throw ConfigError("unknown config key '" + k + "'");
        }
        return user;
    }
};

std::optional<json> user_value(const Flat& user, const std::string& key) {
    const auto it = user.find(key);
    if (it == user.end()) return std::nullopt;
    return it->second;
}

// Overlays the user's keys for one section onto the defaults; keys that the
// defaults do not know are rejected.
json resolve_section(const Flat& user, const std::string& section, const json& defaults) {
    Flat base;
    flatten(defaults, "", base);
    const std::string prefix = section + ".";
    for (const auto& [k, v] : user) {
        if (k.rfind(prefix, 0) != 0) continue;
        const std::string sub = k.substr(prefix.size());
        if (!base.count(sub)) throw ConfigError("unknown config key '" + k + "'");
        base[sub] = v;
    }
    return unflatten(base);
}

template <class T>
T typed(const json& j, const std::string& section) {
    try {
        return j.get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("invalid '" + section + "' settings: " + e.what());
    }
}

template <class T>
T resolve(const Flat& user, const std::string& section, const T& defaults, json& resolved) {
    T value = typed<T>(resolve_section(user, section, json(defaults)), section);
    resolved[section] = json(value);
    return value;
}

// Shape settings come from the samples file; the split settings from config.
DatasetConfig dataset_for(const SampleFileHeader& h, const Flat& user, json& resolved) {
    DatasetConfig d;
    d.delta = h.delta;
    d.k_vehicles = h.k_vehicles;
    d.t_back = h.t_back;
    d.t_fwd = h.t_fwd;
    for (const char* k : {"dataset.delta", "dataset.k_vehicles", "dataset.t_back", "dataset.t_fwd"})
        if (user.count(k)) throw ConfigError(std::string(k) + " is fixed by the samples file");
    d = resolve(user, "dataset", d, resolved);
    d.validate();
    return d;
}

SampleFile load_samples(const fs::path& path) {
    auto f = read_samples(path);
    if (f.samples.empty()) throw DataError(path.string() + " holds no samples");
    return f;
}

PhysicsParams load_params(const fs::path& path) {
    const json j = read_json_file(path);
    try {
        return (j.contains("params") ? j.at("params") : j).get<PhysicsParams>();
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": not a parameter file: " + e.what());
    }
}

class Manifest {
public:
    explicit Manifest(std::string command) : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}
    void input(const fs::path& p) { inputs_.push_back(p); }
    void output(const fs::path& p) { outputs_.push_back(p); }
    json config = json::object();

    void write(const fs::path& path) const {
        auto files = [](const std::vector<fs::path>& ps) {
            auto a = json::array();
            for (const auto& p : ps)
                a.push_back({{"path", p.generic_string()}, {"sha256", sha256_file(p)}, {"bytes", fs::file_size(p)}});
            return a;
        };
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        write_json_file(path, {{"tool", "perlcf"},
                               {"version", PERLCF_VERSION},
                               {"command", command_},
                               {"config", config},
                               {"inputs", files(inputs_)},
                               {"outputs", files(outputs_)},
                               {"wall_clock_seconds", secs}});
    }

private:
    std::string command_;
    std::chrono::steady_clock::time_point start_;
    std::vector<fs::path> inputs_, outputs_;
};

fs::path manifest_path(const Common& c, const fs::path& primary, bool primary_is_dir) {
    if (!c.manifest.empty()) return c.manifest;
    if (primary_is_dir) return primary / "manifest.json";
    return fs::path(primary.string() + ".manifest.json");
}

template <class T>
void flag(Flat& flags, const CLI::Option* opt, const std::string& key, const T& value) {
    if (opt->count() > 0) flags[key] = value;
}

// ---- subcommands ----

struct SynthArgs {
    Common common;
    std::string out;
    std::uint64_t seed = 0;
    std::string generator;
    double noise = 0.0;
    std::size_t platoons = 0, vehicles = 0, steps = 0;
    CLI::Option *o_gen, *o_noise, *o_platoons, *o_vehicles, *o_steps;
};

int cmd_synth(SynthArgs& a, std::ostream& out) {
    auto& f = a.common.flags;
    f["synth.seed"] = a.seed;
    flag(f, a.o_gen, "synth.generator", a.generator);
    flag(f, a.o_noise, "synth.noise_sigma", a.noise);
    flag(f, a.o_platoons, "synth.platoons", a.platoons);
    flag(f, a.o_vehicles, "synth.vehicles_per_platoon", a.vehicles);
    flag(f, a.o_steps, "synth.duration_steps", a.steps);
    const Flat user = a.common.settings({"synth"});

    SynthConfig defaults;
    if (auto g = user_value(user, "synth.generator"); g && g->is_string())
        defaults = synth_defaults(parse_synth_generator(g->get<std::string>()));
    if (auto m = user_value(user, "synth.true_params.model"); m && m->is_string())
        defaults.true_params = default_params(parse_physics_model(m->get<std::string>()));

    Manifest manifest("synth");
    const auto cfg = resolve(user, "synth", defaults, manifest.config);
    const auto rows = generate_corpus(cfg);
    write_trajectory_csv(rows, fs::path(a.out));
    manifest.output(a.out);
    manifest.write(manifest_path(a.common, a.out, false));
    out << "wrote " << rows.size() << " rows (" << cfg.platoons * cfg.vehicles_per_platoon << " vehicles) to "
        << a.out << '\n';
    return kExitOk;
}

struct ExtractArgs {
    Common common;
    std::string input, out;
    double delta = 0.1;
    std::size_t k = 0, t_back = 0, t_fwd = 0;
    CLI::Option *o_delta, *o_k, *o_tb, *o_tf;
};

int cmd_extract(ExtractArgs& a, std::ostream& out) {
    auto& f = a.common.flags;
    flag(f, a.o_delta, "dataset.delta", a.delta);
    flag(f, a.o_k, "dataset.k_vehicles", a.k);
    flag(f, a.o_tb, "dataset.t_back", a.t_back);
    flag(f, a.o_tf, "dataset.t_fwd", a.t_fwd);
    const Flat user = a.common.settings({"dataset"});
    Manifest manifest("extract");
    const auto ds = resolve(user, "dataset", DatasetConfig{}, manifest.config);
    ds.validate();
    manifest.input(a.input);
    const auto series = parse_trajectory_csv(fs::path(a.input), ds.delta);
    const auto samples = extract_samples(series, ds);
    write_samples(samples, ds, fs::path(a.out));
    manifest.output(a.out);
    manifest.write(manifest_path(a.common, a.out, false));
    out << "extracted " << samples.size() << " samples from " << series.size() << " vehicles to " << a.out << '\n';
    return kExitOk;
}

struct CalibrateArgs {
    Common common;
    std::string samples, out, model;
    std::uint64_t seed = 0;
    std::size_t sample_size = 0, repetitions = 0;
    CLI::Option *o_model, *o_size, *o_reps;
};

int cmd_calibrate(CalibrateArgs& a, std::ostream& out) {
    auto& f = a.common.flags;
    f["calibration.seed"] = a.seed;
    flag(f, a.o_model, "calibration.model", a.model);
    flag(f, a.o_size, "calibration.sample_size", a.sample_size);
    flag(f, a.o_reps, "calibration.repetitions", a.repetitions);
    const Flat user = a.common.settings({"calibration", "dataset"});

    Manifest manifest("calibrate");
    manifest.input(a.samples);
    const auto file = load_samples(a.samples);
    const auto ds = dataset_for(file.header, user, manifest.config);
    CalibrationConfig defaults;
    if (auto m = user_value(user, "calibration.model"); m && m->is_string())
        defaults.model = parse_physics_model(m->get<std::string>());
    defaults.delta = file.header.delta;
    auto cc = resolve(user, "calibration", defaults, manifest.config);
    cc.validate();

    std::vector<std::int64_t> ids;
    for (const auto& s : file.samples) ids.push_back(s.sample_id);
    const auto split = split_dataset(ids, ds);
    const auto train = select_samples(file.samples, split.train_ids);
    if (cc.sample_size > train.size())
        throw ConfigError("calibration.sample_size " + std::to_string(cc.sample_size) + " exceeds the train split (" +
                          std::to_string(train.size()) + ")");
    const auto report = monte_carlo_calibrate(train, cc);
    write_json_file(a.out, report);
    manifest.output(a.out);
    manifest.write(manifest_path(a.common, a.out, false));
    out << "calibrated " << to_string(cc.model) << " on " << cc.sample_size << " samples x " << cc.repetitions
        << " repetitions:";
    for (std::size_t i = 0; i < report.names.size(); ++i) out << ' ' << report.names[i] << '=' << report.mean[i];
    out << '\n';
    return kExitOk;
}

struct TrainArgs {
    Common common;
    std::string samples, out_dir, variant = "perl", params, cell, activation;
    std::uint64_t seed = 0;
    std::size_t epochs = 0;
    double mu = 0.5;
    CLI::Option *o_cell, *o_epochs, *o_mu, *o_act;
};

int cmd_train(TrainArgs& a, std::ostream& out) {
    auto& f = a.common.flags;
    f["train.seed"] = a.seed;
    f["net.seed"] = a.seed;
    f["train.variant"] = a.variant;
    flag(f, a.o_cell, "net.cell", a.cell);
    flag(f, a.o_epochs, "train.max_epochs", a.epochs);
    flag(f, a.o_mu, "train.mu", a.mu);
    flag(f, a.o_act, "net.output_activation", a.activation);
    const Flat user = a.common.settings({"train", "net", "dataset"});

    Manifest manifest("train");
    manifest.input(a.samples);
    const auto file = load_samples(a.samples);
    const auto ds = dataset_for(file.header, user, manifest.config);
    TrainConfig tdef;
    tdef.delta = file.header.delta;
    auto tc = resolve(user, "train", tdef, manifest.config);
    auto nc = resolve(user, "net", NetConfig{}, manifest.config);

    std::optional<PhysicsParams> physics;
    if (uses_physics(tc.variant)) {
        if (a.params.empty()) throw ConfigError(to_string(tc.variant) + " training needs --params");
        physics = load_params(a.params);
        manifest.input(a.params);
        manifest.config["params"] = *physics;
    }

    std::vector<std::int64_t> ids;
    for (const auto& s : file.samples) ids.push_back(s.sample_id);
    const auto split = split_dataset(ids, ds);
    auto result = train_variant(file.samples, split, tc, nc, physics);

    const fs::path dir(a.out_dir);
    fs::create_directories(dir);
    json artifacts = {{"format_version", 1},
                      {"variant", to_string(tc.variant)},
                      {"delta", file.header.delta},
                      {"train_size", split.train_ids.size()},
                      {"physics", physics ? json(*physics) : json(nullptr)},
                      {"weights", nullptr}};
    if (uses_network(tc.variant)) {
        save_net(result.net, dir / "weights.json");
        manifest.output(dir / "weights.json");
        artifacts["weights"] = "weights.json";
    }
    write_json_file(dir / "train_report.json", result.report);
    write_json_file(dir / "artifacts.json", artifacts);
    manifest.output(dir / "train_report.json");
    manifest.output(dir / "artifacts.json");
    manifest.write(manifest_path(a.common, dir, true));

    out << "trained " << to_string(tc.variant) << " on " << split.train_ids.size() << " samples";
    if (!result.report.per_epoch.empty()) {
        const auto& best = result.report.per_epoch[result.report.best_epoch - 1];
        out << ": " << result.report.per_epoch.size() << " epochs, best " << result.report.best_epoch
            << " (val mse_a " << best.mse_a_val << ")";
    }
    out << '\n';
    return kExitOk;
}

struct Artifacts {
    Variant variant = Variant::physics;
    PredictorArtifacts predictor;
    std::size_t train_size = 0;
    std::vector<fs::path> files;
};

Artifacts load_artifacts(const fs::path& dir) {
    const auto path = dir / "artifacts.json";
    const json j = read_json_file(path);
    Artifacts a;
    a.files.push_back(path);
    try {
        if (j.at("format_version").get<int>() != 1) throw DataError(path.string() + ": unsupported format_version");
        a.variant = parse_variant(j.at("variant").get<std::string>());
        a.predictor.delta = j.at("delta").get<double>();
        a.train_size = j.value("train_size", std::size_t{0});
        if (!j.at("physics").is_null()) a.predictor.physics = j.at("physics").get<PhysicsParams>();
        if (!j.at("weights").is_null()) {
            const auto w = dir / j.at("weights").get<std::string>();
            a.predictor.net = load_net(w);
            a.files.push_back(w);
        }
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return a;
}

std::vector<TrajectorySample> subset_of(const SampleFile& file, const DatasetConfig& ds, const std::string& which) {
    if (which == "all") return file.samples;
    std::vector<std::int64_t> ids;
    for (const auto& s : file.samples) ids.push_back(s.sample_id);
    const auto split = split_dataset(ids, ds);
    if (which == "train") return select_samples(file.samples, split.train_ids);
    if (which == "val") return select_samples(file.samples, split.val_ids);
    return select_samples(file.samples, split.test_ids);
}

struct PredictArgs {
    Common common;
    std::string samples, model_dir, out, subset = "test";
};

int cmd_predict(PredictArgs& a, std::ostream& out) {
    const Flat user = a.common.settings({"dataset"});
    Manifest manifest("predict");
    manifest.input(a.samples);
    const auto file = load_samples(a.samples);
    const auto ds = dataset_for(file.header, user, manifest.config);
    const auto art = load_artifacts(a.model_dir);
    for (const auto& p : art.files) manifest.input(p);
    manifest.config["subset"] = a.subset;
    manifest.config["variant"] = to_string(art.variant);
    if (std::abs(art.predictor.delta - file.header.delta) > 1e-12)
        throw DataError("model delta does not match the samples file");

    const auto samples = subset_of(file, ds, a.subset);
    const auto records = predict_all(art.variant, samples, art.predictor);
    write_records(records, art.variant, art.predictor.delta, a.out);
    manifest.output(a.out);
    manifest.write(manifest_path(a.common, a.out, false));
    out << "predicted " << records.size() << " " << a.subset << " samples with " << to_string(art.variant) << '\n';
    return kExitOk;
}

struct EvaluateArgs {
    Common common;
    std::string records, samples, out, model_dir, plot_dir;
};

int cmd_evaluate(EvaluateArgs& a, std::ostream& out) {
    a.common.settings({});
    Manifest manifest("evaluate");
    manifest.input(a.records);
    manifest.input(a.samples);
    Variant variant = Variant::nn;
    const auto records = read_records(a.records, &variant);
    const auto file = load_samples(a.samples);
    std::vector<std::int64_t> ids;
    for (const auto& r : records) ids.push_back(r.sample_id);
    const auto truth = select_samples(file.samples, ids);
    auto report = evaluate_records(variant, records, truth, file.header.delta);

    if (!a.model_dir.empty()) {
        const auto art = load_artifacts(a.model_dir);
        if (art.variant != variant) throw DataError("records and model disagree on the variant");
        const auto tr_path = fs::path(a.model_dir) / "train_report.json";
        auto tr = read_json_file(tr_path).get<TrainReport>();
        manifest.input(tr_path);
        report.data_size = art.train_size;
        report.seed = tr.config.seed;
        tr.test = TestMetrics{report.mse_a_test, report.mse_v_test};
        report.train = std::move(tr);
    }
    manifest.config = {{"variant", to_string(variant)}, {"model_dir", a.model_dir}};
    write_json_file(a.out, report);
    manifest.output(a.out);
    if (!a.plot_dir.empty())
        for (const auto& p : emit_plot_data(std::span<const EvalReport>(&report, 1), a.plot_dir)) manifest.output(p);
    manifest.write(manifest_path(a.common, a.out, false));
    out << to_string(variant) << ": mse_a_test=" << report.mse_a_test << " mse_v_test=" << report.mse_v_test
        << " over " << records.size() << " samples\n";
    return kExitOk;
}

struct SweepArgs {
    Common common;
    std::string samples, out_dir, model, cell;
    std::uint64_t seed = 0;
    std::size_t seeds = 0, jobs = 1, epochs = 0;
    std::vector<std::size_t> sizes;
    std::vector<std::string> variants;
    CLI::Option *o_model, *o_cell, *o_seeds, *o_jobs, *o_epochs, *o_sizes, *o_variants;
};

int cmd_sweep(SweepArgs& a, std::ostream& out) {
    auto& f = a.common.flags;
    flag(f, a.o_model, "sweep.model", a.model);
    flag(f, a.o_seeds, "sweep.seed_count", a.seeds);
    flag(f, a.o_jobs, "sweep.jobs", a.jobs);
    flag(f, a.o_sizes, "sweep.data_sizes", a.sizes);
    flag(f, a.o_variants, "sweep.variants", a.variants);
    flag(f, a.o_cell, "net.cell", a.cell);
    flag(f, a.o_epochs, "train.max_epochs", a.epochs);
    const Flat user = a.common.settings({"sweep", "dataset", "net", "train", "calibration"});

    Manifest manifest("sweep");
    manifest.input(a.samples);
    const auto file = load_samples(a.samples);
    SweepConfig sc;
    sc.dataset = dataset_for(file.header, user, manifest.config);

    std::vector<std::string> vnames;
    for (auto v : sc.variants) vnames.push_back(to_string(v));
    const json sdef = {{"data_sizes", sc.data_sizes}, {"variants", vnames},   {"model", to_string(sc.model)},
                       {"seed_count", 5},             {"jobs", sc.jobs}};
    json s = resolve_section(user, "sweep", sdef);
    s["seed"] = a.seed;
    manifest.config["sweep"] = s;
    try {
        sc.data_sizes = s.at("data_sizes").get<std::vector<std::size_t>>();
        sc.variants.clear();
        for (const auto& v : s.at("variants")) sc.variants.push_back(parse_variant(v.get<std::string>()));
        sc.model = parse_physics_model(s.at("model").get<std::string>());
        sc.jobs = s.at("jobs").get<std::size_t>();
        sc.seeds.clear();
        for (std::size_t i = 0; i < s.at("seed_count").get<std::size_t>(); ++i) sc.seeds.push_back(a.seed + i);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid 'sweep' settings: ") + e.what());
    }
    sc.net = resolve(user, "net", NetConfig{}, manifest.config);
    TrainConfig tdef;
    tdef.delta = file.header.delta;
    sc.train = resolve(user, "train", tdef, manifest.config);
    CalibrationConfig cdef;
    cdef.model = sc.model;
    cdef.delta = file.header.delta;
    sc.calibration = resolve(user, "calibration", cdef, manifest.config);

    const auto result = run_sweep(file.samples, sc);
    const fs::path dir(a.out_dir);
    for (const auto& p : write_sweep(result, dir)) manifest.output(p);
    manifest.write(manifest_path(a.common, dir, true));

    for (const auto& c : result.cells) {
        out << to_string(c.variant) << " size=" << c.data_size << " seed=" << c.seed << ": ";
        if (c.report) out << "mse_a_test=" << c.report->mse_a_test << " mse_v_test=" << c.report->mse_v_test << '\n';
        else out << "FAILED (" << c.error << ")\n";
    }
    const auto failures = result.failures();
    out << result.cells.size() - failures << "/" << result.cells.size() << " cells succeeded\n";
    return failures == 0 ? kExitOk : kExitPartial;
}

struct GradcheckArgs {
    Common common;
    std::string cell = "lstm", activation, out;
    double dropout = 0.0, tolerance = 1e-4;
    std::uint64_t seed = 7;
    CLI::Option *o_dropout, *o_act;
};

int cmd_gradcheck(GradcheckArgs& a, std::ostream& out) {
    a.common.settings({});
    std::vector<double> dropouts{0.0, 0.2};
    if (a.o_dropout->count()) dropouts = {a.dropout};
    std::vector<OutputActivation> acts{OutputActivation::linear, OutputActivation::relu};
    if (a.o_act->count()) acts = {parse_output_activation(a.activation)};

    double worst = 0.0;
    auto runs = json::array();
    for (double p : dropouts)
        for (auto act : acts) {
            GradCheckConfig g;
            g.cell = parse_cell_type(a.cell);
            g.dropout = p;
            g.output_activation = act;
            g.seed = a.seed;
            const auto r = gradient_check(g);
            out << to_string(g.cell) << " dropout=" << p << " head=" << to_string(act)
                << ": max relative error " << r.max_relative_error << " (" << r.checked << " parameters, worst "
                << r.worst_tensor << "[" << r.worst_index << "])\n";
            worst = std::max(worst, r.max_relative_error);
            runs.push_back({{"cell", to_string(g.cell)},
                            {"dropout", p},
                            {"output_activation", to_string(act)},
                            {"max_relative_error", r.max_relative_error},
                            {"worst_tensor", r.worst_tensor},
                            {"worst_index", r.worst_index},
                            {"checked", r.checked}});
        }
    out << "max relative error: " << worst << (worst < a.tolerance ? " (pass)" : " (FAIL)") << '\n';
    if (!a.out.empty()) {
        Manifest manifest("gradcheck");
        manifest.config = {{"cell", a.cell}, {"seed", a.seed}, {"tolerance", a.tolerance}};
        write_json_file(a.out, {{"runs", runs}, {"max_relative_error", worst}, {"tolerance", a.tolerance}});
        manifest.output(a.out);
        manifest.write(manifest_path(a.common, a.out, false));
    }
    return worst < a.tolerance ? kExitOk : kExitNumeric;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Car-following trajectory prediction with physics-enhanced residual learning", "perlcf"};
    app.require_subcommand(1);
    app.set_version_flag("--version", PERLCF_VERSION);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a synthetic trajectory corpus (raw CSV)");
    synth.common.add_to(s);
    s->add_option("--out", synth.out, "Output CSV")->required();
    s->add_option("--seed", synth.seed, "Generator seed")->required();
    synth.o_gen = s->add_option("--generator", synth.generator, "idm | newell_shift");
    synth.o_noise = s->add_option("--noise", synth.noise, "Acceleration noise sigma, m/s^2");
    synth.o_platoons = s->add_option("--platoons", synth.platoons);
    synth.o_vehicles = s->add_option("--vehicles", synth.vehicles, "Vehicles per platoon");
    synth.o_steps = s->add_option("--steps", synth.steps, "Duration in steps");

    ExtractArgs extract;
    auto* e = app.add_subcommand("extract", "Cut a raw trajectory CSV into samples");
    extract.common.add_to(e);
    e->add_option("--input", extract.input, "Raw trajectory CSV")->required()->check(CLI::ExistingFile);
    e->add_option("--out", extract.out, "Output samples file (JSON lines)")->required();
    extract.o_delta = e->add_option("--delta", extract.delta, "Time step, s");
    extract.o_k = e->add_option("--k", extract.k, "Vehicles per sample");
    extract.o_tb = e->add_option("--t-back", extract.t_back, "History steps");
    extract.o_tf = e->add_option("--t-fwd", extract.t_fwd, "Horizon steps");

    CalibrateArgs calib;
    auto* c = app.add_subcommand("calibrate", "Monte-Carlo calibration of a physics model");
    calib.common.add_to(c);
    c->add_option("--samples", calib.samples, "Samples file")->required()->check(CLI::ExistingFile);
    c->add_option("--out", calib.out, "Calibration report JSON")->required();
    c->add_option("--seed", calib.seed, "Calibration seed")->required();
    calib.o_model = c->add_option("--model", calib.model, "newell | idm | fvd");
    calib.o_size = c->add_option("--sample-size", calib.sample_size, "Samples per repetition");
    calib.o_reps = c->add_option("--repetitions", calib.repetitions, "Monte-Carlo repetitions");

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train one predictor variant");
    train.common.add_to(t);
    t->add_option("--samples", train.samples, "Samples file")->required()->check(CLI::ExistingFile);
    t->add_option("--out", train.out_dir, "Output directory")->required();
    t->add_option("--seed", train.seed, "Training seed")->required();
    t->add_option("--variant", train.variant, "physics | nn | pinn | perl")->capture_default_str();
    t->add_option("--params", train.params, "Calibration report or parameter JSON")->check(CLI::ExistingFile);
    train.o_cell = t->add_option("--cell", train.cell, "lstm | gru");
    train.o_epochs = t->add_option("--epochs", train.epochs, "Maximum epochs");
    train.o_mu = t->add_option("--mu", train.mu, "PINN data-term weight");
    train.o_act = t->add_option("--activation", train.activation, "linear | relu");

    PredictArgs predict;
    auto* p = app.add_subcommand("predict", "Predict with a trained model directory");
    predict.common.add_to(p);
    p->add_option("--samples", predict.samples, "Samples file")->required()->check(CLI::ExistingFile);
    p->add_option("--model", predict.model_dir, "Directory written by train")->required()->check(CLI::ExistingDirectory);
    p->add_option("--out", predict.out, "Records file (JSON lines)")->required();
    p->add_option("--subset", predict.subset, "test | val | train | all")
        ->check(CLI::IsMember({"test", "val", "train", "all"}))
        ->capture_default_str();

    EvaluateArgs evaluate;
    auto* v = app.add_subcommand("evaluate", "Score prediction records against ground truth");
    evaluate.common.add_to(v);
    v->add_option("--records", evaluate.records, "Records file")->required()->check(CLI::ExistingFile);
    v->add_option("--samples", evaluate.samples, "Samples file")->required()->check(CLI::ExistingFile);
    v->add_option("--out", evaluate.out, "Evaluation report JSON")->required();
    v->add_option("--model", evaluate.model_dir, "Train output directory, attaches the training curve")
        ->check(CLI::ExistingDirectory);
    v->add_option("--plot-dir", evaluate.plot_dir, "Write summary.csv and convergence.csv here");

    SweepArgs sweep;
    auto* w = app.add_subcommand("sweep", "Training-data-size sweep over variants and seeds");
    sweep.common.add_to(w);
    w->add_option("--samples", sweep.samples, "Samples file")->required()->check(CLI::ExistingFile);
    w->add_option("--out", sweep.out_dir, "Output directory")->required();
    w->add_option("--seed", sweep.seed, "First seed; cells use seed, seed+1, ...")->required();
    sweep.o_seeds = w->add_option("--seeds", sweep.seeds, "Seeds per cell");
    sweep.o_jobs = w->add_option("--jobs", sweep.jobs, "Concurrent cells");
    sweep.o_sizes = w->add_option("--sizes", sweep.sizes, "Training data sizes");
    sweep.o_variants = w->add_option("--variants", sweep.variants, "Variants to run");
    sweep.o_model = w->add_option("--model", sweep.model, "Physics model");
    sweep.o_cell = w->add_option("--cell", sweep.cell, "lstm | gru");
    sweep.o_epochs = w->add_option("--epochs", sweep.epochs, "Maximum epochs");

    GradcheckArgs grad;
    auto* g = app.add_subcommand("gradcheck", "Check BPTT gradients against finite differences");
    grad.common.add_to(g);
    g->add_option("--cell", grad.cell, "lstm | gru")->check(CLI::IsMember({"lstm", "gru"}))->capture_default_str();
    grad.o_dropout = g->add_option("--dropout", grad.dropout, "Dropout rate (default: 0 and 0.2)");
    grad.o_act = g->add_option("--activation", grad.activation, "linear | relu (default: both)");
    g->add_option("--seed", grad.seed, "Initialisation seed")->capture_default_str();
    g->add_option("--tolerance", grad.tolerance, "Pass threshold")->capture_default_str();
    g->add_option("--out", grad.out, "Optional JSON result");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& ex) {
        const int code = app.exit(ex, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*s) return cmd_synth(synth, out);
        if (*e) return cmd_extract(extract, out);
        if (*c) return cmd_calibrate(calib, out);
        if (*t) return cmd_train(train, out);
        if (*p) return cmd_predict(predict, out);
        if (*v) return cmd_evaluate(evaluate, out);
        if (*w) return cmd_sweep(sweep, out);
        if (*g) return cmd_gradcheck(grad, out);
    } catch (const ConfigError& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitUsage;
    } catch (const NumericError& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace perlcf
