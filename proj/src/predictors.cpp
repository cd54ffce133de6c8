#include "perlcf/predictors.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "perlcf/error.hpp"
#include "perlcf/ingest.hpp"

namespace perlcf {

std::string to_string(Variant v) {
    switch (v) {
        case Variant::physics: return "physics";
        case Variant::nn: return "nn";
        case Variant::pinn: return "pinn";
        case Variant::perl: return "perl";
    }
    return "unknown";
}

Variant parse_variant(const std::string& name) {
    if (name == "physics") return Variant::physics;
    if (name == "nn") return Variant::nn;
    if (name == "pinn") return Variant::pinn;
    if (name == "perl") return Variant::perl;
    throw ConfigError("unknown variant '" + name + "' (expected physics|nn|pinn|perl)");
}

bool uses_physics(Variant v) { return v != Variant::nn; }
bool uses_network(Variant v) { return v != Variant::physics; }

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (patience < 1) throw ConfigError("train.patience must be >= 1");
    if (max_epochs < 1) throw ConfigError("train.max_epochs must be >= 1");
    if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("train.mu must be in [0, 1]");
    if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
    if (!(delta > 0.0)) throw ConfigError("train.delta must be > 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"variant", to_string(c.variant)}, {"max_epochs", c.max_epochs}, {"batch_size", c.batch_size},
         {"lr", c.lr},        {"beta1", c.beta1},   {"beta2", c.beta2},
         {"eps", c.eps},      {"patience", c.patience}, {"mu", c.mu},
         {"delta", c.delta},  {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    c.variant = parse_variant(j.value("variant", to_string(d.variant)));
    c.max_epochs = j.value("max_epochs", d.max_epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.lr = j.value("lr", d.lr);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.eps = j.value("eps", d.eps);
    c.patience = j.value("patience", d.patience);
    c.mu = j.value("mu", d.mu);
    c.delta = j.value("delta", d.delta);
    c.seed = j.value("seed", d.seed);
}

void to_json(nlohmann::json& j, const TrainReport& r) {
    auto epochs = nlohmann::json::array();
    for (const auto& e : r.per_epoch)
        epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss},
                          {"mse_a_val", e.mse_a_val}, {"mse_v_val", e.mse_v_val}});
    j = {{"variant", to_string(r.variant)},
         {"config", r.config},
         {"net_config", r.net_config},
         {"output_activation", to_string(r.net_config.output_activation)},
         {"per_epoch", epochs},
         {"best_epoch", r.best_epoch},
         {"early_stopped", r.early_stopped},
         {"seeds", {{"train", r.config.seed}, {"net", r.net_config.seed}}}};
    j["physics"] = r.physics ? nlohmann::json(*r.physics) : nlohmann::json(nullptr);
    if (r.test) j["test"] = {{"mse_a", r.test->mse_a}, {"mse_v", r.test->mse_v}};
}

void from_json(const nlohmann::json& j, TrainReport& r) {
    r.variant = parse_variant(j.at("variant").get<std::string>());
    r.config = j.at("config").get<TrainConfig>();
    r.net_config = j.at("net_config").get<NetConfig>();
    r.per_epoch.clear();
    for (const auto& e : j.at("per_epoch"))
        r.per_epoch.push_back({e.at("epoch").get<std::size_t>(), e.at("train_loss").get<double>(),
                               e.at("mse_a_val").get<double>(), e.at("mse_v_val").get<double>()});
    r.best_epoch = j.at("best_epoch").get<std::size_t>();
    r.early_stopped = j.value("early_stopped", false);
    r.physics.reset();
    if (j.contains("physics") && !j["physics"].is_null()) r.physics = j["physics"].get<PhysicsParams>();
    r.test.reset();
    if (j.contains("test")) r.test = TestMetrics{j["test"].at("mse_a").get<double>(), j["test"].at("mse_v").get<double>()};
}

double pinn_loss(std::span<const double> f, std::span<const double> g, std::span<const double> f_phy, double mu) {
    if (g.size() != f.size() || f_phy.size() != f.size() || f.empty())
        throw DataError("pinn_loss: horizon mismatch");
    double data_term = 0.0, phys_term = 0.0;
    for (std::size_t j = 0; j < f.size(); ++j) {
        data_term += (f[j] - g[j]) * (f[j] - g[j]);
        phys_term += (f[j] - f_phy[j]) * (f[j] - f_phy[j]);
    }
    const double horizon = static_cast<double>(f.size());
    return mu * (data_term / horizon) + (1.0 - mu) * (phys_term / horizon);
}

std::vector<double> reconstruct_speed(double v0, std::span<const double> accel, double delta) {
    std::vector<double> v(accel.size());
    double sum = 0.0;
    for (std::size_t j = 0; j < accel.size(); ++j) {
        sum += accel[j];
        v[j] = v0 + delta * sum;
    }
    return v;
}

std::vector<std::vector<double>> make_residual_targets(std::span<const TrajectorySample> samples,
                                                       const PhysicsParams& params, double delta) {
    std::vector<std::vector<double>> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        auto r = physics_rollout(s, params, delta);
        for (std::size_t j = 0; j < r.size(); ++j) r[j] = s.ego_future_accel[j] - r[j];
        out.push_back(std::move(r));
    }
    return out;
}

NetConfig net_config_for(const NetConfig& base, const TrajectorySample& shape) {
    NetConfig c = base;
    c.input_dim = 3 * shape.k();
    c.output_dim = shape.t_fwd();
    return c;
}

namespace {

struct Prepared {
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> truth;
    std::vector<std::vector<double>> physics;  // empty unless needed
    std::vector<double> v0;
    std::size_t steps = 0;
};

Prepared prepare(std::span<const TrajectorySample> samples, const NormStats& norm,
                 const std::optional<PhysicsParams>& physics, double delta) {
    Prepared p;
    for (const auto& s : samples) {
        p.inputs.push_back(build_input(s, norm));
        p.truth.push_back(s.ego_future_accel);
        if (physics) p.physics.push_back(physics_rollout(s, *physics, delta));
        p.v0.push_back(s.ego_speed_at_t0);
        p.steps = s.t_back();
    }
    return p;
}

TrainResult run_training(std::span<const TrajectorySample> samples, const SplitIndex& split,
                         const TrainConfig& config, const NetConfig& net_config, Variant variant,
                         const std::optional<PhysicsParams>& physics) {
    config.validate();
    if (split.train_ids.empty() || split.val_ids.empty())
        throw ConfigError("training needs non-empty train and val splits");
    if (uses_physics(variant) && !physics) throw ConfigError(to_string(variant) + " needs physics parameters");
    if (physics) validate_params(*physics);

    const auto train = select_samples(samples, split.train_ids);
    const auto val = select_samples(samples, split.val_ids);
    const auto norm = compute_norm_stats(samples, split);
    const NetConfig nc = net_config_for(net_config, train.front());

    TrainResult result;
    result.net = init_net(nc, norm);
    auto& report = result.report;
    report.variant = variant;
    report.config = config;
    report.config.variant = variant;
    report.net_config = nc;
    report.physics = physics;

    const std::optional<PhysicsParams> needed =
        (variant == Variant::pinn || variant == Variant::perl) ? physics : std::nullopt;
    const auto tr = prepare(train, norm, needed, config.delta);
    const auto va = prepare(val, norm, variant == Variant::perl ? physics : std::nullopt, config.delta);

    std::vector<std::vector<double>> targets = tr.truth;
    if (variant == Variant::perl)
        for (std::size_t i = 0; i < targets.size(); ++i)
            for (std::size_t j = 0; j < targets[i].size(); ++j) targets[i][j] = tr.truth[i][j] - tr.physics[i][j];

    const std::size_t T = nc.output_dim;
    const double horizon = static_cast<double>(T);
    Rng shuffle_rng(derive_seed(config.seed, 1));
    Rng dropout_rng(derive_seed(config.seed, 2));
    AdamState adam = make_adam(result.net, config.lr, config.beta1, config.beta2, config.eps);
    ForwardCache cache;
    TensorList grads = zeros_like(result.net.params);
    TensorList best = result.net.params;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> dy(T);

    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0, batch = 0; start < order.size(); start += config.batch_size, ++batch) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            const double scale = 2.0 / (horizon * static_cast<double>(end - start));
            for (auto& g : grads) std::fill(g.values.begin(), g.values.end(), 0.0);
            double batch_loss = 0.0;
            for (std::size_t b = start; b < end; ++b) {
                const std::size_t i = order[b];
                const auto y = forward(result.net, tr.inputs[i], tr.steps, Mode::train, &dropout_rng, cache);
                double data_term = 0.0;
                for (std::size_t j = 0; j < T; ++j) {
                    const double e = y[j] - targets[i][j];
                    data_term += e * e;
                    if (variant == Variant::pinn) {
                        const double ep = y[j] - tr.physics[i][j];
                        dy[j] = config.mu * (scale * e) + (1.0 - config.mu) * (scale * ep);
                    } else {
                        dy[j] = scale * e;
                    }
                }
                const double sample_loss = variant == Variant::pinn
                                               ? pinn_loss(y, targets[i], tr.physics[i], config.mu)
                                               : data_term / horizon;
                batch_loss += sample_loss;
                backward_accumulate(result.net, cache, dy, grads);
            }
            if (!std::isfinite(batch_loss))
                throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batch));
            loss_sum += batch_loss;
            adam_step(result.net, grads, adam);
        }

        double sa = 0.0, sv = 0.0;
        for (std::size_t i = 0; i < val.size(); ++i) {
            auto y = forward(result.net, va.inputs[i], va.steps, Mode::eval, nullptr, cache);
            if (variant == Variant::perl)
                for (std::size_t j = 0; j < T; ++j) y[j] = va.physics[i][j] + y[j];
            const auto vp = reconstruct_speed(va.v0[i], y, config.delta);
            const auto vt = reconstruct_speed(va.v0[i], va.truth[i], config.delta);
            for (std::size_t j = 0; j < T; ++j) {
                sa += (y[j] - va.truth[i][j]) * (y[j] - va.truth[i][j]);
                sv += (vp[j] - vt[j]) * (vp[j] - vt[j]);
            }
        }
        const double denom = static_cast<double>(val.size()) * horizon;
        EpochRecord rec{epoch, loss_sum / static_cast<double>(train.size()), sa / denom, sv / denom};
        if (!std::isfinite(rec.mse_a_val))
            throw NumericError("non-finite validation MSE at epoch " + std::to_string(epoch));
        report.per_epoch.push_back(rec);

        if (rec.mse_a_val < best_val) {
            best_val = rec.mse_a_val;
            best = result.net.params;
            report.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            report.early_stopped = true;
            break;
        }
    }
    result.net.params = std::move(best);
    return result;
}

}  // namespace

TrainResult train_nn(std::span<const TrajectorySample> samples, const SplitIndex& split,
                     const TrainConfig& config, const NetConfig& net_config) {
    return run_training(samples, split, config, net_config, Variant::nn, std::nullopt);
}

TrainResult train_pinn(std::span<const TrajectorySample> samples, const SplitIndex& split,
                       const TrainConfig& config, const NetConfig& net_config, const PhysicsParams& physics) {
    return run_training(samples, split, config, net_config, Variant::pinn, physics);
}

TrainResult train_perl(std::span<const TrajectorySample> samples, const SplitIndex& split,
                       const TrainConfig& config, const NetConfig& net_config, const PhysicsParams& physics) {
    return run_training(samples, split, config, net_config, Variant::perl, physics);
}

TrainResult train_variant(std::span<const TrajectorySample> samples, const SplitIndex& split,
                          const TrainConfig& config, const NetConfig& net_config,
                          const std::optional<PhysicsParams>& physics) {
    switch (config.variant) {
        case Variant::nn: return train_nn(samples, split, config, net_config);
        case Variant::pinn:
            if (!physics) throw ConfigError("pinn needs physics parameters");
            return train_pinn(samples, split, config, net_config, *physics);
        case Variant::perl:
            if (!physics) throw ConfigError("perl needs physics parameters");
            return train_perl(samples, split, config, net_config, *physics);
        case Variant::physics: break;
    }
    if (!physics) throw ConfigError("physics variant needs physics parameters");
    TrainResult r;
    r.report.variant = Variant::physics;
    r.report.config = config;
    r.report.net_config = net_config;
    r.report.physics = physics;
    return r;
}

PredictionRecord predict(Variant variant, const TrajectorySample& sample, const PredictorArtifacts& artifacts) {
    PredictionRecord rec;
    rec.sample_id = sample.sample_id;
    const std::size_t T = sample.t_fwd();

    std::vector<double> physics;
    if (variant == Variant::physics || variant == Variant::perl) {
        if (!artifacts.physics) throw ConfigError(to_string(variant) + " prediction needs physics parameters");
        RolloutDiagnostics diag;
        physics = physics_rollout(sample, *artifacts.physics, artifacts.delta, &diag);
        rec.collision = diag.collision;
    }
    std::vector<double> network;
    if (uses_network(variant)) {
        if (!artifacts.net) throw ConfigError(to_string(variant) + " prediction needs network weights");
        const auto& net = *artifacts.net;
        if (net.config.output_dim != T || net.config.input_dim != 3 * sample.k())
            throw DataError("network shape does not match the samples");
        ForwardCache cache;
        network = forward(net, build_input(sample, net.norm), sample.t_back(), Mode::eval, nullptr, cache);
    }

    switch (variant) {
        case Variant::physics: rec.predicted_accel = physics; break;
        case Variant::nn:
        case Variant::pinn: rec.predicted_accel = network; break;
        case Variant::perl:
            rec.predicted_accel.resize(T);
            for (std::size_t j = 0; j < T; ++j) rec.predicted_accel[j] = physics[j] + network[j];
            rec.physics_component = std::move(physics);
            rec.residual_component = std::move(network);
            break;
    }
    rec.predicted_speed = reconstruct_speed(sample.ego_speed_at_t0, rec.predicted_accel, artifacts.delta);
    return rec;
}

std::vector<PredictionRecord> predict_all(Variant variant, std::span<const TrajectorySample> samples,
                                          const PredictorArtifacts& artifacts) {
    std::vector<PredictionRecord> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(predict(variant, s, artifacts));
    return out;
}

void to_json(nlohmann::json& j, const PredictionRecord& r) {
    j = {{"sample_id", r.sample_id},
         {"predicted_accel", r.predicted_accel},
         {"predicted_speed", r.predicted_speed},
         {"physics_component", r.physics_component},
         {"residual_component", r.residual_component},
         {"collision", r.collision}};
}

void from_json(const nlohmann::json& j, PredictionRecord& r) {
    r.sample_id = j.at("sample_id").get<std::int64_t>();
    r.predicted_accel = j.at("predicted_accel").get<std::vector<double>>();
    r.predicted_speed = j.at("predicted_speed").get<std::vector<double>>();
    r.physics_component = j.value("physics_component", std::vector<double>{});
    r.residual_component = j.value("residual_component", std::vector<double>{});
    r.collision = j.value("collision", false);
}

void write_records(std::span<const PredictionRecord> records, Variant variant, double delta,
                   const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << nlohmann::json{{"format_version", 1}, {"variant", to_string(variant)}, {"delta", delta}}.dump() << '\n';
    for (const auto& r : records) out << nlohmann::json(r).dump() << '\n';
    if (!out) throw DataError("failed writing " + path.string());
}

std::vector<PredictionRecord> read_records(const std::filesystem::path& path, Variant* variant) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ParseError("missing header", 1);
    try {
        const auto h = nlohmann::json::parse(line);
        if (h.at("format_version").get<int>() != 1) throw ParseError("unsupported format_version", 1);
        if (variant) *variant = parse_variant(h.at("variant").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed header: ") + e.what(), 1);
    }
    std::vector<PredictionRecord> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(nlohmann::json::parse(line).get<PredictionRecord>());
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("malformed record: ") + e.what(), line_no);
        }
    }
    return out;
}

}  // namespace perlcf
