#include "perlcf/neuralnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "perlcf/error.hpp"

namespace perlcf {

std::string to_string(CellType c) { return c == CellType::lstm ? "lstm" : "gru"; }
std::string to_string(OutputActivation a) { return a == OutputActivation::linear ? "linear" : "relu"; }

CellType parse_cell_type(const std::string& name) {
    if (name == "lstm") return CellType::lstm;
    if (name == "gru") return CellType::gru;
    throw ConfigError("unknown cell type '" + name + "' (expected lstm|gru)");
}

OutputActivation parse_output_activation(const std::string& name) {
    if (name == "linear") return OutputActivation::linear;
    if (name == "relu") return OutputActivation::relu;
    throw ConfigError("unknown output activation '" + name + "' (expected linear|relu)");
}

void NetConfig::validate() const {
    if (units1 < 1 || units2 < 1 || dense_units < 1 || output_dim < 1 || input_dim < 1)
        throw ConfigError("net sizes must all be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("net.dropout must be in [0, 1)");
}

void to_json(nlohmann::json& j, const NetConfig& c) {
    j = {{"cell", to_string(c.cell)},
         {"units1", c.units1},
         {"units2", c.units2},
         {"dense_units", c.dense_units},
         {"dropout", c.dropout},
         {"output_dim", c.output_dim},
         {"input_dim", c.input_dim},
         {"output_activation", to_string(c.output_activation)},
         {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, NetConfig& c) {
    NetConfig d;
    c.cell = parse_cell_type(j.value("cell", to_string(d.cell)));
    c.units1 = j.value("units1", d.units1);
    c.units2 = j.value("units2", d.units2);
    c.dense_units = j.value("dense_units", d.dense_units);
    c.dropout = j.value("dropout", d.dropout);
    c.output_dim = j.value("output_dim", d.output_dim);
    c.input_dim = j.value("input_dim", d.input_dim);
    c.output_activation = parse_output_activation(j.value("output_activation", to_string(d.output_activation)));
    c.seed = j.value("seed", d.seed);
}

const std::vector<std::string>& tensor_names() {
    static const std::vector<std::string> names{"rnn1.W", "rnn1.U", "rnn1.b", "rnn2.W", "rnn2.U",
                                                "rnn2.b", "dense.W", "dense.b", "out.W", "out.b"};
    return names;
}

std::size_t RecurrentNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : params) n += t.size();
    return n;
}

TensorList zeros_like(const TensorList& params) {
    TensorList out(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        out[i].shape = params[i].shape;
        out[i].values.assign(params[i].size(), 0.0);
    }
    return out;
}

namespace {

Tensor make_tensor(std::vector<std::size_t> shape) {
    Tensor t;
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    t.shape = std::move(shape);
    t.values.assign(n, 0.0);
    return t;
}

void fill_uniform(Tensor& t, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.values) v = dist(rng);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// y[r] += sum_c M[r][c] x[c] for a rows x cols row-major matrix.
inline void matvec_add(const double* M, std::size_t rows, std::size_t cols, const double* x, double* y) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = M + r * cols;
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += row[c] * x[c];
        y[r] += acc;
    }
}

// y[c] += sum_r M[r][c] d[r]
inline void matvec_t_add(const double* M, std::size_t rows, std::size_t cols, const double* d, double* y) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double dr = d[r];
        if (dr == 0.0) continue;
        const double* row = M + r * cols;
        for (std::size_t c = 0; c < cols; ++c) y[c] += dr * row[c];
    }
}

// G[r][c] += d[r] * x[c]
inline void outer_add(double* G, std::size_t rows, std::size_t cols, const double* d, const double* x) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double dr = d[r];
        if (dr == 0.0) continue;
        double* row = G + r * cols;
        for (std::size_t c = 0; c < cols; ++c) row[c] += dr * x[c];
    }
}

struct LayerView {
    const double* W;
    const double* U;
    const double* b;
    std::size_t in;
    std::size_t hidden;
};

void lstm_forward(const LayerView& L, const double* x, std::size_t T, LayerCache& c) {
    const std::size_t H = L.hidden, G = 4 * H;
    c.gates.assign(T * G, 0.0);
    c.cell.assign((T + 1) * H, 0.0);
    c.tanh_c.assign(T * H, 0.0);
    c.hidden.assign((T + 1) * H, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        double* z = c.gates.data() + t * G;
        std::copy(L.b, L.b + G, z);
        matvec_add(L.W, G, L.in, x + t * L.in, z);
        matvec_add(L.U, G, H, c.hidden.data() + t * H, z);
        const double* c_prev = c.cell.data() + t * H;
        double* c_next = c.cell.data() + (t + 1) * H;
        double* tc = c.tanh_c.data() + t * H;
        double* h = c.hidden.data() + (t + 1) * H;
        for (std::size_t u = 0; u < H; ++u) {
            const double i = sigmoid(z[u]);
            const double f = sigmoid(z[H + u]);
            const double g = std::tanh(z[2 * H + u]);
            const double o = sigmoid(z[3 * H + u]);
            z[u] = i;
            z[H + u] = f;
            z[2 * H + u] = g;
            z[3 * H + u] = o;
            c_next[u] = f * c_prev[u] + i * g;
            tc[u] = std::tanh(c_next[u]);
            h[u] = o * tc[u];
        }
    }
}

void gru_forward(const LayerView& L, const double* x, std::size_t T, LayerCache& c, std::vector<double>& scratch) {
    const std::size_t H = L.hidden, G = 3 * H;
    c.gates.assign(T * G, 0.0);
    c.cell.clear();
    c.tanh_c.clear();
    c.hidden.assign((T + 1) * H, 0.0);
    scratch.assign(H, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
        double* a = c.gates.data() + t * G;
        const double* h_prev = c.hidden.data() + t * H;
        double* h = c.hidden.data() + (t + 1) * H;
        std::copy(L.b, L.b + G, a);
        matvec_add(L.W, G, L.in, x + t * L.in, a);
        matvec_add(L.U, 2 * H, H, h_prev, a);  // z and r rows
        for (std::size_t u = 0; u < 2 * H; ++u) a[u] = sigmoid(a[u]);
        for (std::size_t u = 0; u < H; ++u) scratch[u] = a[H + u] * h_prev[u];
        matvec_add(L.U + 2 * H * H, H, H, scratch.data(), a + 2 * H);
        for (std::size_t u = 0; u < H; ++u) {
            const double n = std::tanh(a[2 * H + u]);
            a[2 * H + u] = n;
            const double z = a[u];
            h[u] = (1.0 - z) * n + z * h_prev[u];
        }
    }
}

struct LayerGrads {
    double* W;
    double* U;
    double* b;
};

// dh_above: [T][H] gradient arriving from above (nullptr rows treated as 0
// except the final step when only_last is set). Writes dx ([T][in]) when
// non-null.
void lstm_backward(const LayerView& L, const LayerCache& c, const double* x, std::size_t T,
                   const double* dh_above, bool only_last, LayerGrads g, double* dx) {
    const std::size_t H = L.hidden, G = 4 * H;
    std::vector<double> dh(H, 0.0), dc(H, 0.0), dz(G), dh_prev(H);
    for (std::size_t t = T; t-- > 0;) {
        if (only_last) {
            if (t == T - 1)
                for (std::size_t u = 0; u < H; ++u) dh[u] += dh_above[u];
        } else {
            for (std::size_t u = 0; u < H; ++u) dh[u] += dh_above[t * H + u];
        }
        const double* gt = c.gates.data() + t * G;
        const double* tc = c.tanh_c.data() + t * H;
        const double* c_prev = c.cell.data() + t * H;
        for (std::size_t u = 0; u < H; ++u) {
            const double i = gt[u], f = gt[H + u], gg = gt[2 * H + u], o = gt[3 * H + u];
            const double d_o = dh[u] * tc[u];
            const double d_c = dh[u] * o * (1.0 - tc[u] * tc[u]) + dc[u];
            dz[u] = d_c * gg * i * (1.0 - i);
            dz[H + u] = d_c * c_prev[u] * f * (1.0 - f);
            dz[2 * H + u] = d_c * i * (1.0 - gg * gg);
            dz[3 * H + u] = d_o * o * (1.0 - o);
            dc[u] = d_c * f;
        }
        outer_add(g.W, G, L.in, dz.data(), x + t * L.in);
        outer_add(g.U, G, H, dz.data(), c.hidden.data() + t * H);
        for (std::size_t r = 0; r < G; ++r) g.b[r] += dz[r];
        if (dx) matvec_t_add(L.W, G, L.in, dz.data(), dx + t * L.in);
        std::fill(dh_prev.begin(), dh_prev.end(), 0.0);
        matvec_t_add(L.U, G, H, dz.data(), dh_prev.data());
        dh.swap(dh_prev);
    }
}

void gru_backward(const LayerView& L, const LayerCache& c, const double* x, std::size_t T,
                  const double* dh_above, bool only_last, LayerGrads g, double* dx) {
    const std::size_t H = L.hidden, G = 3 * H;
    std::vector<double> dh(H, 0.0), da(G), dh_prev(H), rh(H), drh(H);
    const double* Un = L.U + 2 * H * H;
    for (std::size_t t = T; t-- > 0;) {
        if (only_last) {
            if (t == T - 1)
                for (std::size_t u = 0; u < H; ++u) dh[u] += dh_above[u];
        } else {
            for (std::size_t u = 0; u < H; ++u) dh[u] += dh_above[t * H + u];
        }
        const double* a = c.gates.data() + t * G;
        const double* h_prev = c.hidden.data() + t * H;
        for (std::size_t u = 0; u < H; ++u) {
            const double z = a[u], n = a[2 * H + u];
            da[2 * H + u] = dh[u] * (1.0 - z) * (1.0 - n * n);
            da[u] = dh[u] * (h_prev[u] - n) * z * (1.0 - z);
            dh_prev[u] = dh[u] * z;
            rh[u] = a[H + u] * h_prev[u];
        }
        std::fill(drh.begin(), drh.end(), 0.0);
        matvec_t_add(Un, H, H, da.data() + 2 * H, drh.data());
        for (std::size_t u = 0; u < H; ++u) {
            const double r = a[H + u];
            da[H + u] = drh[u] * h_prev[u] * r * (1.0 - r);
            dh_prev[u] += drh[u] * r;
        }
        outer_add(g.W, G, L.in, da.data(), x + t * L.in);
        outer_add(g.U, 2 * H, H, da.data(), h_prev);
        outer_add(g.U + 2 * H * H, H, H, da.data() + 2 * H, rh.data());
        for (std::size_t r = 0; r < G; ++r) g.b[r] += da[r];
        if (dx) matvec_t_add(L.W, G, L.in, da.data(), dx + t * L.in);
        matvec_t_add(L.U, 2 * H, H, da.data(), dh_prev.data());
        dh.swap(dh_prev);
    }
}

LayerView layer_view(const RecurrentNet& net, int layer) {
    const auto& c = net.config;
    if (layer == 1)
        return {net.params[kRnn1W].values.data(), net.params[kRnn1U].values.data(),
                net.params[kRnn1B].values.data(), c.input_dim, c.units1};
    return {net.params[kRnn2W].values.data(), net.params[kRnn2U].values.data(),
            net.params[kRnn2B].values.data(), c.units1, c.units2};
}

bool all_finite(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void check_shapes(const RecurrentNet& net) {
    if (net.params.size() != kTensorCount) throw DataError("net has wrong tensor count");
    const auto& c = net.config;
    const std::size_t G = c.gates();
    const std::size_t expected[kTensorCount] = {
        G * c.units1 * c.input_dim, G * c.units1 * c.units1, G * c.units1,
        G * c.units2 * c.units1,    G * c.units2 * c.units2, G * c.units2,
        c.dense_units * c.units2,   c.dense_units,           c.output_dim * c.dense_units,
        c.output_dim};
    for (std::size_t i = 0; i < kTensorCount; ++i)
        if (net.params[i].size() != expected[i])
            throw DataError("tensor " + tensor_names()[i] + " has the wrong size for the net config");
}

}  // namespace

RecurrentNet init_net(const NetConfig& config, const NormStats& norm) {
    config.validate();
    RecurrentNet net;
    net.config = config;
    net.norm = norm;
    const std::size_t G = config.gates();
    Rng rng(config.seed);
    net.params.resize(kTensorCount);
    net.params[kRnn1W] = make_tensor({G * config.units1, config.input_dim});
    net.params[kRnn1U] = make_tensor({G * config.units1, config.units1});
    net.params[kRnn1B] = make_tensor({G * config.units1});
    net.params[kRnn2W] = make_tensor({G * config.units2, config.units1});
    net.params[kRnn2U] = make_tensor({G * config.units2, config.units2});
    net.params[kRnn2B] = make_tensor({G * config.units2});
    net.params[kDenseW] = make_tensor({config.dense_units, config.units2});
    net.params[kDenseB] = make_tensor({config.dense_units});
    net.params[kOutW] = make_tensor({config.output_dim, config.dense_units});
    net.params[kOutB] = make_tensor({config.output_dim});
    fill_uniform(net.params[kRnn1W], config.input_dim, rng);
    fill_uniform(net.params[kRnn1U], config.units1, rng);
    fill_uniform(net.params[kRnn2W], config.units1, rng);
    fill_uniform(net.params[kRnn2U], config.units2, rng);
    fill_uniform(net.params[kDenseW], config.units2, rng);
    fill_uniform(net.params[kOutW], config.dense_units, rng);
    if (config.cell == CellType::lstm) {
        for (std::size_t u = 0; u < config.units1; ++u) net.params[kRnn1B].values[config.units1 + u] = 1.0;
        for (std::size_t u = 0; u < config.units2; ++u) net.params[kRnn2B].values[config.units2 + u] = 1.0;
    }
    return net;
}

DropoutMasks draw_dropout_masks(const NetConfig& config, std::size_t steps, Rng& rng) {
    DropoutMasks m;
    if (config.dropout <= 0.0) return m;
    const double keep = 1.0 / (1.0 - config.dropout);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto draw = [&](std::vector<double>& v, std::size_t n) {
        v.resize(n);
        for (auto& x : v) x = unit(rng) < config.dropout ? 0.0 : keep;
    };
    draw(m.sequence1, steps * config.units1);
    draw(m.final2, config.units2);
    draw(m.dense, config.dense_units);
    return m;
}

std::vector<double> forward_with_masks(const RecurrentNet& net, std::span<const double> input,
                                       std::size_t steps, const DropoutMasks& masks, ForwardCache& cache) {
    const auto& c = net.config;
    if (steps == 0 || input.size() != steps * c.input_dim)
        throw DataError("forward: input is not [steps][input_dim]");
    check_shapes(net);
    cache.steps = steps;
    cache.masks = masks;
    cache.input.assign(input.begin(), input.end());

    std::vector<double> scratch;
    const auto L1 = layer_view(net, 1);
    const auto L2 = layer_view(net, 2);
    if (c.cell == CellType::lstm) lstm_forward(L1, cache.input.data(), steps, cache.layer1);
    else gru_forward(L1, cache.input.data(), steps, cache.layer1, scratch);

    cache.layer2_in.assign(cache.layer1.hidden.begin() + static_cast<std::ptrdiff_t>(c.units1),
                           cache.layer1.hidden.end());
    if (!masks.sequence1.empty())
        for (std::size_t i = 0; i < cache.layer2_in.size(); ++i) cache.layer2_in[i] *= masks.sequence1[i];

    if (c.cell == CellType::lstm) lstm_forward(L2, cache.layer2_in.data(), steps, cache.layer2);
    else gru_forward(L2, cache.layer2_in.data(), steps, cache.layer2, scratch);

    cache.final_in.assign(cache.layer2.hidden.end() - static_cast<std::ptrdiff_t>(c.units2),
                          cache.layer2.hidden.end());
    if (!masks.final2.empty())
        for (std::size_t i = 0; i < c.units2; ++i) cache.final_in[i] *= masks.final2[i];

    cache.dense_act = net.params[kDenseB].values;
    matvec_add(net.params[kDenseW].values.data(), c.dense_units, c.units2, cache.final_in.data(),
               cache.dense_act.data());
    for (auto& v : cache.dense_act) v = std::tanh(v);
    cache.dense_out = cache.dense_act;
    if (!masks.dense.empty())
        for (std::size_t i = 0; i < c.dense_units; ++i) cache.dense_out[i] *= masks.dense[i];

    cache.pre_out = net.params[kOutB].values;
    matvec_add(net.params[kOutW].values.data(), c.output_dim, c.dense_units, cache.dense_out.data(),
               cache.pre_out.data());
    cache.output = cache.pre_out;
    if (c.output_activation == OutputActivation::relu)
        for (auto& v : cache.output) v = std::max(0.0, v);

    if (!all_finite(cache.output)) {
        if (!all_finite(cache.layer1.hidden)) throw NumericError("non-finite values in rnn1 hidden state");
        if (!all_finite(cache.layer2.hidden)) throw NumericError("non-finite values in rnn2 hidden state");
        if (!all_finite(cache.dense_act)) throw NumericError("non-finite values in dense activation");
        throw NumericError("non-finite values in network output");
    }
    return cache.output;
}

std::vector<double> forward(const RecurrentNet& net, std::span<const double> input, std::size_t steps,
                            Mode mode, Rng* dropout_rng, ForwardCache& cache) {
    if (mode == Mode::eval || net.config.dropout <= 0.0) return forward_with_masks(net, input, steps, {}, cache);
    if (!dropout_rng) throw ConfigError("train-mode forward with dropout needs a generator");
    const auto masks = draw_dropout_masks(net.config, steps, *dropout_rng);
    return forward_with_masks(net, input, steps, masks, cache);
}

void backward_accumulate(const RecurrentNet& net, const ForwardCache& cache,
                         std::span<const double> output_grad, TensorList& grads) {
    const auto& c = net.config;
    if (output_grad.size() != c.output_dim) throw DataError("backward: output_grad has the wrong length");
    if (grads.size() != kTensorCount) throw DataError("backward: gradient list has the wrong tensor count");
    for (std::size_t i = 0; i < kTensorCount; ++i)
        if (grads[i].size() != net.params[i].size()) throw DataError("backward: gradient shape mismatch");
    const std::size_t T = cache.steps;

    std::vector<double> d_pre(c.output_dim);
    for (std::size_t o = 0; o < c.output_dim; ++o)
        d_pre[o] = (c.output_activation == OutputActivation::relu && !(cache.pre_out[o] > 0.0)) ? 0.0 : output_grad[o];
    outer_add(grads[kOutW].values.data(), c.output_dim, c.dense_units, d_pre.data(), cache.dense_out.data());
    for (std::size_t o = 0; o < c.output_dim; ++o) grads[kOutB].values[o] += d_pre[o];

    std::vector<double> d_dense(c.dense_units, 0.0);
    matvec_t_add(net.params[kOutW].values.data(), c.output_dim, c.dense_units, d_pre.data(), d_dense.data());
    for (std::size_t u = 0; u < c.dense_units; ++u) {
        if (!cache.masks.dense.empty()) d_dense[u] *= cache.masks.dense[u];
        d_dense[u] *= 1.0 - cache.dense_act[u] * cache.dense_act[u];
    }
    outer_add(grads[kDenseW].values.data(), c.dense_units, c.units2, d_dense.data(), cache.final_in.data());
    for (std::size_t u = 0; u < c.dense_units; ++u) grads[kDenseB].values[u] += d_dense[u];

    std::vector<double> d_final(c.units2, 0.0);
    matvec_t_add(net.params[kDenseW].values.data(), c.dense_units, c.units2, d_dense.data(), d_final.data());
    if (!cache.masks.final2.empty())
        for (std::size_t u = 0; u < c.units2; ++u) d_final[u] *= cache.masks.final2[u];

    std::vector<double> d_seq(T * c.units1, 0.0);
    const auto L1 = layer_view(net, 1);
    const auto L2 = layer_view(net, 2);
    LayerGrads g2{grads[kRnn2W].values.data(), grads[kRnn2U].values.data(), grads[kRnn2B].values.data()};
    LayerGrads g1{grads[kRnn1W].values.data(), grads[kRnn1U].values.data(), grads[kRnn1B].values.data()};
    if (c.cell == CellType::lstm)
        lstm_backward(L2, cache.layer2, cache.layer2_in.data(), T, d_final.data(), true, g2, d_seq.data());
    else
        gru_backward(L2, cache.layer2, cache.layer2_in.data(), T, d_final.data(), true, g2, d_seq.data());
    if (!cache.masks.sequence1.empty())
        for (std::size_t i = 0; i < d_seq.size(); ++i) d_seq[i] *= cache.masks.sequence1[i];
    if (c.cell == CellType::lstm)
        lstm_backward(L1, cache.layer1, cache.input.data(), T, d_seq.data(), false, g1, nullptr);
    else
        gru_backward(L1, cache.layer1, cache.input.data(), T, d_seq.data(), false, g1, nullptr);
}

TensorList backward(const RecurrentNet& net, const ForwardCache& cache, std::span<const double> output_grad) {
    auto grads = zeros_like(net.params);
    backward_accumulate(net, cache, output_grad, grads);
    return grads;
}

AdamState make_adam(const RecurrentNet& net, double lr, double beta1, double beta2, double eps) {
    AdamState s;
    s.m = zeros_like(net.params);
    s.v = zeros_like(net.params);
    s.lr = lr;
    s.beta1 = beta1;
    s.beta2 = beta2;
    s.eps = eps;
    return s;
}

void adam_step(RecurrentNet& net, const TensorList& grads, AdamState& state) {
    if (grads.size() != net.params.size() || state.m.size() != net.params.size())
        throw DataError("adam_step: tensor count mismatch");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < net.params.size(); ++i) {
        auto& p = net.params[i].values;
        const auto& g = grads[i].values;
        auto& m = state.m[i].values;
        auto& v = state.v[i].values;
        if (g.size() != p.size() || m.size() != p.size()) throw DataError("adam_step: shape mismatch");
        for (std::size_t k = 0; k < p.size(); ++k) {
            m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
            v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
            const double m_hat = m[k] / c1;
            const double v_hat = v[k] / c2;
            p[k] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

std::vector<double> build_input(const TrajectorySample& s, const NormStats& norm) {
    const std::size_t K = s.k(), T = s.t_back();
    std::vector<double> x(T * 3 * K);
    for (std::size_t t = 0; t < T; ++t) {
        double* row = x.data() + t * 3 * K;
        for (std::size_t k = 0; k < K; ++k) {
            const auto& st = s.history[k][t];
            row[3 * k] = (st.accel - norm.accel_mean) / norm.accel_std;
            row[3 * k + 1] = (st.speed - norm.speed_mean) / norm.speed_std;
            row[3 * k + 2] = k == 0 ? 0.0 : (st.spacing - norm.spacing_mean) / norm.spacing_std;
        }
    }
    return x;
}

void to_json(nlohmann::json& j, const RecurrentNet& net) {
    auto tensors = nlohmann::json::object();
    for (std::size_t i = 0; i < net.params.size(); ++i)
        tensors[tensor_names()[i]] = {{"shape", net.params[i].shape}, {"values", net.params[i].values}};
    j = {{"format_version", 1}, {"net_config", net.config}, {"norm_stats", net.norm}, {"tensors", tensors}};
}

void from_json(const nlohmann::json& j, RecurrentNet& net) {
    if (j.at("format_version").get<int>() != 1) throw DataError("unsupported weight file format_version");
    net.config = j.at("net_config").get<NetConfig>();
    net.norm = j.at("norm_stats").get<NormStats>();
    net.params.assign(kTensorCount, {});
    for (std::size_t i = 0; i < kTensorCount; ++i) {
        const auto& t = j.at("tensors").at(tensor_names()[i]);
        net.params[i].shape = t.at("shape").get<std::vector<std::size_t>>();
        net.params[i].values = t.at("values").get<std::vector<double>>();
    }
    check_shapes(net);
}

void save_net(const RecurrentNet& net, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << nlohmann::json(net).dump() << '\n';
}

RecurrentNet load_net(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in).get<RecurrentNet>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed weight file " + path.string() + ": " + e.what());
    }
}

GradCheckResult gradient_check(const GradCheckConfig& gc) {
    NetConfig cfg;
    cfg.cell = gc.cell;
    cfg.units1 = gc.units1;
    cfg.units2 = gc.units2;
    cfg.dense_units = gc.dense_units;
    cfg.input_dim = gc.input_dim;
    cfg.output_dim = gc.output_dim;
    cfg.dropout = gc.dropout;
    cfg.output_activation = gc.output_activation;
    cfg.seed = gc.seed;
    auto net = init_net(cfg);

    Rng rng(derive_seed(gc.seed, 1));
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    // Biases start at zero; randomize them so every path carries gradient,
    // and keep ReLU outputs away from the kink.
    for (std::size_t id : {kRnn1B, kRnn2B, kDenseB, kOutB})
        for (auto& v : net.params[id].values) v += 0.5 * unit(rng);
    if (gc.output_activation == OutputActivation::relu)
        for (auto& v : net.params[kOutB].values) v = 1.0 + 0.25 * unit(rng);

    std::vector<double> input(gc.steps * gc.input_dim);
    for (auto& v : input) v = unit(rng);
    std::vector<double> weights(gc.output_dim);
    for (auto& v : weights) v = unit(rng);
    const DropoutMasks masks = draw_dropout_masks(cfg, gc.steps, rng);

    ForwardCache cache;
    auto loss = [&](const RecurrentNet& n) {
        const auto y = forward_with_masks(n, input, gc.steps, masks, cache);
        double l = 0.0;
        for (std::size_t o = 0; o < y.size(); ++o) l += weights[o] * y[o];
        return l;
    };
    loss(net);
    const auto analytic = backward(net, cache, weights);

    GradCheckResult res;
    for (std::size_t i = 0; i < kTensorCount; ++i) {
        for (std::size_t k = 0; k < net.params[i].size(); ++k) {
            const double orig = net.params[i].values[k];
            net.params[i].values[k] = orig + gc.step_size;
            const double lp = loss(net);
            net.params[i].values[k] = orig - gc.step_size;
            const double lm = loss(net);
            net.params[i].values[k] = orig;
            const double numeric = (lp - lm) / (2.0 * gc.step_size);
            const double a = analytic[i].values[k];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
            ++res.checked;
            if (rel > res.max_relative_error) {
                res.max_relative_error = rel;
                res.worst_tensor = tensor_names()[i];
                res.worst_index = k;
            }
        }
    }
    return res;
}

}  // namespace perlcf
