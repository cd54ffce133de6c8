#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "perlcf/error.hpp"
#include "perlcf/neuralnet.hpp"

using namespace perlcf;

namespace {

NetConfig tiny(CellType cell, std::size_t h1 = 2, std::size_t h2 = 2) {
    NetConfig c;
    c.cell = cell;
    c.units1 = h1;
    c.units2 = h2;
    c.dense_units = 2;
    c.input_dim = 3;
    c.output_dim = 2;
    c.dropout = 0.0;
    c.seed = 5;
    return c;
}

// Deterministic hand-set weights.
void hand_set(RecurrentNet& net) {
    int k = 0;
    for (auto& t : net.params)
        for (auto& v : t.values) v = 0.3 * std::sin(1.7 * ++k) + 0.05;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

using Mat = std::vector<std::vector<double>>;

Mat as_matrix(const Tensor& t) {
    Mat m(t.shape[0], std::vector<double>(t.shape[1]));
    for (std::size_t r = 0; r < t.shape[0]; ++r)
        for (std::size_t c = 0; c < t.shape[1]; ++c) m[r][c] = t.values[r * t.shape[1] + c];
    return m;
}

double dot_row(const Mat& m, std::size_t r, const std::vector<double>& x) {
    double s = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) s += m[r][c] * x[c];
    return s;
}

// One recurrent layer written straight from the textbook recurrences:
// LSTM gate blocks i, f, g, o; GRU blocks z, r, n.
std::vector<std::vector<double>> layer_oracle(CellType cell, const Tensor& Wt, const Tensor& Ut, const Tensor& bt,
                                              const std::vector<std::vector<double>>& xs) {
    const Mat W = as_matrix(Wt), U = as_matrix(Ut);
    const auto& b = bt.values;
    const std::size_t H = Ut.shape[1];
    std::vector<double> h(H, 0.0), c(H, 0.0);
    std::vector<std::vector<double>> out;
    for (const auto& x : xs) {
        std::vector<double> hn(H), cn(H);
        for (std::size_t u = 0; u < H; ++u) {
            if (cell == CellType::lstm) {
                auto pre = [&](std::size_t blk) { return b[blk * H + u] + dot_row(W, blk * H + u, x) + dot_row(U, blk * H + u, h); };
                const double i = sig(pre(0)), f = sig(pre(1)), g = std::tanh(pre(2)), o = sig(pre(3));
                cn[u] = f * c[u] + i * g;
                hn[u] = o * std::tanh(cn[u]);
            } else {
                const double z = sig(b[u] + dot_row(W, u, x) + dot_row(U, u, h));
                std::vector<double> rh(H);
                for (std::size_t q = 0; q < H; ++q)
                    rh[q] = sig(b[H + q] + dot_row(W, H + q, x) + dot_row(U, H + q, h)) * h[q];
                const double n = std::tanh(b[2 * H + u] + dot_row(W, 2 * H + u, x) + dot_row(U, 2 * H + u, rh));
                hn[u] = (1.0 - z) * n + z * h[u];
            }
        }
        h = hn;
        c = cn;
        out.push_back(h);
    }
    return out;
}

std::vector<double> net_oracle(const RecurrentNet& net, const std::vector<std::vector<double>>& xs) {
    const auto& p = net.params;
    const auto s1 = layer_oracle(net.config.cell, p[kRnn1W], p[kRnn1U], p[kRnn1B], xs);
    const auto s2 = layer_oracle(net.config.cell, p[kRnn2W], p[kRnn2U], p[kRnn2B], s1);
    const Mat D = as_matrix(p[kDenseW]), O = as_matrix(p[kOutW]);
    std::vector<double> d(D.size()), y(O.size());
    for (std::size_t r = 0; r < D.size(); ++r) d[r] = std::tanh(p[kDenseB].values[r] + dot_row(D, r, s2.back()));
    for (std::size_t r = 0; r < O.size(); ++r) y[r] = p[kOutB].values[r] + dot_row(O, r, d);
    return y;
}

std::vector<double> flat(const std::vector<std::vector<double>>& xs) {
    std::vector<double> out;
    for (const auto& r : xs) out.insert(out.end(), r.begin(), r.end());
    return out;
}

}  // namespace

TEST_CASE("forward matches a step-by-step recurrence oracle") {
    const std::vector<std::vector<double>> xs{{0.5, -1.0, 0.25}, {-0.3, 0.8, 1.1}};
    for (auto cell : {CellType::lstm, CellType::gru}) {
        auto net = init_net(tiny(cell));
        hand_set(net);
        ForwardCache cache;
        const auto y = forward(net, flat(xs), 2, Mode::eval, nullptr, cache);
        const auto want = net_oracle(net, xs);
        REQUIRE(y.size() == 2);
        for (std::size_t i = 0; i < 2; ++i) CHECK(y[i] == doctest::Approx(want[i]).epsilon(1e-13));
    }
}

TEST_CASE("zero network and ReLU clamp") {
    auto net = init_net(tiny(CellType::lstm));
    for (auto& t : net.params) std::fill(t.values.begin(), t.values.end(), 0.0);
    ForwardCache cache;
    const std::vector<double> x{1, 2, 3, -4, 5, 6};
    CHECK(forward(net, x, 2, Mode::eval, nullptr, cache) == std::vector<double>{0.0, 0.0});

    auto cfg = tiny(CellType::gru);
    cfg.output_activation = OutputActivation::relu;
    auto relu = init_net(cfg);
    for (auto& t : relu.params) std::fill(t.values.begin(), t.values.end(), 0.0);
    std::fill(relu.params[kOutB].values.begin(), relu.params[kOutB].values.end(), -1.0);
    CHECK(forward(relu, x, 2, Mode::eval, nullptr, cache) == std::vector<double>{0.0, 0.0});

    // Random ReLU nets never emit negatives.
    Rng rng(3);
    std::normal_distribution<double> n(0.0, 2.0);
    auto r2 = init_net(cfg);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> in(6);
        for (auto& v : in) v = n(rng);
        for (double y : forward(r2, in, 2, Mode::eval, nullptr, cache)) CHECK(y >= 0.0);
    }
}

TEST_CASE("initialization") {
    auto cfg = tiny(CellType::lstm, 128, 64);
    const auto a = init_net(cfg);
    const auto b = init_net(cfg);
    for (std::size_t i = 0; i < kTensorCount; ++i) CHECK(a.params[i].values == b.params[i].values);
    CHECK(a.params[kRnn2W].shape == std::vector<std::size_t>{4 * 64, 128});
    CHECK(a.params[kRnn2U].shape == std::vector<std::size_t>{4 * 64, 64});

    const std::vector<std::pair<TensorId, double>> fans{{kRnn1W, 3}, {kRnn1U, 128}, {kRnn2W, 128},
                                                        {kRnn2U, 64},  {kDenseW, 64}, {kOutW, 2}};
    for (auto [id, fan] : fans) {
        double mx = 0.0;
        for (double v : a.params[id].values) mx = std::max(mx, std::abs(v));
        CHECK(mx <= std::sqrt(1.0 / fan));
        CHECK(mx > 0.5 * std::sqrt(1.0 / fan));
    }
    for (std::size_t u = 0; u < 4 * 128; ++u)
        CHECK(a.params[kRnn1B].values[u] == (u >= 128 && u < 256 ? 1.0 : 0.0));
    const auto g = init_net(tiny(CellType::gru));
    for (double v : g.params[kRnn1B].values) CHECK(v == 0.0);

    cfg.seed = 6;
    CHECK(init_net(cfg).params[kRnn1W].values != a.params[kRnn1W].values);
    cfg.units1 = 0;
    CHECK_THROWS_AS(init_net(cfg), ConfigError);
}

TEST_CASE("dropout modes") {
    auto cfg = tiny(CellType::lstm, 4, 3);
    cfg.dropout = 0.5;
    const auto net = init_net(cfg);
    const std::vector<double> x{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, -0.1, -0.2, -0.3};
    ForwardCache c1, c2;
    Rng r1(1), r2(99);
    CHECK(forward(net, x, 3, Mode::eval, &r1, c1) == forward(net, x, 3, Mode::eval, &r2, c2));
    CHECK(forward(net, x, 3, Mode::eval, nullptr, c1) == forward(net, x, 3, Mode::eval, &r2, c2));
    const Rng untouched(1);
    CHECK(r1 == untouched);

    const auto m = draw_dropout_masks(cfg, 3, r1);
    CHECK(m.sequence1.size() == 12);
    for (double v : m.sequence1) CHECK((v == 0.0 || v == 2.0));

    auto zero = cfg;
    zero.dropout = 0.0;
    const auto net0 = init_net(zero);
    CHECK(forward(net0, x, 3, Mode::train, &r1, c1) == forward(net0, x, 3, Mode::eval, nullptr, c2));
    CHECK_THROWS_AS(forward(net, x, 3, Mode::train, nullptr, c1), ConfigError);
}

TEST_CASE("backward linearity") {
    auto cfg = tiny(CellType::gru, 4, 3);
    cfg.dropout = 0.2;
    const auto net = init_net(cfg);
    const std::vector<double> x{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    Rng rng(4);
    ForwardCache cache;
    forward(net, x, 2, Mode::train, &rng, cache);
    for (const auto& t : backward(net, cache, std::vector<double>{0.0, 0.0}))
        for (double v : t.values) CHECK(v == 0.0);
    const auto g1 = backward(net, cache, std::vector<double>{0.7, -1.3});
    const auto g2 = backward(net, cache, std::vector<double>{1.4, -2.6});
    for (std::size_t i = 0; i < g1.size(); ++i)
        for (std::size_t k = 0; k < g1[i].size(); ++k) CHECK(g2[i].values[k] == 2.0 * g1[i].values[k]);
    CHECK_THROWS_AS(backward(net, cache, std::vector<double>{1.0}), DataError);
}

TEST_CASE("gradients match central differences") {
    for (auto cell : {CellType::lstm, CellType::gru})
        for (double dropout : {0.0, 0.2})
            for (auto act : {OutputActivation::linear, OutputActivation::relu}) {
                GradCheckConfig g;
                g.cell = cell;
                g.dropout = dropout;
                g.output_activation = act;
                const auto r = gradient_check(g);
                INFO(to_string(cell), " dropout ", dropout, " ", to_string(act), " worst ", r.worst_tensor);
                CHECK(r.max_relative_error < 1e-4);
                CHECK(r.checked == init_net([&] {
                                       NetConfig c;
                                       c.cell = cell;
                                       c.units1 = 4;
                                       c.units2 = 3;
                                       c.dense_units = 3;
                                       c.input_dim = 6;
                                       c.output_dim = 2;
                                       return c;
                                   }()).parameter_count());
            }
}

TEST_CASE("Adam first step matches the closed form") {
    auto net = init_net(tiny(CellType::lstm));
    const auto before = net.params;
    auto state = make_adam(net, 0.01);
    auto grads = zeros_like(net.params);
    int k = 0;
    for (auto& t : grads)
        for (auto& v : t.values) v = (++k % 3 == 0) ? 0.0 : 0.1 * k * ((k % 2) ? 1 : -1);
    adam_step(net, grads, state);
    CHECK(state.step == 1);
    for (std::size_t i = 0; i < grads.size(); ++i)
        for (std::size_t j = 0; j < grads[i].size(); ++j) {
            const double g = grads[i].values[j];
            // m_hat = g, v_hat = g^2 after bias correction.
            const double want = before[i].values[j] - 0.01 * g / (std::abs(g) + 1e-8);
            CHECK(net.params[i].values[j] == doctest::Approx(want).epsilon(1e-12));
            CHECK(state.m[i].values[j] == doctest::Approx(0.1 * g).epsilon(1e-15));
        }

    // Zero gradients from fresh moments change nothing; later they only
    // decay the moments.
    auto fresh = init_net(tiny(CellType::lstm));
    auto fresh_state = make_adam(fresh);
    const auto p0 = fresh.params;
    adam_step(fresh, zeros_like(fresh.params), fresh_state);
    for (std::size_t i = 0; i < p0.size(); ++i) CHECK(fresh.params[i].values == p0[i].values);
    const auto m1 = state.m;
    adam_step(net, zeros_like(net.params), state);
    for (std::size_t i = 0; i < m1.size(); ++i)
        for (std::size_t j = 0; j < m1[i].size(); ++j) CHECK(state.m[i].values[j] == 0.9 * m1[i].values[j]);
}

TEST_CASE("Adam is deterministic") {
    auto a = init_net(tiny(CellType::gru));
    auto b = a;
    auto sa = make_adam(a), sb = make_adam(b);
    auto g = zeros_like(a.params);
    for (auto& t : g)
        for (std::size_t j = 0; j < t.size(); ++j) t.values[j] = std::cos(static_cast<double>(j));
    for (int i = 0; i < 3; ++i) {
        adam_step(a, g, sa);
        adam_step(b, g, sb);
    }
    for (std::size_t i = 0; i < a.params.size(); ++i) CHECK(a.params[i].values == b.params[i].values);
}

TEST_CASE("weights round-trip bit-exactly") {
    auto cfg = tiny(CellType::lstm, 5, 4);
    const NormStats norm{0.1, 0.7, 12.3, 3.3, 20.0, 4.4};
    const auto net = init_net(cfg, norm);
    const auto path = testutil::temp_dir("nn_roundtrip") / "weights.json";
    save_net(net, path);
    const auto back = load_net(path);
    for (std::size_t i = 0; i < kTensorCount; ++i) {
        CHECK(back.params[i].shape == net.params[i].shape);
        CHECK(back.params[i].values == net.params[i].values);
    }
    CHECK(back.norm.speed_std == 3.3);
    CHECK(nlohmann::json(back.config) == nlohmann::json(net.config));
    const auto j = nlohmann::json::parse(nlohmann::json(net).dump());
    CHECK(j.at("format_version") == 1);
    CHECK(j.at("tensors").contains("rnn1.W"));
}

TEST_CASE("non-finite values raise numeric errors") {
    auto net = init_net(tiny(CellType::lstm));
    ForwardCache cache;
    net.params[kOutB].values[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(forward(net, std::vector<double>{1, 2, 3}, 1, Mode::eval, nullptr, cache), NumericError);
    auto n2 = init_net(tiny(CellType::gru));
    n2.params[kDenseB].values[0] = std::numeric_limits<double>::quiet_NaN();
    try {
        forward(n2, std::vector<double>{1, 2, 3}, 1, Mode::eval, nullptr, cache);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("dense") != std::string::npos);
    }
    CHECK_THROWS_AS(forward(net, std::vector<double>{1, 2}, 1, Mode::eval, nullptr, cache), DataError);
}

TEST_CASE("network input layout") {
    auto s = testutil::cruising_sample(2, 3, 1, 20.0, 10.0);
    s.history[1][2].accel = 0.5;
    const NormStats norm{0.0, 0.5, 10.0, 2.0, 18.0, 4.0};
    const auto x = build_input(s, norm);
    REQUIRE(x.size() == 3 * 6);
    CHECK(x[2] == 0.0);                          // lead spacing fed as 0
    CHECK(x[12 + 3] == 1.0);                     // accel 0.5 / 0.5
    CHECK(x[12 + 4] == 0.0);                     // speed at the mean
    CHECK(x[12 + 5] == doctest::Approx(0.5));    // (20 - 18) / 4
}
