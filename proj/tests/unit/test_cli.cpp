#include <fstream>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "perlcf/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "perlcf");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Run r;
    r.code = perlcf::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

const std::vector<std::string> kSmallNet{"--set", "net.units1=4", "--set", "net.units2=3",
                                         "--set", "net.dense_units=3", "--set", "train.batch_size=16"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

// Small corpus shared by the pipeline tests.
fs::path make_samples(const fs::path& dir) {
    const auto csv = dir / "raw.csv";
    const auto samples = dir / "samples.jsonl";
    REQUIRE(cli({"synth", "--out", csv.string(), "--seed", "3", "--platoons", "1", "--vehicles", "3", "--steps",
                 "200", "--noise", "0.1"})
                .code == 0);
    const auto r = cli({"extract", "--input", csv.string(), "--out", samples.string(), "--k", "2", "--t-back", "6",
                        "--t-fwd", "2"});
    REQUIRE(r.code == 0);
    // Two egos, 200 - 8 + 1 windows each.
    CHECK(r.out.find("extracted 386 samples") != std::string::npos);
    return samples;
}

}  // namespace

TEST_CASE("usage errors exit 1") {
    CHECK(cli({}).code == 1);
    CHECK(cli({"bogus"}).code == 1);
    CHECK(cli({"--help"}).code == 0);
    const auto dir = testutil::temp_dir("cli_usage");
    const auto samples = make_samples(dir);
    // Training requires an explicit seed.
    const auto r = cli({"train", "--samples", samples.string(), "--out", (dir / "m").string()});
    CHECK(r.code == 1);
    CHECK_FALSE(r.err.empty());
    CHECK(cli({"train", "--samples", samples.string(), "--out", (dir / "m").string(), "--seed", "1", "--set",
               "train.nonsense=3"})
              .code == 1);
    CHECK(cli({"train", "--samples", samples.string(), "--out", (dir / "m").string(), "--seed", "1", "--set",
               "sweep.jobs=3"})
              .code == 1);
    CHECK(cli({"calibrate", "--samples", samples.string(), "--out", (dir / "c.json").string(), "--seed", "1",
               "--sample-size", "100000"})
              .code == 1);
}

TEST_CASE("malformed input exits 2") {
    const auto dir = testutil::temp_dir("cli_bad");
    {
        std::ofstream out(dir / "bad.csv");
        out << "vehicle_id,time,position,speed,accel,leader_id\n1,0,0,abc,0,\n";
    }
    const auto r = cli({"extract", "--input", (dir / "bad.csv").string(), "--out", (dir / "s.jsonl").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("line 2") != std::string::npos);
}

TEST_CASE("gradcheck passes") {
    const auto r = cli({"gradcheck", "--cell", "gru"});
    CHECK(r.code == 0);
    CHECK(r.out.find("(pass)") != std::string::npos);
}

TEST_CASE("full pipeline with manifests and byte-identical reruns") {
    const auto dir = testutil::temp_dir("cli_pipeline");
    const auto samples = make_samples(dir);
    const auto calib = dir / "calib.json";
    REQUIRE(cli({"calibrate", "--samples", samples.string(), "--out", calib.string(), "--seed", "2", "--model",
                 "idm", "--sample-size", "60", "--repetitions", "2"})
                .code == 0);
    const auto manifest = nlohmann::json::parse(slurp(dir / "calib.json.manifest.json"));
    CHECK(manifest.at("command") == "calibrate");
    CHECK(manifest.at("outputs").at(0).at("sha256").get<std::string>().size() == 64);
    CHECK(manifest.at("config").at("calibration").at("sample_size") == 60);

    auto train_args = [&](const fs::path& out) {
        return with({"train", "--samples", samples.string(), "--out", out.string(), "--seed", "5", "--variant",
                     "perl", "--params", calib.string(), "--epochs", "2"},
                    kSmallNet);
    };
    REQUIRE(cli(train_args(dir / "m1")).code == 0);
    REQUIRE(cli(train_args(dir / "m2")).code == 0);
    for (const char* f : {"weights.json", "train_report.json", "artifacts.json"})
        CHECK(slurp(dir / "m1" / f) == slurp(dir / "m2" / f));

    const auto recs = dir / "recs.jsonl";
    REQUIRE(cli({"predict", "--samples", samples.string(), "--model", (dir / "m1").string(), "--out",
                 recs.string()})
                .code == 0);
    const auto ev = cli({"evaluate", "--records", recs.string(), "--samples", samples.string(), "--out",
                         (dir / "eval.json").string(), "--model", (dir / "m1").string(), "--plot-dir",
                         (dir / "plots").string()});
    REQUIRE(ev.code == 0);
    const auto report = nlohmann::json::parse(slurp(dir / "eval.json"));
    CHECK(report.at("variant") == "perl");
    CHECK(report.at("mse_a_test").get<double>() >= 0.0);
    CHECK(fs::exists(dir / "plots" / "summary.csv"));
    CHECK(fs::exists(dir / "plots" / "convergence.csv"));

    // A config file is layered under --set and dedicated flags.
    {
        std::ofstream cfg(dir / "cfg.json");
        cfg << R"({"train": {"max_epochs": 7, "mu": 0.25}, "net": {"units1": 5}})";
    }
    REQUIRE(cli(with({"train", "--samples", samples.string(), "--out", (dir / "m3").string(), "--seed", "5",
                      "--variant", "nn", "--config", (dir / "cfg.json").string(), "--set", "net.units1=4",
                      "--epochs", "1"},
                     {"--set", "net.units2=3", "--set", "net.dense_units=3"}))
                .code == 0);
    const auto m3 = nlohmann::json::parse(slurp(dir / "m3" / "manifest.json"));
    CHECK(m3.at("config").at("train").at("max_epochs") == 1);
    CHECK(m3.at("config").at("train").at("mu") == 0.25);
    CHECK(m3.at("config").at("net").at("units1") == 4);
}

TEST_CASE("synth and sweep are deterministic") {
    const auto dir = testutil::temp_dir("cli_det");
    for (const char* name : {"a.csv", "b.csv"})
        REQUIRE(cli({"synth", "--out", (dir / name).string(), "--seed", "11", "--steps", "150", "--noise", "0.2"})
                    .code == 0);
    CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
    const auto m1 = nlohmann::json::parse(slurp(dir / "a.csv.manifest.json"));
    const auto m2 = nlohmann::json::parse(slurp(dir / "b.csv.manifest.json"));
    CHECK(m1.at("outputs").at(0).at("sha256") == m2.at("outputs").at(0).at("sha256"));

    const auto samples = make_samples(dir);
    auto sweep = [&](const fs::path& out) {
        return cli(with({"sweep", "--samples", samples.string(), "--out", out.string(), "--seed", "0", "--seeds",
                         "2", "--sizes", "30", "60", "--variants", "physics", "nn", "--epochs", "1", "--model",
                         "newell"},
                        kSmallNet));
    };
    const auto r = sweep(dir / "s1");
    CHECK(r.code == 0);
    CHECK(r.out.find("8/8 cells succeeded") != std::string::npos);
    REQUIRE(sweep(dir / "s2").code == 0);
    CHECK(slurp(dir / "s1" / "aggregate.csv") == slurp(dir / "s2" / "aggregate.csv"));
    CHECK(slurp(dir / "s1" / "sweep" / "nn" / "60" / "1" / "report.json") ==
          slurp(dir / "s2" / "sweep" / "nn" / "60" / "1" / "report.json"));
}
