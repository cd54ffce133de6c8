#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "perlcf/cli.hpp"
#include "perlcf/error.hpp"
#include "perlcf/eval.hpp"
#include "perlcf/ingest.hpp"
#include "perlcf/synth.hpp"

namespace py = pybind11;
using namespace perlcf;

namespace {

// Configs cross the boundary as JSON text; the Python wrapper handles dicts.
template <class T>
T from_text(const std::string& text) {
    return text.empty() ? T{} : nlohmann::json::parse(text).get<T>();
}

template <class P>
P params_from_text(const std::string& text, const char* model) {
    auto j = text.empty() ? nlohmann::json::object() : nlohmann::json::parse(text);
    j["model"] = model;
    return std::get<P>(j.get<PhysicsParams>());
}

std::string synth_csv(const std::string& config) {
    std::ostringstream out;
    write_trajectory_csv(generate_corpus(from_text<SynthConfig>(config)), out);
    return out.str();
}

std::string extract_jsonl(const std::string& csv, const std::string& dataset) {
    const auto ds = from_text<DatasetConfig>(dataset);
    ds.validate();
    std::istringstream in(csv);
    const auto samples = extract_samples(parse_trajectory_csv(in, ds.delta), ds);
    std::ostringstream out;
    write_samples(samples, ds, out);
    return out.str();
}

py::tuple cli(const std::vector<std::string>& args) {
    std::vector<const char*> argv{"perlcf"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    int code = 0;
    {
        py::gil_scoped_release release;
        code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Car-following prediction core: physics models, recurrent nets, PERL training";

    // Later registrations are tried first, so derived types go last.
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    const auto& data_error = py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
    py::register_exception<ParseError>(m, "ParseError", data_error.ptr());
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    m.def("idm_accel", [](double v, double dv, double gap, const std::string& params) {
        return idm_accel(v, dv, gap, params_from_text<IdmParams>(params, "idm"));
    }, py::arg("v"), py::arg("dv"), py::arg("gap"), py::arg("params") = "");
    m.def("fvd_accel", [](double v, double dv, double gap, const std::string& params) {
        return fvd_accel(v, dv, gap, params_from_text<FvdParams>(params, "fvd"));
    }, py::arg("v"), py::arg("dv"), py::arg("gap"), py::arg("params") = "");
    m.def("reconstruct_speed", [](double v0, const std::vector<double>& accel, double delta) {
        return reconstruct_speed(v0, accel, delta);
    }, py::arg("v0"), py::arg("accel"), py::arg("delta"));
    m.def("interpolate_series", [](const std::vector<double>& series, double idx) {
        return interpolate_series(series, idx);
    }, py::arg("series"), py::arg("idx"));

    m.def("synth_csv", &synth_csv, py::arg("config") = "", "Synthetic corpus as raw trajectory CSV text");
    m.def("extract_jsonl", &extract_jsonl, py::arg("csv"), py::arg("dataset") = "",
          "Samples file text (JSON lines) cut from raw CSV text");

    m.def("gradient_check", [](const std::string& cell, double dropout, const std::string& activation,
                               std::uint64_t seed) {
        GradCheckConfig g;
        g.cell = parse_cell_type(cell);
        g.dropout = dropout;
        g.output_activation = parse_output_activation(activation);
        g.seed = seed;
        const auto r = gradient_check(g);
        return py::dict(py::arg("max_relative_error") = r.max_relative_error,
                        py::arg("worst_tensor") = r.worst_tensor, py::arg("checked") = r.checked);
    }, py::arg("cell") = "lstm", py::arg("dropout") = 0.0, py::arg("activation") = "linear", py::arg("seed") = 7);

    m.def("cli", &cli, py::arg("args"), "Runs the command-line tool; returns (exit code, stdout, stderr)");
}
