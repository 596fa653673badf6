#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "flashcast/checkpoint.hpp"
#include "flashcast/commands.hpp"
#include "flashcast/version.hpp"

namespace py = pybind11;
using namespace flashcast;

namespace {

using F32 = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor4<float> to_tensor(const F32& a, const char* what) {
    if (a.ndim() != 4) throw DimensionError("rank", std::string(what) + " must be a 4-d (B, C, H, W) array");
    Tensor4<float> t(Shape4{std::size_t(a.shape(0)), std::size_t(a.shape(1)), std::size_t(a.shape(2)), std::size_t(a.shape(3))});
    std::copy(a.data(), a.data() + a.size(), t.data());
    return t;
}

F32 to_array(const Tensor4<float>& t) {
    const Shape4 s = t.shape();
    F32 a({s.n, s.c, s.h, s.w});
    std::copy(t.data(), t.data() + t.size(), a.mutable_data());
    return a;
}

F32 plane_array(const std::vector<float>& v, std::size_t c, std::size_t h, std::size_t w) {
    F32 a = c ? F32({c, h, w}) : F32({h, w});
    std::copy(v.begin(), v.end(), a.mutable_data());
    return a;
}

std::span<const double> span_of(const F64& a) { return {a.data(), std::size_t(a.size())}; }

Json parse_json(const std::string& text) {
    try {
        return text.empty() ? Json::object() : Json::parse(text);
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("invalid JSON: ") + e.what());
    }
}

py::dict breakdown_dict(const LossBreakdown& b) {
    py::dict d;
    d["total"] = b.total;
    d["cls"] = b.cls;
    d["reg"] = b.reg;
    d["valid"] = b.valid;
    d["positive"] = b.positive;
    d["anomaly"] = b.anomaly;
    return d;
}

class Model {
public:
    Model(ModelParams<float> p) : params_(std::move(p)) {}

    static Model create(const std::string& config_json, std::uint64_t seed) {
        ModelConfig cfg = ModelConfig::tiny();
        from_json(parse_json(config_json), cfg);
        cfg.validate();
        return Model(init_params<float>(cfg, seed));
    }

    static Model load(const std::filesystem::path& path) { return Model(load_checkpoint(path).params); }

    py::tuple forward(const F32& x) const {
        const Tensor4<float> in = to_tensor(x, "x");
        NoGradGuard guard;
        Rng rng(0);
        const auto out = flashcast::forward(params_, Variable<float>::constant(in), false, rng);
        return py::make_tuple(to_array(out.logits.value()), to_array(out.magnitudes.value()));
    }

    py::dict loss(const F32& x, const F32& y, const F32& mask, const std::string& loss_json) const {
        LossConfig cfg;
        from_json(parse_json(loss_json), cfg);
        NoGradGuard guard;
        Rng rng(0);
        const auto out = flashcast::forward(params_, Variable<float>::constant(to_tensor(x, "x")), false, rng);
        return breakdown_dict(total_loss(out.logits, out.magnitudes, to_tensor(y, "y"), to_tensor(mask, "mask"), cfg).breakdown);
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& p : const_cast<ModelParams<float>&>(params_).named_params()) n += p.var.value().size();
        return n;
    }

    std::string config_json() const { return to_json(params_.config).dump(); }

private:
    ModelParams<float> params_;
};

py::dict sample_dict(const GridSample& s) {
    py::dict d;
    d["date"] = s.date.str();
    d["predictors"] = plane_array(s.predictors, s.channels, s.height, s.width);
    d["target"] = plane_array(s.target, 0, s.height, s.width);
    d["mask"] = plane_array(s.mask, 0, s.height, s.width);
    return d;
}

}  // namespace

PYBIND11_MODULE(_flashcast, m) {
    m.doc() = "Lightning-density modelling core: data containers, model forward, loss, metrics and the command pipeline";

    // Translators are tried newest first, so the base class goes first.
    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
    py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<EvaluationError>(m, "EvaluationError", base.ptr());

    m.def("version", [] { return std::string(version()); });

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::vector<const char*> argv{"flashcast"};
            for (const auto& a : args) argv.push_back(a.c_str());
            std::ostringstream out, err;
            const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"), "Run a command line; returns (exit_code, stdout, stderr).");

    m.def("pearson_r", [](const F64& a, const F64& b) { return pearson_r(span_of(a), span_of(b)); });
    m.def("rmse", [](const F64& a, const F64& b) { return rmse(span_of(a), span_of(b)); });

    m.def(
        "predict_density",
        [](const F32& logits, const F32& mags, const std::string& mode, double threshold) {
            return to_array(predict_density(to_tensor(logits, "logits"), to_tensor(mags, "magnitudes"), parse_density_mode(mode), threshold));
        },
        py::arg("logits"), py::arg("magnitudes"), py::arg("mode") = "gated", py::arg("threshold") = 0.5);

    m.def(
        "total_loss",
        [](const F32& logits, const F32& mags, const F32& y, const F32& mask, const std::string& loss_json) {
            LossConfig cfg;
            from_json(parse_json(loss_json), cfg);
            const auto l = Variable<float>::constant(to_tensor(logits, "logits"));
            const auto g = Variable<float>::constant(to_tensor(mags, "magnitudes"));
            NoGradGuard guard;
            return breakdown_dict(total_loss(l, g, to_tensor(y, "y"), to_tensor(mask, "mask"), cfg).breakdown);
        },
        py::arg("logits"), py::arg("magnitudes"), py::arg("y"), py::arg("mask"), py::arg("loss_config") = "");

    m.def(
        "write_synthetic",
        [](const std::filesystem::path& dir, const std::string& config_json) {
            SyntheticConfig cfg;
            from_json(parse_json(config_json), cfg);
            cfg.validate();
            return write_synthetic_dataset(dir, cfg);
        },
        py::arg("dir"), py::arg("config") = "");

    py::class_<Dataset>(m, "Dataset")
        .def(py::init([](const std::filesystem::path& p) { return Dataset::open(p); }), py::arg("path"))
        .def("__len__", &Dataset::size)
        .def("__getitem__",
             [](const Dataset& d, std::size_t i) {
                 if (i >= d.size()) throw py::index_error("day index out of range");
                 return sample_dict(d.sample(i));
             })
        .def_property_readonly("dates",
                               [](const Dataset& d) {
                                   std::vector<std::string> out;
                                   for (const auto& x : d.dates()) out.push_back(x.str());
                                   return out;
                               })
        .def_property_readonly("channels",
                               [](const Dataset& d) {
                                   std::vector<std::string> out;
                                   for (const auto& c : d.channels()) out.push_back(c.name);
                                   return out;
                               })
        .def_property_readonly("shape", [](const Dataset& d) { return py::make_tuple(d.height(), d.width()); })
        .def_property_readonly("grid", [](const Dataset& d) { return to_json(d.grid()).dump(); });

    py::class_<Model>(m, "Model")
        .def(py::init(&Model::create), py::arg("config") = "", py::arg("seed") = 0,
             "Model from a JSON config (unset keys take the tiny configuration).")
        .def_static("load", &Model::load, py::arg("checkpoint"))
        .def("forward", &Model::forward, py::arg("x"), "Evaluation-mode forward; returns (logits, magnitudes).")
        .def("loss", &Model::loss, py::arg("x"), py::arg("y"), py::arg("mask"), py::arg("loss_config") = "")
        .def_property_readonly("parameter_count", &Model::parameter_count)
        .def_property_readonly("config", &Model::config_json);
}
