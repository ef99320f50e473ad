#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "seslr/config.hpp"
#include "seslr/continual.hpp"
#include "seslr/lif.hpp"
#include "seslr/metrics.hpp"
#include "seslr/replay_buffer.hpp"

namespace py = pybind11;
using namespace seslr;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    Shape shape(arr.ndim());
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape[static_cast<size_t>(i)] = static_cast<size_t>(arr.shape(i));
    std::vector<double> data(arr.data(), arr.data() + arr.size());
    return Tensor(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> arr(shape);
    std::copy(t.vec().begin(), t.vec().end(), arr.mutable_data());
    return arr;
}

SpikeTensor spikes_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    return SpikeTensor::from_tensor(tensor_from_array(arr));
}

}  // namespace

PYBIND11_MODULE(_seslr, m) {
    m.doc() = "spiking continual learning with bit-packed latent replay";

    py::class_<LIFConfig>(m, "LIFConfig")
        .def(py::init<>())
        .def_readwrite("tau", &LIFConfig::tau)
        .def_readwrite("dt", &LIFConfig::dt)
        .def_readwrite("v_th", &LIFConfig::v_th)
        .def_readwrite("v_rest", &LIFConfig::v_rest)
        .def_readwrite("surrogate_alpha", &LIFConfig::surrogate_alpha)
        .def("leak", &LIFConfig::leak);

    m.def(
        "lif_step",
        [](py::array_t<double> u, py::array_t<double> o_prev, py::array_t<double> input, const LIFConfig& cfg) {
            LIFState st;
            st.u = tensor_from_array(u);
            st.o_prev = spikes_from_array(o_prev);
            auto r = lif_step(st, tensor_from_array(input), cfg);
            return py::make_tuple(array_from_tensor(r.spikes.values()), array_from_tensor(r.next.u));
        },
        py::arg("u"), py::arg("o_prev"), py::arg("input"), py::arg("cfg"),
        "one membrane update; returns (spikes, next_potentials)");

    m.def("surrogate_spike_grad", &surrogate_spike_grad, py::arg("u"), py::arg("cfg"));
    m.def("soft_spike", &soft_spike, py::arg("u"), py::arg("cfg"));

    py::class_<BitPackedSample>(m, "BitPackedSample")
        .def_property_readonly("bits",
                               [](const BitPackedSample& s) {
                                   return py::bytes(reinterpret_cast<const char*>(s.bits.data()),
                                                    s.bits.size());
                               })
        .def_readonly("bit_count", &BitPackedSample::bit_count)
        .def_readonly("label", &BitPackedSample::label)
        .def_property_readonly("shape", [](const BitPackedSample& s) { return s.shape; })
        .def_property_readonly("payload_bytes", &BitPackedSample::payload_bytes);

    m.def(
        "pack_bits", [](py::array_t<double> z, int label) { return pack_bits(spikes_from_array(z), label); },
        py::arg("z"), py::arg("label") = 0);
    m.def(
        "unpack_bits", [](const BitPackedSample& s) { return array_from_tensor(unpack_to_tensor(s)); },
        py::arg("sample"));

    py::class_<ReplayBuffer>(m, "ReplayBuffer")
        .def(py::init<size_t, uint64_t>(), py::arg("capacity"), py::arg("seed"))
        .def(
            "offer",
            [](ReplayBuffer& buf, py::array_t<double> z, int label) {
                return buf.offer(spikes_from_array(z), label);
            },
            py::arg("latent"), py::arg("label"))
        .def(
            "sample",
            [](const ReplayBuffer& buf, size_t n, uint64_t seed) {
                Rng rng(seed);
                auto batch = buf.sample_batch(n, rng);
                return py::make_tuple(array_from_tensor(batch.latents), batch.labels);
            },
            py::arg("n"), py::arg("seed"), "draw n entries; returns (latents (T,n,D), labels)")
        .def_property_readonly("size", &ReplayBuffer::size)
        .def_property_readonly("seen", &ReplayBuffer::seen)
        .def_property_readonly("capacity", &ReplayBuffer::capacity)
        .def_property_readonly("payload_bytes", &ReplayBuffer::payload_bytes)
        .def_property_readonly("header_bytes", &ReplayBuffer::header_bytes)
        .def("save", [](const ReplayBuffer& buf, const std::string& path) { buf.save(path); }, py::arg("path"))
        .def_static(
            "load", [](const std::string& path, uint64_t seed) { return ReplayBuffer::load(path, seed); },
            py::arg("path"), py::arg("seed"));

    m.def("compression_ratio", &compression_ratio, py::arg("buffer"), py::arg("reference_precision_bits") = 32);

    m.def(
        "make_synthetic",
        [](int classes, size_t per_class, size_t height, size_t width, uint64_t seed, double noise,
           double blob_jitter, long max_shift) {
            SyntheticOptions opts;
            opts.noise_sigma = noise;
            opts.blob_jitter = blob_jitter;
            opts.max_shift = max_shift;
            LabeledDataset ds = make_synthetic(classes, per_class, {1, height, width}, seed, opts);
            py::array_t<double> images({ds.size(), size_t{1}, height, width});
            double* dst = images.mutable_data();
            for (const Tensor& s : ds.samples) {
                std::copy(s.vec().begin(), s.vec().end(), dst);
                dst += s.size();
            }
            return py::make_tuple(images, ds.labels);
        },
        py::arg("classes"), py::arg("per_class"), py::arg("height"), py::arg("width"), py::arg("seed"),
        py::arg("noise") = 0.08, py::arg("blob_jitter") = 1.0, py::arg("max_shift") = 2);

    m.def(
        "integrate_events",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> events, size_t segments, int height,
           int width) {
            if (events.ndim() != 2 || events.shape(1) != 4)
                throw std::invalid_argument("integrate_events: expected an (n, 4) array of t,x,y,p rows");
            EventList ev;
            ev.height = height;
            ev.width = width;
            for (py::ssize_t i = 0; i < events.shape(0); ++i) {
                const double* row = events.data() + i * 4;
                ev.events.push_back({row[0], static_cast<int>(row[1]), static_cast<int>(row[2]),
                                     static_cast<int>(row[3])});
            }
            return array_from_tensor(integrate_events(ev, segments, height, width));
        },
        py::arg("events"), py::arg("segments"), py::arg("height"), py::arg("width"));

    m.def(
        "memory_report",
        [](size_t samples, const Shape& input_shape, const Shape& latent_shape, unsigned precision_bits) {
            py::list rows;
            for (const auto& r : memory_report(samples, input_shape, latent_shape, precision_bits)) {
                py::dict d;
                d["name"] = r.name;
                d["total_bytes"] = r.total_bytes;
                d["compression_factor"] = r.compression_factor;
                rows.append(d);
            }
            return rows;
        },
        py::arg("samples"), py::arg("input_shape"), py::arg("latent_shape"), py::arg("precision_bits") = 32);

    // json-string interface; the python package wraps these with dicts
    m.def(
        "run_experiment_json",
        [](const std::string& config_json) {
            std::string out;
            {
                py::gil_scoped_release release;
                ExperimentConfig cfg = parse_config_json(config_json, "<python>");
                ExperimentSetup setup = build_setup(cfg);
                ExperimentData data = prepare_data(cfg);
                RunResult rr = run_experiment(setup, cfg.strategy.kind, data);
                rr.report.config_echo = cfg.echo_json();
                out = report_json_string(rr.report);
            }
            return out;
        },
        py::arg("config_json"), "run one experiment from a config json document; returns the report json");

    m.def(
        "noise_sweep_json",
        [](const std::string& config_json, const std::vector<double>& sigmas) {
            std::vector<std::pair<double, double>> rows;
            {
                py::gil_scoped_release release;
                ExperimentConfig cfg = parse_config_json(config_json, "<python>");
                ExperimentSetup setup = build_setup(cfg);
                ExperimentData data = prepare_data(cfg);
                rows = noise_sweep(setup, data, sigmas);
            }
            return rows;
        },
        py::arg("config_json"), py::arg("sigmas"), "FAA per noise scale with shared pretraining");
}
