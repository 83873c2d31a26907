// Python bindings for the main operations: numerics kernels, diffusion
// schedules and samplers, temporal MultiDiffusion, mask conditioning, style
// interpolation, the aliasing lab, and checkpoint-backed video models.

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "stvid/applications.hpp"
#include "stvid/cascade.hpp"
#include "stvid/multidiffusion.hpp"
#include "stvid/train.hpp"

#include <json.hpp>

namespace py = pybind11;
using namespace stvid;

namespace {

using NpArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor from_numpy(const NpArray& a) {
    std::vector<int> shape(static_cast<std::size_t>(a.ndim()));
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<std::size_t>(i)] = static_cast<int>(a.shape(i));
    Tensor t(shape);
    std::copy(a.data(), a.data() + a.size(), t.data.begin());
    return t;
}

py::array_t<double> to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
    py::array_t<double> a(shape);
    std::copy(t.data.begin(), t.data.end(), a.mutable_data());
    return a;
}

Denoiser wrap_denoiser(const py::function& f) {
    return [f](const Tensor& x, int t) { return from_numpy(f(to_numpy(x), t).cast<NpArray>()); };
}

MotionSpec make_motion(const std::string& kind, const std::string& axis, double amplitude, double frequency,
                       double phase, double object_size) {
    MotionSpec spec;
    if (kind == "sinusoid")
        spec.kind = MotionKind::sinusoid;
    else if (kind == "bounce")
        spec.kind = MotionKind::bounce;
    else if (kind == "linear")
        spec.kind = MotionKind::linear;
    else
        throw ConfigError("unknown motion kind: " + kind);
    if (axis == "h" || axis == "horizontal")
        spec.axis = MotionAxis::horizontal;
    else if (axis == "v" || axis == "vertical")
        spec.axis = MotionAxis::vertical;
    else
        throw ConfigError("unknown motion axis: " + axis);
    spec.amplitude = amplitude;
    spec.frequency = frequency;
    spec.phase = phase;
    spec.object_size = object_size;
    return spec;
}

SamplerMode mode_from(const std::string& name) {
    if (name == "ddim") return SamplerMode::ddim;
    if (name == "ddpm") return SamplerMode::ddpm;
    throw ConfigError("unknown sampler mode: " + name);
}

// checkpoint-backed video model together with its training schedule
struct VideoModel {
    STUNetModel model;
    NoiseSchedule schedule;
};

NamedTensors dict_to_named(const py::dict& d) {
    NamedTensors out;
    for (auto item : d) out[item.first.cast<std::string>()] = from_numpy(item.second.cast<NpArray>());
    return out;
}

py::dict named_to_dict(const NamedTensors& m) {
    py::dict d;
    for (const auto& [name, t] : m) d[py::str(name)] = to_numpy(t);
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "space-time video diffusion: core operations";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    // ---- numerics ----
    m.def(
        "conv2d",
        [](const NpArray& x, const NpArray& k, int ph, int pw) {
            return to_numpy(conv2d_fw(from_numpy(x), from_numpy(k), ph, pw));
        },
        py::arg("x"), py::arg("k"), py::arg("pad_h") = 1, py::arg("pad_w") = 1,
        "cross-correlation of [N,C,H,W] with [O,C,kh,kw], zero padding");
    m.def(
        "conv1d_time",
        [](const NpArray& x, const NpArray& k, int pad) {
            return to_numpy(conv1d_time_fw(from_numpy(x), from_numpy(k), pad));
        },
        py::arg("x"), py::arg("k"), py::arg("pad") = 1, "temporal convolution of [T,C,H,W] with [O,C,kt]");
    m.def(
        "attention",
        [](const NpArray& q, const NpArray& k, const NpArray& v) {
            return to_numpy(
                attention(constant(from_numpy(q)), constant(from_numpy(k)), constant(from_numpy(v)))->value);
        },
        "softmax(q k^T / sqrt(D)) v over [L,D] inputs");
    m.def(
        "resize_nearest",
        [](const NpArray& x, int axis, const std::string& dir) {
            return to_numpy(resize_nearest_fw(from_numpy(x), axis, dir == "up" ? Resize::up : Resize::down));
        },
        py::arg("x"), py::arg("axis"), py::arg("dir"));

    // ---- diffusion ----
    py::class_<NoiseSchedule>(m, "NoiseSchedule")
        .def_readonly("steps", &NoiseSchedule::steps)
        .def_readonly("beta", &NoiseSchedule::beta)
        .def_readonly("alpha", &NoiseSchedule::alpha)
        .def_readonly("alpha_bar", &NoiseSchedule::alpha_bar);
    m.def(
        "make_schedule",
        [](const std::string& kind, int steps) { return make_schedule(schedule_kind_from(kind), steps); },
        py::arg("kind") = "linear", py::arg("steps") = 1000);
    m.def("q_sample", [](const NpArray& x0, int t, const NpArray& eps, const NoiseSchedule& sch) {
        return to_numpy(q_sample(from_numpy(x0), t, from_numpy(eps), sch));
    });
    m.def(
        "sample_loop",
        [](const py::function& eps_fn, const NoiseSchedule& sch, const std::string& mode, int n_steps,
           const std::vector<int>& shape, std::uint64_t seed) {
            return to_numpy(sample_loop(wrap_denoiser(eps_fn), sch, mode_from(mode), n_steps, shape, seed));
        },
        py::arg("eps_fn"), py::arg("schedule"), py::arg("mode") = "ddim", py::arg("n_steps") = 50,
        py::arg("shape"), py::arg("seed") = 0, "reverse diffusion driven by a python denoiser (x, t) -> eps_hat");

    // ---- multidiffusion ----
    py::class_<WindowPlan>(m, "WindowPlan")
        .def_readonly("total_frames", &WindowPlan::total_frames)
        .def_readonly("segment_frames", &WindowPlan::segment_frames)
        .def_readonly("stride", &WindowPlan::stride)
        .def_readonly("starts", &WindowPlan::starts)
        .def("coverage_counts", &WindowPlan::coverage_counts)
        .def("count", &WindowPlan::count);
    m.def("plan_windows", &plan_windows, py::arg("T"), py::arg("T_prime"), py::arg("stride"));
    m.def(
        "aggregate",
        [](const WindowPlan& plan, const std::vector<NpArray>& preds) {
            std::vector<Tensor> ts;
            ts.reserve(preds.size());
            for (const auto& p : preds) ts.push_back(from_numpy(p));
            return to_numpy(aggregate(plan, ts));
        },
        "least-squares reconciliation of per-segment predictions");
    m.def(
        "multidiffusion_sample_loop",
        [](const py::function& eps_fn, const WindowPlan& plan, const NoiseSchedule& sch, const std::string& mode,
           int n_steps, const std::vector<int>& shape, std::uint64_t seed) {
            SegmentDenoiser f = [&eps_fn](const Tensor& x, int seg, int start, int t) {
                return from_numpy(eps_fn(to_numpy(x), seg, start, t).cast<NpArray>());
            };
            return to_numpy(multidiffusion_sample_loop(f, plan, sch, mode_from(mode), n_steps, shape, seed));
        },
        py::arg("eps_fn"), py::arg("plan"), py::arg("schedule"), py::arg("mode") = "ddim",
        py::arg("n_steps") = 50, py::arg("shape"), py::arg("seed") = 0);

    // ---- conditioning and style ----
    m.def("cond_image_to_video", [](const NpArray& frame, int T) {
        ConditioningPair p = cond_image_to_video(from_numpy(frame), T);
        return py::make_tuple(to_numpy(p.C), to_numpy(p.M));
    });
    m.def("cond_inpaint", [](const NpArray& video, const NpArray& region) {
        ConditioningPair p = cond_inpaint(from_numpy(video), from_numpy(region));
        return py::make_tuple(to_numpy(p.C), to_numpy(p.M));
    });
    m.def("cond_cinemagraph", [](const NpArray& image, const NpArray& region, int T) {
        ConditioningPair p = cond_cinemagraph(from_numpy(image), from_numpy(region), T);
        return py::make_tuple(to_numpy(p.C), to_numpy(p.M));
    });
    m.def("interpolate_style", [](const py::dict& orig, const py::dict& style, double alpha) {
        return named_to_dict(interpolate_style(dict_to_named(orig), dict_to_named(style), alpha));
    });

    // ---- aliasing lab ----
    py::class_<MotionSpec>(m, "MotionSpec")
        .def_readonly("amplitude", &MotionSpec::amplitude)
        .def_readonly("frequency", &MotionSpec::frequency)
        .def_readonly("phase", &MotionSpec::phase)
        .def_readonly("object_size", &MotionSpec::object_size);
    m.def("motion_spec", &make_motion, py::arg("kind") = "sinusoid", py::arg("axis") = "h",
          py::arg("amplitude") = 8.0, py::arg("frequency") = 0.1, py::arg("phase") = 0.0,
          py::arg("object_size") = 5.0);
    m.def(
        "render_video",
        [](const MotionSpec& spec, int T, int H, int W) { return to_numpy(render_video(spec, T, H, W)); },
        py::arg("spec"), py::arg("T"), py::arg("H"), py::arg("W"));
    m.def("xt_slice", [](const NpArray& video, int row) { return to_numpy(xt_slice(from_numpy(video), row)); });
    m.def("alias_ambiguity", &alias_ambiguity, py::arg("spec"), py::arg("stride"));
    m.def(
        "simulate_cascade",
        [](const NpArray& video, const MotionSpec& spec, int stride, int window, std::uint64_t seed) {
            CascadeResult res = simulate_cascade(from_numpy(video), spec, CascadeSpec{stride, window}, seed);
            py::dict out;
            out["video"] = to_numpy(res.video);
            out["window_starts"] = res.window_starts;
            std::vector<double> freqs, phases;
            for (const MotionSpec& h : res.window_hypothesis) {
                freqs.push_back(h.frequency);
                phases.push_back(h.phase);
            }
            out["window_frequency"] = freqs;
            out["window_phase"] = phases;
            return out;
        },
        py::arg("video"), py::arg("spec"), py::arg("stride"), py::arg("window") = 2, py::arg("seed") = 0);
    m.def("consistency_metric", [](const NpArray& video) { return consistency_metric(from_numpy(video)); });

    // ---- files and models ----
    m.def("read_vidfile", [](const std::filesystem::path& p) { return to_numpy(read_vidfile(p)); });
    m.def("write_vidfile",
          [](const std::filesystem::path& p, const NpArray& v) { write_vidfile(p, from_numpy(v)); });

    py::class_<VideoModel>(m, "VideoModel")
        .def(py::init([](const std::filesystem::path& path) {
                 Checkpoint ck = read_checkpoint(path);
                 if (ck.kind != "stunet" && ck.kind != "ssr")
                     throw ConfigError("VideoModel expects a stunet/ssr checkpoint, got '" + ck.kind + "'");
                 VideoModel vm{stunet_from_checkpoint(ck), NoiseSchedule{}};
                 nlohmann::json cfg = nlohmann::json::parse(ck.config_json);
                 if (cfg.contains("schedule"))
                     vm.schedule = make_schedule(schedule_kind_from(cfg["schedule"]["kind"].get<std::string>()),
                                                 cfg["schedule"]["steps"].get<int>());
                 else
                     vm.schedule = make_schedule(ScheduleKind::linear, 1000);
                 return vm;
             }),
             py::arg("checkpoint"))
        .def(
            "forward",
            [](const VideoModel& vm, const NpArray& x, int t, int label) {
                return to_numpy(forward_stunet(vm.model, from_numpy(x), t, label));
            },
            py::arg("x"), py::arg("t"), py::arg("label") = 0)
        .def(
            "sample",
            [](const VideoModel& vm, int frames, int size, int n_steps, const std::string& mode,
               std::uint64_t seed, int label) {
                SampleOpts opts;
                opts.mode = mode_from(mode);
                opts.n_steps = n_steps;
                opts.seed = seed;
                opts.frames = frames;
                opts.height = size;
                opts.width = size;
                opts.label = label;
                return to_numpy(sample_video(vm.model, vm.schedule, opts));
            },
            py::arg("frames") = 16, py::arg("size") = 16, py::arg("n_steps") = 50, py::arg("mode") = "ddim",
            py::arg("seed") = 0, py::arg("label") = 0);
}
