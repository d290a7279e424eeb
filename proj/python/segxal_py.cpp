#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "segxal/dataset.hpp"
#include "segxal/eem.hpp"
#include "segxal/entropy.hpp"
#include "segxal/geometry.hpp"
#include "segxal/orchestrator.hpp"
#include "segxal/proximity.hpp"
#include "segxal/selection.hpp"

namespace py = pybind11;
using namespace segxal;

namespace {

using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

// JSON crosses the boundary as text; the payloads are small.
py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_py(const py::object& o) {
    if (o.is_none()) return nlohmann::json::object();
    return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

void need_dims(const py::array& a, int n, const char* what) {
    if (a.ndim() != n) throw Error(Errc::shape_mismatch, std::string(what) + " must have " + std::to_string(n) + " dims");
}

F64 plane_array(const std::vector<double>& v, int h, int w) {
    F64 out({h, w});
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

HeatMap heat_from(const F64& a, HeatKind kind) {
    need_dims(a, 2, "heat map");
    HeatMap m(kind, static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), m.values.begin());
    return m;
}

Image image_from(const F64& a) {
    need_dims(a, 3, "image");
    if (a.shape(2) != 3) throw Error(Errc::shape_mismatch, "image must be H x W x 3");
    Image im("py", static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), im.pixels.begin());
    return im;
}

F64 image_array(const Image& im) {
    F64 out({im.height, im.width, 3});
    std::copy(im.pixels.begin(), im.pixels.end(), out.mutable_data());
    return out;
}

LabelMask mask_from(const U8& a, int num_classes) {
    need_dims(a, 2, "label mask");
    LabelMask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), num_classes);
    std::copy(a.data(), a.data() + a.size(), m.labels.begin());
    return m;
}

U8 mask_array(const LabelMask& m) {
    U8 out({m.height, m.width});
    std::copy(m.labels.begin(), m.labels.end(), out.mutable_data());
    return out;
}

ProbMap probs_from(const F64& a) {
    need_dims(a, 3, "probability map");
    ProbMap p(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
    std::copy(a.data(), a.data() + a.size(), p.probs.begin());
    return p;
}

F64 probs_array(const ProbMap& p) {
    F64 out({p.num_classes, p.height, p.width});
    std::copy(p.probs.begin(), p.probs.end(), out.mutable_data());
    return out;
}

DepthMap depth_from(const F64& a) {
    need_dims(a, 2, "nearness");
    DepthMap d(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
    std::copy(a.data(), a.data() + a.size(), d.nearness.begin());
    return d;
}

py::dict scene_dict(const SyntheticScene& sc) {
    const Sample& s = sc.sample;
    py::list objects;
    for (const auto& o : sc.objects)
        objects.append(py::dict(py::arg("cls") = o.cls, py::arg("top") = o.top, py::arg("left") = o.left,
                                py::arg("bottom") = o.bottom, py::arg("right") = o.right,
                                py::arg("nearness") = o.nearness, py::arg("visible_pixels") = o.visible_pixels));
    return py::dict(py::arg("id") = s.id(), py::arg("image") = image_array(s.image), py::arg("gt") = mask_array(*s.gt),
                    py::arg("nearness") = plane_array(s.depth->nearness, s.depth->height, s.depth->width),
                    py::arg("horizon_row") = sc.horizon_row, py::arg("objects") = objects);
}

SegModel make_model(const py::object& config) {
    const nlohmann::json j = from_py(config);
    const int classes = j.value("num_classes", 5);
    return SegModel(model_config_from_json(j, ModelConfig::desk_preset(classes)));
}

}  // namespace

PYBIND11_MODULE(_segxal, m) {
    m.doc() = "Explainable active learning for semantic segmentation.";

    py::register_exception<Error>(m, "SegxalError");

    m.def(
        "entropy_map",
        [](const F64& probs) {
            const EntropyResult r = entropy_map(probs_from(probs));
            const int h = static_cast<int>(probs.shape(1)), w = static_cast<int>(probs.shape(2));
            return py::make_tuple(plane_array(r.stats.raw_bits, h, w), plane_array(r.map.values, h, w));
        },
        py::arg("probs"), "Per-pixel entropy of a C x H x W distribution: (bits, bits / log2 C).");

    m.def(
        "fuse",
        [](const F64& prox, const F64& ent, double alpha, double beta) {
            const EEMask e = fuse(heat_from(prox, HeatKind::prox_gradcam), heat_from(ent, HeatKind::entropy), alpha, beta);
            return plane_array(e.map.values, e.map.height, e.map.width);
        },
        py::arg("prox"), py::arg("ent"), py::arg("alpha") = 0.5, py::arg("beta") = 0.5);

    m.def(
        "extract_candidates",
        [](const F64& eem, const std::string& sample_id, double percentile, int max_regions, int min_region_px) {
            EEMask e;
            e.map = heat_from(eem, HeatKind::eem);
            CandidateOptions opt{percentile, max_regions, min_region_px};
            py::list out;
            for (const auto& p : extract_candidates(e, sample_id, opt)) out.append(to_py(to_json(p)));
            return out;
        },
        py::arg("eem"), py::arg("sample_id") = "sample", py::arg("percentile") = 80.0, py::arg("max_regions") = 5,
        py::arg("min_region_px") = 16);

    m.def(
        "dice", [](const U8& a, const U8& b) { return dice(mask_from(a, 255), mask_from(b, 255)); }, py::arg("a"),
        py::arg("b"), "Macro DICE over the classes present in either mask; 255 is ignored.");

    m.def(
        "proximity_mask",
        [](const F64& nearness, double tau_quantile, bool hard) {
            const ProximityMask pm = proximity_mask(depth_from(nearness), tau_quantile, hard);
            return plane_array(pm.soft.values, pm.soft.height, pm.soft.width);
        },
        py::arg("nearness"), py::arg("tau_quantile") = 0.5, py::arg("hard") = false);

    m.def(
        "rasterize_polygon",
        [](const std::vector<std::pair<double, double>>& vertices, int height, int width) {
            std::vector<Vertex> poly;
            for (const auto& [r, c] : vertices) poly.push_back({r, c});
            const std::string problem = polygon_problem(poly, height, width);
            if (!problem.empty()) throw Error(Errc::invalid_geometry, problem);
            py::array_t<bool> out({height, width});
            const auto mask = rasterize_polygon(poly, height, width);
            std::copy(mask.begin(), mask.end(), out.mutable_data());
            return out;
        },
        py::arg("vertices"), py::arg("height"), py::arg("width"), "Pixels whose centres lie inside (row, col) vertices.");

    m.def(
        "generate_scene",
        [](std::uint64_t seed, int height, int width, int num_classes, int num_objects) {
            SceneSpec s;
            s.seed = seed;
            s.height = height;
            s.width = width;
            s.num_classes = num_classes;
            s.num_objects = num_objects;
            return scene_dict(generate_scene(s));
        },
        py::arg("seed"), py::arg("height") = 64, py::arg("width") = 128, py::arg("num_classes") = 5,
        py::arg("num_objects") = 3);

    py::class_<SegModel>(m, "SegModel")
        .def(py::init(&make_model), py::arg("config") = py::none(),
             "Desk-preset U-Net; keys of `config` override the preset.")
        .def_property_readonly("config", [](const SegModel& s) { return to_py(to_json(s.config())); })
        .def_property_readonly("layers", &SegModel::layer_names)
        .def(
            "train",
            [](SegModel& s, const std::vector<F64>& images, const std::vector<U8>& labels, int epochs) {
                if (images.size() != labels.size()) throw Error(Errc::shape_mismatch, "images and labels differ in count");
                std::vector<Image> im;
                std::vector<LabelMask> lb;
                for (std::size_t i = 0; i < images.size(); ++i) {
                    im.push_back(image_from(images[i]));
                    lb.push_back(mask_from(labels[i], s.config().num_classes));
                }
                std::vector<const Image*> ip;
                std::vector<const LabelMask*> lp;
                for (std::size_t i = 0; i < im.size(); ++i) ip.push_back(&im[i]), lp.push_back(&lb[i]);
                py::gil_scoped_release nogil;
                return s.train(ip, lp, epochs).epoch_losses;
            },
            py::arg("images"), py::arg("labels"), py::arg("epochs") = 1, "Returns the mean loss of each epoch.")
        .def(
            "predict_probs", [](const SegModel& s, const F64& image) { return probs_array(s.predict_probs(image_from(image))); },
            py::arg("image"))
        .def(
            "gradcam",
            [](const SegModel& s, const F64& image, int cls) {
                const GradCamResult r = gradcam(s, image_from(image), cls);
                return plane_array(r.map.values, r.map.height, r.map.width);
            },
            py::arg("image"), py::arg("cls"))
        .def(
            "prox_gradcam",
            [](const SegModel& s, const F64& image, const F64& nearness, double tau_quantile) {
                ProxGradCamOptions opt;
                opt.tau_quantile = tau_quantile;
                const ProximityMask pm = proximity_mask(depth_from(nearness), tau_quantile, opt.hard_mask);
                const ProxGradCamResult r = prox_gradcam(s, image_from(image), pm, opt);
                return plane_array(r.map.values, r.map.height, r.map.width);
            },
            py::arg("image"), py::arg("nearness"), py::arg("tau_quantile") = 0.5)
        .def("save", &SegModel::save, py::arg("path"))
        .def_static("load", &SegModel::load, py::arg("path"));

    m.def(
        "run",
        [](const py::object& config, const std::string& run_dir) {
            const RunConfig cfg = run_config_from_json(from_py(config));
            auto [train, val] = load_run_data(cfg);
            nlohmann::json state;
            {
                py::gil_scoped_release nogil;
                Orchestrator o(cfg, std::move(train), std::move(val), run_dir);
                o.run();
                state = to_json(o.state());
            }
            return to_py(state);
        },
        py::arg("config") = py::none(), py::arg("run_dir") = "",
        "Runs an AL experiment to completion and returns the final state (pools and per-cycle metrics).");

    m.attr("IGNORE_LABEL") = static_cast<int>(kIgnoreLabel);
}
