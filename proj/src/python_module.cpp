#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "voxbox/config.hpp"
#include "voxbox/phantom.hpp"
#include "voxbox/preprocess.hpp"
#include "voxbox/selftest.hpp"
#include "voxbox/trainer.hpp"

namespace py = pybind11;
using namespace voxbox;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Index3 extents_of(const py::buffer_info& info) {
    if (info.ndim != 3) throw ShapeError("expected a (D,H,W) array, got " + std::to_string(info.ndim) + " dimensions");
    return {info.shape[0], info.shape[1], info.shape[2]};
}

template <class T>
py::array_t<T> to_array(const std::vector<T>& v, const Index3& e) {
    py::array_t<T> out({e[0], e[1], e[2]});
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

std::span<const std::uint8_t> mask_span(const MaskArray& a) {
    return {a.data(), static_cast<std::size_t>(a.size())};
}

Geometry geometry_for(const Index3& extents, const Vec3& spacing) {
    Geometry g;
    g.extents = extents;
    g.spacing = spacing;
    g.direction = ras_direction();
    return g;
}

Volume volume_from(const FloatArray& a, const Vec3& spacing) {
    Volume v;
    v.geometry = geometry_for(extents_of(a.request()), spacing);
    v.voxels.assign(a.data(), a.data() + a.size());
    return v;
}

py::dict geometry_dict(const Geometry& g) {
    py::dict d;
    d["spacing"] = g.spacing;
    d["origin"] = g.origin;
    d["direction"] = g.direction;
    return d;
}

// Wraps the model together with the JSON it was built from.
class PyModel {
public:
    explicit PyModel(const std::string& config_json)
        : cfg_(run_config_from_json(nlohmann::json::parse(config_json))), model_(cfg_.model) {}

    static PyModel from_checkpoint(const std::filesystem::path& path) {
        const Checkpoint ckpt = read_checkpoint(path);
        PyModel m(ckpt.config_json);
        m.model_.load_parameters(ckpt);
        return m;
    }

    py::array_t<float> logits(const FloatArray& image, int cubes) const {
        const Volume v = volume_from(image, {1, 1, 1});
        const Tensor x = to_tensor(v, model_.config().dtype);
        const Tensor y = predict_logits(model_, x, partition_for(v.geometry.extents, cubes), v.subject_id);
        const auto values = y.to_vector();
        return to_array(std::vector<float>(values.begin(), values.end()), v.geometry.extents);
    }

    py::array_t<std::uint8_t> predict(const FloatArray& image, int cubes) const {
        return to_array(voxbox::predict(model_, volume_from(image, {1, 1, 1}), cubes).voxels,
                        extents_of(image.request()));
    }

    std::int64_t parameter_count() const { return model_.params().parameter_count(); }
    std::string config_json() const { return to_json(cfg_).dump(); }

private:
    RunConfig cfg_;
    SegmentationModel model_;
};

} // namespace

PYBIND11_MODULE(_voxbox, m) {
    m.doc() = "Volumetric segmentation engine: I/O, metrics, scheduling and inference.";

    auto base = py::register_exception<Error>(m, "VoxboxError", PyExc_RuntimeError);
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    auto io = py::register_exception<IoError>(m, "IoError", base.ptr());
    py::register_exception<ChecksumError>(m, "ChecksumError", io.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<NonFiniteError>(m, "NonFiniteError", base.ptr());

    m.def(
        "read_nifti",
        [](const std::filesystem::path& path) {
            const Volume v = read_nifti(path);
            return py::make_tuple(to_array(v.voxels, v.geometry.extents), geometry_dict(v.geometry));
        },
        py::arg("path"), "Volume as a float32 (D,H,W) array plus its geometry.");
    m.def(
        "write_nifti",
        [](const std::filesystem::path& path, const FloatArray& data, const Vec3& spacing) {
            write_nifti(volume_from(data, spacing), path);
        },
        py::arg("path"), py::arg("data"), py::arg("spacing") = Vec3{1, 1, 1});
    m.def(
        "reorient_ras",
        [](const FloatArray& data) {
            Volume v = volume_from(data, {1, 1, 1});
            const Volume r = reorient_ras(v);
            return to_array(r.voxels, r.geometry.extents);
        },
        py::arg("data"));

    m.def(
        "read_features",
        [](const std::filesystem::path& path) {
            const FeatureFile f = read_feature_file(path);
            py::list levels;
            for (const auto& l : f.levels) {
                py::array_t<float> a({l.extents[0], l.extents[1], l.extents[2], l.extents[3]});
                std::copy(l.payload.begin(), l.payload.end(), a.mutable_data());
                levels.append(a);
            }
            py::dict d;
            d["subject_id"] = f.subject_id;
            d["encoder_tag"] = f.encoder_tag;
            d["levels"] = levels;
            return d;
        },
        py::arg("path"), "Reads a VXF1 feature file; levels are (d_emb, D, Gh, Gw) float32 arrays.");
    m.def(
        "write_features",
        [](const std::filesystem::path& path, const std::string& subject_id, const std::string& encoder_tag,
           const std::vector<py::array_t<float, py::array::c_style | py::array::forcecast>>& levels) {
            FeatureFile f;
            f.subject_id = subject_id;
            f.encoder_tag = encoder_tag;
            for (const auto& a : levels) {
                if (a.ndim() != 4) throw ShapeError("feature levels must be 4-D (d_emb, D, Gh, Gw)");
                FeatureLevel l;
                for (int i = 0; i < 4; ++i) l.extents[i] = a.shape(i);
                l.payload.assign(a.data(), a.data() + a.size());
                f.levels.push_back(std::move(l));
            }
            write_feature_file(f, path);
        },
        py::arg("path"), py::arg("subject_id"), py::arg("encoder_tag"), py::arg("levels"));
    m.def(
        "fnv1a64",
        [](const py::bytes& b) {
            const std::string s = b;
            return fnv1a64({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
        },
        py::arg("data"));

    m.def(
        "dsc", [](const MaskArray& a, const MaskArray& b) { return dsc(mask_span(a), mask_span(b)); }, py::arg("pred"),
        py::arg("truth"));
    m.def(
        "iou", [](const MaskArray& a, const MaskArray& b) { return iou(mask_span(a), mask_span(b)); }, py::arg("pred"),
        py::arg("truth"));
    m.def(
        "vol_error_pct", [](const MaskArray& a, const MaskArray& b) { return vol_error_pct(mask_span(a), mask_span(b)); },
        py::arg("pred"), py::arg("truth"));
    m.def(
        "dice_ce_loss",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logits,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& target, double lambda_dice,
           double lambda_ce) {
            if (logits.size() != target.size()) throw ShapeError("logits and target differ in size");
            const Shape shape{1, 1, static_cast<std::int64_t>(logits.size())};
            const Tensor l = Tensor::from_values(shape, {logits.data(), logits.data() + logits.size()}, DType::f64);
            const Tensor t = Tensor::from_values(shape, {target.data(), target.data() + target.size()}, DType::f64);
            return dice_ce_loss(l, t, LossConfig{lambda_dice, lambda_ce}).item();
        },
        py::arg("logits"), py::arg("target"), py::arg("lambda_dice") = 1.0, py::arg("lambda_ce") = 1.0);

    m.def(
        "partition",
        [](const Index3& volume, const Index3& cube) { return make_partition(volume, cube).offsets; },
        py::arg("volume"), py::arg("cube"), "Sub-cube offsets in depth, height, width order.");
    m.def(
        "lr_at", [](int epoch, double base, int warmup, int epochs) { return lr_at(epoch, {base, warmup, epochs}); },
        py::arg("epoch"), py::arg("base_lr") = 1e-4, py::arg("warmup_epochs") = 5, py::arg("epochs") = 100);
    m.def(
        "cv_split",
        [](const std::vector<std::string>& ids, int fold, int k, std::uint64_t seed) {
            const Split s = cv_split(ids, fold, k, seed);
            return py::make_tuple(s.train, s.val);
        },
        py::arg("ids"), py::arg("fold"), py::arg("k") = 5, py::arg("seed") = 0);
    m.def(
        "sphere_phantom",
        [](const Index3& extents, double radius, double noise, std::uint64_t seed) {
            PhantomSpec spec;
            spec.extents = extents;
            spec.radius = radius;
            spec.noise = noise;
            spec.seed = seed;
            const Subject s = sphere_phantom(spec);
            return py::make_tuple(to_array(s.image.voxels, extents), to_array(s.label.voxels, extents));
        },
        py::arg("extents") = Index3{32, 32, 32}, py::arg("radius") = 9.0, py::arg("noise") = 0.1,
        py::arg("seed") = 0);
    m.def("selftest", [] {
        std::vector<std::tuple<std::string, bool, std::string>> out;
        for (const auto& r : run_selftest()) out.emplace_back(r.name, r.passed, r.detail);
        return out;
    });
    m.def("default_config_json", [] { return to_json(RunConfig{}).dump(2); });

    py::class_<PyModel>(m, "Model")
        .def(py::init<const std::string&>(), py::arg("config_json"))
        .def_static("from_checkpoint", &PyModel::from_checkpoint, py::arg("path"))
        .def("logits", &PyModel::logits, py::arg("image"), py::arg("cubes") = 1)
        .def("predict", &PyModel::predict, py::arg("image"), py::arg("cubes") = 1)
        .def_property_readonly("parameter_count", &PyModel::parameter_count)
        .def_property_readonly("config_json", &PyModel::config_json);
}
