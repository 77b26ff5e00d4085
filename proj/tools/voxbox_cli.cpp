#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "voxbox/config.hpp"
#include "voxbox/dataset.hpp"
#include "voxbox/io.hpp"
#include "voxbox/phantom.hpp"
#include "voxbox/selftest.hpp"

#ifndef VOXBOX_VERSION
#define VOXBOX_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace voxbox;

namespace {

// Exit codes: 1 usage / input errors, 2 failed selftest, 3 aborted step.
constexpr int exit_error = 1;
constexpr int exit_selftest_failed = 2;
constexpr int exit_aborted_step = 3;

std::string iso_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm utc{};
    gmtime_r(&t, &utc);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &utc);
    return buf;
}

/// config file < VOXBOX_SEED < --seed
std::uint64_t resolve_seed(std::uint64_t from_config, const std::optional<std::uint64_t>& flag) {
    if (flag) return *flag;
    if (const char* env = std::getenv("VOXBOX_SEED"); env && *env) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw ConfigError(std::string("VOXBOX_SEED is not an unsigned integer: '") + env + "'");
        }
    }
    return from_config;
}

void write_json(const json& j, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

struct Manifest {
    json doc;

    Manifest(std::string command, const fs::path& out_dir, const std::string& config_path) {
        doc = {{"command", std::move(command)},
               {"config_path", config_path},
               {"code_version", VOXBOX_VERSION},
               {"started_at", iso_now()},
               {"output_dir", fs::absolute(out_dir).string()}};
    }
    void finish(const fs::path& path) {
        doc["finished_at"] = iso_now();
        write_json(doc, path);
    }
};

json nullable(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string configuration_name(const RunConfig& cfg) {
    std::ostringstream os;
    os << "cubes=" << cfg.train.cubes << " depth_embedding=" << (cfg.model.depth_embedding ? "on" : "off")
       << " multi_scale=" << (cfg.model.decoder.multi_scale ? "on" : "off");
    return os.str();
}

// ------------------------------------------------------------- preprocess

struct PreprocessArgs {
    std::string data, out, config;
    std::optional<std::uint64_t> seed;
};

int run_preprocess(const PreprocessArgs& a) {
    RunConfig cfg = a.config.empty() ? RunConfig{} : load_run_config(a.config);
    cfg.preprocess.seed = resolve_seed(cfg.preprocess.seed, a.seed);
    const DatasetLayout in{a.data}, out{a.out};
    const auto ids = in.subject_ids();
    if (ids.empty()) throw IoError("no images found under " + in.images_dir().string());

    std::vector<Geometry> geometries;
    for (const auto& id : ids) geometries.push_back(read_nifti(in.image_path(id)).geometry);
    const Vec3 target = cfg.preprocess.target_spacing.value_or(median_inplane_spacing(geometries));

    fs::create_directories(out.images_dir());
    fs::create_directories(out.labels_dir());
    Manifest manifest("preprocess", a.out, a.config);
    json rows = json::array();
    for (const auto& id : ids) {
        const Subject s = in.load(id);
        const PreprocessedSubject p = preprocess_subject(s.image, s.label, cfg.preprocess, target);
        write_nifti(p.image, out.images_dir() / (id + ".nii.gz"));
        write_nifti(p.label, out.labels_dir() / (id + ".nii.gz"));
        const bool empty = p.crop_status == CropStatus::empty_foreground;
        if (empty) std::cerr << "warning: " << id << ": no foreground above threshold, cropped at the volume centre\n";
        rows.push_back({{"subject", id}, {"extents", p.image.geometry.extents}, {"empty_foreground", empty}});
        std::cerr << "preprocessed " << id << '\n';
    }
    write_json({{"target_spacing", target}, {"subjects", rows}}, out.root / "preprocess.json");
    manifest.doc["seed"] = cfg.preprocess.seed;
    manifest.doc["resolved_config"] = to_json(cfg);
    manifest.finish(out.root / "manifest.json");
    return 0;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
    std::string config, data, out;
    std::optional<int> cubes, epochs, fold;
    std::optional<std::int64_t> max_steps;
    std::optional<double> lr;
    std::optional<std::uint64_t> seed;
    std::string dtype;
    bool no_depth_embedding = false;
    bool single_scale = false;
    bool no_augment = false;
};

int run_train(const TrainArgs& a) {
    RunConfig cfg = a.config.empty() ? RunConfig{} : load_run_config(a.config);
    if (a.cubes) cfg.train.cubes = *a.cubes;
    if (a.epochs) cfg.train.epochs = *a.epochs;
    if (a.fold) cfg.train.fold = *a.fold;
    if (a.max_steps) cfg.train.max_steps = *a.max_steps;
    if (a.lr) cfg.train.optim.lr = *a.lr;
    if (a.no_depth_embedding) cfg.model.depth_embedding = false;
    if (a.single_scale) cfg.model.decoder.multi_scale = false;
    if (a.no_augment) cfg.train.augment = false;
    if (a.dtype == "f32") cfg.model.dtype = DType::f32;
    if (a.dtype == "f64") cfg.model.dtype = DType::f64;
    const std::uint64_t seed = resolve_seed(cfg.train.seed, a.seed);
    cfg.train.seed = cfg.model.seed = cfg.preprocess.seed = seed;
    if (cfg.train.warmup_epochs >= cfg.train.epochs) {
        std::cerr << "note: warmup shortened to " << cfg.train.epochs - 1 << " epochs to fit " << cfg.train.epochs << '\n';
        cfg.train.warmup_epochs = cfg.train.epochs - 1;
    }
    cfg.validate();

    const DatasetLayout data{a.data};
    const Split split = cv_split(data.subject_ids(), cfg.train.fold, cfg.train.folds, seed);
    const auto train_set = data.load(split.train);
    const auto val_set = data.load(split.val);

    const fs::path out(a.out);
    fs::create_directories(out);
    save_run_config(cfg, out / "resolved_config.json");
    Manifest manifest("train", out, a.config);
    manifest.doc["seed"] = seed;
    manifest.doc["resolved_config"] = to_json(cfg);
    manifest.doc["split"] = {{"train", split.train}, {"val", split.val}};

    SegmentationModel model(cfg.model);
    std::cerr << "trainable parameters: " << model.params().parameter_count() << '\n';
    manifest.doc["parameter_count"] = model.params().parameter_count();

    std::ofstream log(out / "train_log.jsonl");
    const std::string config_json = to_json(cfg).dump();
    TrainOutcome outcome;
    try {
        outcome = train(model, train_set, val_set, cfg.train, cfg.preprocess, config_json, [&](const EpochLog& e) {
            const json row{{"epoch", e.epoch},        {"lr", e.lr},           {"train_loss", e.train_loss},
                           {"val_dsc", e.val_dsc},    {"val_iou", e.val_iou}, {"val_vol_error_pct", nullable(e.val_vol_error_pct)},
                           {"steps", e.steps},        {"seconds", e.seconds}};
            log << row.dump() << '\n' << std::flush;
            std::cerr << "epoch " << e.epoch << " loss " << e.train_loss << " val dsc " << e.val_dsc << '\n';
        });
    } catch (const NonFiniteError& e) {
        manifest.doc["aborted"] = e.what();
        manifest.finish(out / "manifest.json");
        std::cerr << "error: " << e.what() << '\n';
        return exit_aborted_step;
    }

    write_checkpoint(model.to_checkpoint(config_json), out / "last.vxck");
    write_checkpoint(outcome.best, out / "best.vxck");
    model.load_parameters(outcome.best);
    const EvalReport report = evaluate(model, val_set.empty() ? train_set : val_set, cfg.train.cubes,
                                       configuration_name(cfg));
    write_report(report, out / "report.json");

    manifest.doc["best_epoch"] = outcome.best_epoch;
    manifest.doc["best_val_dsc"] = outcome.best_dsc;
    manifest.doc["stopped_early"] = outcome.stopped_early;
    manifest.finish(out / "manifest.json");
    std::cerr << "best epoch " << outcome.best_epoch << " val dsc " << outcome.best_dsc << '\n';
    return 0;
}

// ------------------------------------------------------------------- eval

struct Loaded {
    RunConfig run;
    std::unique_ptr<SegmentationModel> model;
};

Loaded load_model(const std::string& checkpoint) {
    const Checkpoint ckpt = read_checkpoint(checkpoint);
    Loaded l;
    l.run = run_config_from_json(json::parse(ckpt.config_json));
    l.model = std::make_unique<SegmentationModel>(l.run.model);
    l.model->load_parameters(ckpt);
    return l;
}

Index3 foreground_centre(const LabelVolume& l) {
    const Index3& n = l.geometry.extents;
    double sum[3] = {0, 0, 0};
    std::int64_t count = 0;
    for (std::int64_t z = 0; z < n[0]; ++z)
        for (std::int64_t y = 0; y < n[1]; ++y)
            for (std::int64_t x = 0; x < n[2]; ++x)
                if (l.at(z, y, x)) {
                    sum[0] += z;
                    sum[1] += y;
                    sum[2] += x;
                    ++count;
                }
    if (count == 0) return {n[0] / 2, n[1] / 2, n[2] / 2};
    return {std::llround(sum[0] / count), std::llround(sum[1] / count), std::llround(sum[2] / count)};
}

struct EvalArgs {
    std::string checkpoint, data, out, name;
    std::optional<int> cubes;
    std::vector<std::string> subjects;
    bool no_overlays = false;
};

int run_eval(const EvalArgs& a) {
    Loaded l = load_model(a.checkpoint);
    const int cubes = a.cubes.value_or(l.run.train.cubes);
    const DatasetLayout data{a.data};
    const auto ids = a.subjects.empty() ? data.subject_ids() : a.subjects;
    const fs::path out(a.out);
    fs::create_directories(out);
    Manifest manifest("eval", out, a.checkpoint);

    RunConfig named = l.run;
    named.train.cubes = cubes;
    EvalReport report;
    report.configuration = a.name.empty() ? configuration_name(named) : a.name;
    for (const auto& id : ids) {
        const Subject s = data.load(id);
        const LabelVolume pred = predict(*l.model, s.image, cubes);
        report.subjects.push_back(SubjectMetrics{id, dsc(pred.voxels, s.label.voxels), iou(pred.voxels, s.label.voxels),
                                                 vol_error_pct(pred.voxels, s.label.voxels)});
        if (!a.no_overlays) {
            fs::create_directories(out / "overlays");
            const Index3 c = foreground_centre(s.label);
            const std::pair<Plane, std::int64_t> views[] = {{Plane::axial, c[0]}, {Plane::coronal, c[1]}, {Plane::sagittal, c[2]}};
            for (const auto& [plane, index] : views) {
                write_overlay(s.image, pred, s.label, plane, index,
                              out / "overlays" / (id + "_" + plane_name(plane) + ".ppm"));
            }
        }
        std::cerr << id << " dsc " << report.subjects.back().dsc << '\n';
    }
    write_report(report, out / "report.json");
    manifest.doc["cubes"] = cubes;
    manifest.doc["subjects"] = ids;
    manifest.finish(out / "manifest.json");
    std::cout << report_json(std::span<const EvalReport>(&report, 1)) << '\n';
    return 0;
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
    std::string checkpoint, image, out;
    std::optional<int> cubes;
};

int run_predict(const PredictArgs& a) {
    Loaded l = load_model(a.checkpoint);
    Volume image = read_nifti(a.image);
    const LabelVolume mask = predict(*l.model, image, a.cubes.value_or(l.run.train.cubes));
    write_nifti(mask, a.out);
    std::int64_t fg = 0;
    for (auto v : mask.voxels) fg += v;
    std::cerr << "wrote " << a.out << " (" << fg << " foreground voxels)\n";
    return 0;
}

// --------------------------------------------------------------- selftest

int run_selftest_command() {
    bool ok = true;
    for (const auto& r : run_selftest()) {
        std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.detail << ")\n";
        ok = ok && r.passed;
    }
    return ok ? 0 : exit_selftest_failed;
}

// ---------------------------------------------------------------- phantom

struct PhantomArgs {
    std::string out;
    int count = 5;
    std::int64_t size = 32;
    std::uint64_t seed = 0;
};

int run_phantom(const PhantomArgs& a) {
    const DatasetLayout out{a.out};
    fs::create_directories(out.images_dir());
    fs::create_directories(out.labels_dir());
    std::mt19937_64 rng(a.seed);
    const double n = static_cast<double>(a.size);
    std::uniform_real_distribution<double> radius(0.18 * n, 0.3 * n), jitter(-0.12 * n, 0.12 * n);
    for (int i = 0; i < a.count; ++i) {
        PhantomSpec spec;
        spec.extents = {a.size, a.size, a.size};
        spec.radius = radius(rng);
        spec.center = Vec3{(n - 1) / 2 + jitter(rng), (n - 1) / 2 + jitter(rng), (n - 1) / 2 + jitter(rng)};
        spec.seed = rng();
        char id[32];
        std::snprintf(id, sizeof id, "phantom%03d", i);
        const Subject s = sphere_phantom(spec, id);
        write_nifti(s.image, out.images_dir() / (std::string(id) + ".nii.gz"));
        write_nifti(s.label, out.labels_dir() / (std::string(id) + ".nii.gz"));
    }
    std::cerr << "wrote " << a.count << " phantoms to " << a.out << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"voxbox: volumetric segmentation from frozen 2-D slice encoders"};
    app.set_version_flag("--version", VOXBOX_VERSION);
    app.require_subcommand(1);

    PreprocessArgs pre;
    auto* pre_cmd = app.add_subcommand("preprocess", "Reorient, resample, normalize and crop a dataset");
    pre_cmd->add_option("--data", pre.data, "Dataset root with images/ and labels/")->required()->check(CLI::ExistingDirectory);
    pre_cmd->add_option("--out", pre.out, "Output dataset root")->required();
    pre_cmd->add_option("--config", pre.config, "Run config JSON (preprocess section is used)")->check(CLI::ExistingFile);
    pre_cmd->add_option("--seed", pre.seed, "Overrides VOXBOX_SEED and the config seed");

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train on a preprocessed dataset");
    train_cmd->add_option("--config", tr.config, "Run config JSON")->check(CLI::ExistingFile);
    train_cmd->add_option("--data", tr.data, "Preprocessed dataset root")->required()->check(CLI::ExistingDirectory);
    train_cmd->add_option("--out", tr.out, "Run output directory")->required();
    train_cmd->add_option("--cubes", tr.cubes, "Sub-cubes per volume (1, 8, 27, ...)");
    train_cmd->add_option("--epochs", tr.epochs, "Number of epochs");
    train_cmd->add_option("--fold", tr.fold, "Cross-validation fold");
    train_cmd->add_option("--max-steps", tr.max_steps, "Stop after this many optimizer steps");
    train_cmd->add_option("--lr", tr.lr, "Base learning rate");
    train_cmd->add_option("--seed", tr.seed, "Overrides VOXBOX_SEED and the config seed");
    train_cmd->add_option("--dtype", tr.dtype, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    train_cmd->add_flag("--no-depth-embedding", tr.no_depth_embedding, "Ablation: drop the depth embedding");
    train_cmd->add_flag("--single-scale", tr.single_scale, "Ablation: decode from the deepest level only");
    train_cmd->add_flag("--no-augment", tr.no_augment, "Disable flips and rotations");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint: JSON report plus overlays");
    eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint (.vxck)")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--data", ev.data, "Preprocessed dataset root")->required()->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--out", ev.out, "Output directory")->required();
    eval_cmd->add_option("--cubes", ev.cubes, "Sub-cubes per volume (default: as trained)");
    eval_cmd->add_option("--subjects", ev.subjects, "Subset of subject ids")->delimiter(',');
    eval_cmd->add_option("--name", ev.name, "Configuration label in the report");
    eval_cmd->add_flag("--no-overlays", ev.no_overlays, "Skip PPM overlays");

    PredictArgs pr;
    auto* predict_cmd = app.add_subcommand("predict", "Write the predicted mask of one preprocessed volume");
    predict_cmd->add_option("--checkpoint", pr.checkpoint, "Checkpoint (.vxck)")->required()->check(CLI::ExistingFile);
    predict_cmd->add_option("--image", pr.image, "Preprocessed NIfTI volume")->required()->check(CLI::ExistingFile);
    predict_cmd->add_option("--out", pr.out, "Output mask (.nii or .nii.gz)")->required();
    predict_cmd->add_option("--cubes", pr.cubes, "Sub-cubes per volume (default: as trained)");

    auto* selftest_cmd = app.add_subcommand("selftest", "Gradient-equivalence and memory-bound checks");

    PhantomArgs ph;
    auto* phantom_cmd = app.add_subcommand("phantom", "Write a synthetic sphere dataset");
    phantom_cmd->add_option("--out", ph.out, "Dataset root to create")->required();
    phantom_cmd->add_option("--count", ph.count, "Number of subjects")->check(CLI::PositiveNumber);
    phantom_cmd->add_option("--size", ph.size, "Cube edge in voxels")->check(CLI::PositiveNumber);
    phantom_cmd->add_option("--seed", ph.seed, "Random seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*pre_cmd) return run_preprocess(pre);
        if (*train_cmd) return run_train(tr);
        if (*eval_cmd) return run_eval(ev);
        if (*predict_cmd) return run_predict(pr);
        if (*selftest_cmd) return run_selftest_command();
        if (*phantom_cmd) return run_phantom(ph);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_error;
    }
    return exit_error;
}
