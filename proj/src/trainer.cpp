#include "voxbox/trainer.hpp"

#include <chrono>
#include <cmath>

#include "voxbox/ops.hpp"
#include "voxbox/tape.hpp"

namespace voxbox {

namespace {

std::int64_t cubes_per_axis(int cubes) {
    const auto root = static_cast<std::int64_t>(std::llround(std::cbrt(static_cast<double>(cubes))));
    if (cubes < 1 || root * root * root != cubes) {
        throw ConfigError("cubes must be a perfect cube (1, 8, 27, ...), got " + std::to_string(cubes));
    }
    return root;
}

} // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs >= epochs) throw ConfigError("warmup_epochs must lie in [0, epochs)");
    if (early_stop_patience < 1) throw ConfigError("early_stop_patience must be >= 1");
    if (!(clip_max_norm > 0)) throw ConfigError("clip_max_norm must be positive");
    if (!(optim.lr > 0) || optim.weight_decay < 0) throw ConfigError("learning rate must be positive, weight decay >= 0");
    if (folds < 2 || fold < 0 || fold >= folds) throw ConfigError("fold must lie in [0, folds) with folds >= 2");
    if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
    loss.validate();
    cubes_per_axis(cubes);
}

Partition partition_for(const Index3& volume_extents, int cubes) {
    return make_partition(volume_extents, cube_extents_for(volume_extents, cubes_per_axis(cubes)));
}

namespace {

Index3 spatial_extents(const Tensor& x) {
    if (x.rank() != 5 || x.dim(0) != 1 || x.dim(1) != 1) {
        throw ShapeError("expected a (1,1,D,H,W) volume, got " + shape_string(x.shape()));
    }
    return {x.dim(2), x.dim(3), x.dim(4)};
}

void check_inputs(const Tensor& x, const Tensor& target, const Partition& partition) {
    if (spatial_extents(x) != partition.volume_extents) {
        throw ShapeError("volume " + shape_string(x.shape()) + " does not match partition extents " +
                         index_string(partition.volume_extents));
    }
    if (target.shape() != x.shape()) {
        throw ShapeError("target " + shape_string(target.shape()) + " does not match volume " + shape_string(x.shape()));
    }
}

Tensor cube_input(const Tensor& x, const Partition& partition, std::size_t i) {
    NoGradGuard guard;
    const Index3& o = partition.offsets[i];
    const Index3& c = partition.cube_extents;
    return slice_view(x, {0, 0, o[0], o[1], o[2]}, {1, 1, c[0], c[1], c[2]});
}

CubeContext context(const std::string& subject, const Partition& partition, std::size_t i) {
    return CubeContext{subject, partition.offsets[i], partition.volume_extents};
}

void abort_step(SegmentationModel& model, double loss) {
    Tape::current().clear();
    model.params().zero_grad();
    throw NonFiniteError("non-finite loss " + std::to_string(loss) + "; step aborted");
}

StepStats finish_step(SegmentationModel& model, AdamW& optim, StepStats stats, const TrainConfig& cfg, double lr) {
    try {
        const ClipResult clip = clip_grad_norm(model.params(), cfg.clip_max_norm);
        stats.grad_norm = clip.norm;
        stats.clip_scale = clip.scale;
        optim.step(model.params(), lr);
    } catch (...) {
        model.params().zero_grad();
        throw;
    }
    model.params().zero_grad();
    return stats;
}

} // namespace

Tensor predict_logits(const SegmentationModel& model, const Tensor& x, const Partition& partition,
                      const std::string& subject_id) {
    if (spatial_extents(x) != partition.volume_extents) {
        throw ShapeError("volume " + shape_string(x.shape()) + " does not match partition extents " +
                         index_string(partition.volume_extents));
    }
    NoGradGuard guard;
    std::vector<Tensor> blocks;
    blocks.reserve(partition.size());
    for (std::size_t i = 0; i < partition.size(); ++i) {
        blocks.push_back(model.forward_subcube(cube_input(x, partition, i), context(subject_id, partition, i),
                                               ForwardMode::suspended));
    }
    return assemble(blocks, partition);
}

StepStats two_pass_gradients(SegmentationModel& model, const Tensor& x, const Tensor& target,
                             const Partition& partition, const LossConfig& loss_cfg, const std::string& subject_id) {
    check_inputs(x, target, partition);
    Tape& tape = Tape::current();
    tape.clear();
    tape.reset_peak();
    StepStats stats;

    // Pass one: nothing but the assembled prediction survives the loop.
    Tensor prediction = detach(predict_logits(model, x, partition, subject_id));
    prediction.set_requires_grad(true);
    const Tensor loss = dice_ce_loss(prediction, target, loss_cfg);
    stats.loss = loss.item();
    if (!std::isfinite(stats.loss)) abort_step(model, stats.loss);
    backward(loss);
    const Tensor upstream = prediction.grad();
    tape.clear();

    // Pass two: one cube on the tape at a time, gradients accumulate in the
    // parameters.
    for (std::size_t i = 0; i < partition.size(); ++i) {
        const Tensor y = model.forward_subcube(cube_input(x, partition, i), context(subject_id, partition, i),
                                               ForwardMode::tracked);
        const Tensor seed = cube_input(upstream, partition, i);
        backward(y, seed);
        tape.clear();
    }
    stats.peak_tape_bytes = tape.meter().peak_bytes();
    return stats;
}

StepStats single_pass_gradients(SegmentationModel& model, const Tensor& x, const Tensor& target,
                                const Partition& partition, const LossConfig& loss_cfg, const std::string& subject_id) {
    check_inputs(x, target, partition);
    Tape& tape = Tape::current();
    tape.clear();
    tape.reset_peak();
    StepStats stats;
    std::vector<Tensor> blocks;
    for (std::size_t i = 0; i < partition.size(); ++i) {
        blocks.push_back(model.forward_subcube(cube_input(x, partition, i), context(subject_id, partition, i),
                                               ForwardMode::tracked));
    }
    const Tensor loss = dice_ce_loss(assemble(blocks, partition), target, loss_cfg);
    stats.loss = loss.item();
    if (!std::isfinite(stats.loss)) abort_step(model, stats.loss);
    backward(loss);
    stats.peak_tape_bytes = tape.meter().peak_bytes();
    tape.clear();
    return stats;
}

StepStats two_pass_step(SegmentationModel& model, AdamW& optim, const Tensor& x, const Tensor& target,
                        const Partition& partition, const TrainConfig& cfg, double lr, const std::string& subject_id) {
    const StepStats stats = two_pass_gradients(model, x, target, partition, cfg.loss, subject_id);
    return finish_step(model, optim, stats, cfg, lr);
}

StepStats plain_step(SegmentationModel& model, AdamW& optim, const Tensor& x, const Tensor& target,
                     const TrainConfig& cfg, double lr, const std::string& subject_id) {
    const Index3 extents = spatial_extents(x);
    if (target.shape() != x.shape()) throw ShapeError("target does not match volume");
    Tape& tape = Tape::current();
    tape.clear();
    tape.reset_peak();
    StepStats stats;
    const Tensor y = model.forward_subcube(x, CubeContext{subject_id, {0, 0, 0}, extents}, ForwardMode::tracked);
    const Tensor loss = dice_ce_loss(y, target, cfg.loss);
    stats.loss = loss.item();
    if (!std::isfinite(stats.loss)) abort_step(model, stats.loss);
    backward(loss);
    stats.peak_tape_bytes = tape.meter().peak_bytes();
    tape.clear();
    return finish_step(model, optim, stats, cfg, lr);
}

TrainOutcome train(SegmentationModel& model, const std::vector<Subject>& train_set, const std::vector<Subject>& val_set,
                   const TrainConfig& cfg, const PreprocessConfig& augmentation, const std::string& config_json,
                   const std::function<void(const EpochLog&)>& on_epoch) {
    cfg.validate();
    if (train_set.empty()) throw ConfigError("training set is empty");
    const std::vector<Subject>& validation = val_set.empty() ? train_set : val_set;
    const DType dtype = model.config().dtype;
    AdamW optim(cfg.optim);
    std::mt19937_64 rng(cfg.seed);
    TrainOutcome out;
    std::vector<double> history;
    std::int64_t steps = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        EpochLog log;
        log.epoch = epoch;
        log.lr = lr_at(epoch, cfg.schedule());
        double loss_sum = 0.0;
        int seen = 0;
        for (const Subject& s : train_set) {
            if (cfg.max_steps > 0 && steps >= cfg.max_steps) break;
            Tensor x, t;
            if (cfg.augment) {
                const Augmented a = augment(s.image, s.label, augmentation, rng);
                x = to_tensor(a.image, dtype);
                t = to_tensor(a.label, dtype);
            } else {
                x = to_tensor(s.image, dtype);
                t = to_tensor(s.label, dtype);
            }
            const Partition partition = partition_for({x.dim(2), x.dim(3), x.dim(4)}, cfg.cubes);
            const StepStats st = two_pass_step(model, optim, x, t, partition, cfg, log.lr, s.id);
            loss_sum += st.loss;
            ++seen;
            ++steps;
        }
        log.train_loss = seen > 0 ? loss_sum / seen : 0.0;
        log.steps = steps;

        const EvalReport report = evaluate(model, validation, cfg.cubes, "validation");
        log.val_dsc = report.mean_dsc();
        log.val_iou = report.mean_iou();
        log.val_vol_error_pct = report.mean_vol_error_pct();
        log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        out.epochs.push_back(log);
        if (on_epoch) on_epoch(log);

        history.push_back(log.val_dsc);
        if (out.best_epoch < 0 || log.val_dsc > out.best_dsc) {
            out.best_epoch = epoch;
            out.best_dsc = log.val_dsc;
            out.best = model.to_checkpoint(config_json);
        }
        if (early_stop(history, cfg.early_stop_patience)) {
            out.stopped_early = true;
            break;
        }
        if (cfg.max_steps > 0 && steps >= cfg.max_steps) break;
    }
    return out;
}

EvalReport evaluate(const SegmentationModel& model, const std::vector<Subject>& subjects, int cubes,
                    const std::string& configuration) {
    EvalReport report;
    report.configuration = configuration;
    for (const Subject& s : subjects) {
        const LabelVolume pred = predict(model, s.image, cubes);
        if (pred.geometry.extents != s.label.geometry.extents) {
            throw ShapeError("label extents of '" + s.id + "' differ from its image");
        }
        report.subjects.push_back(SubjectMetrics{s.id, dsc(pred.voxels, s.label.voxels), iou(pred.voxels, s.label.voxels),
                                                 vol_error_pct(pred.voxels, s.label.voxels)});
    }
    return report;
}

LabelVolume predict(const SegmentationModel& model, const Volume& image, int cubes) {
    const Tensor x = to_tensor(image, model.config().dtype);
    const Partition partition = partition_for(image.geometry.extents, cubes);
    LabelVolume mask = binarize(predict_logits(model, x, partition, image.subject_id), image.geometry);
    mask.subject_id = image.subject_id;
    return mask;
}

} // namespace voxbox
