#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "voxbox/loss.hpp"
#include "voxbox/model.hpp"
#include "voxbox/optim.hpp"
#include "voxbox/preprocess.hpp"

namespace voxbox {

struct TrainConfig {
    int epochs = 100;
    int warmup_epochs = 5;
    int early_stop_patience = 20;
    double clip_max_norm = 1.0;
    LossConfig loss;
    AdamWConfig optim;
    /// Sub-cubes per volume; must be a perfect cube (1, 8, 27, ...).
    int cubes = 8;
    std::uint64_t seed = 0;
    int fold = 0;
    int folds = 5;
    /// Stop after this many optimizer steps (0: no limit).
    std::int64_t max_steps = 0;
    bool augment = true;

    void validate() const;
    Schedule schedule() const { return {optim.lr, warmup_epochs, epochs}; }
};

/// Partition of `volume_extents` into `cubes` equal sub-cubes.
Partition partition_for(const Index3& volume_extents, int cubes);

struct StepStats {
    double loss = 0.0;
    double grad_norm = 0.0;
    double clip_scale = 1.0;
    /// High-water mark of tape-held bytes during the step.
    std::int64_t peak_tape_bytes = 0;
};

/// Suspended forward of every sub-cube, assembled into (1,1,D,H,W) logits.
Tensor predict_logits(const SegmentationModel& model, const Tensor& x, const Partition& partition,
                      const std::string& subject_id);

/// Two-pass gradient accumulation. Pass one: suspended forwards, loss on the
/// assembled detached prediction, gradient of the loss with respect to that
/// prediction. Pass two: each sub-cube is re-run with tracking and
/// back-propagated with its slice of that gradient. Gradients are left in the
/// parameters; the tape is cleared.
StepStats two_pass_gradients(SegmentationModel& model, const Tensor& x, const Tensor& target,
                             const Partition& partition, const LossConfig& loss, const std::string& subject_id);

/// Reference: every sub-cube tracked on one tape, assembled differentiably,
/// loss and a single backward.
StepStats single_pass_gradients(SegmentationModel& model, const Tensor& x, const Tensor& target,
                                const Partition& partition, const LossConfig& loss, const std::string& subject_id);

/// two_pass_gradients, clip, exactly one optimizer step, clear gradients.
/// A non-finite loss clears state and throws NonFiniteError without stepping.
StepStats two_pass_step(SegmentationModel& model, AdamW& optim, const Tensor& x, const Tensor& target,
                        const Partition& partition, const TrainConfig& cfg, double lr, const std::string& subject_id);

/// Ordinary step: one tracked forward over the whole volume, loss, backward,
/// clip, optimizer step.
StepStats plain_step(SegmentationModel& model, AdamW& optim, const Tensor& x, const Tensor& target,
                     const TrainConfig& cfg, double lr, const std::string& subject_id);

struct Subject {
    std::string id;
    Volume image;
    LabelVolume label;
};

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_dsc = 0.0;
    double val_iou = 0.0;
    std::optional<double> val_vol_error_pct;
    std::int64_t steps = 0;
    double seconds = 0.0;
};

struct TrainOutcome {
    std::vector<EpochLog> epochs;
    int best_epoch = -1;
    double best_dsc = 0.0;
    bool stopped_early = false;
    /// Parameter values at the best validation epoch.
    Checkpoint best;
};

/// Runs the epoch loop on already-preprocessed subjects. `on_epoch` sees each
/// log row as soon as validation finishes.
TrainOutcome train(SegmentationModel& model, const std::vector<Subject>& train_set, const std::vector<Subject>& val_set,
                   const TrainConfig& cfg, const PreprocessConfig& augmentation, const std::string& config_json,
                   const std::function<void(const EpochLog&)>& on_epoch = {});

/// Metrics of thresholded predictions against each subject's label.
EvalReport evaluate(const SegmentationModel& model, const std::vector<Subject>& subjects, int cubes,
                    const std::string& configuration);

/// Thresholded prediction for one preprocessed volume.
LabelVolume predict(const SegmentationModel& model, const Volume& image, int cubes);

} // namespace voxbox
