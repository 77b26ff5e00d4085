#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "voxbox/tensor.hpp"
#include "voxbox/volume.hpp"

namespace voxbox {

struct LossConfig {
    double lambda_dice = 1.0;
    double lambda_ce = 1.0;
    /// Added to numerator and denominator of the soft Dice ratio.
    double smooth = 1e-5;

    void validate() const;
};

/// lambda_dice * (1 - soft Dice) + lambda_ce * mean BCE, on sigmoid(logits).
/// `target` holds 0/1 values and has the shape of `logits`. Differentiable
/// with respect to `logits` only. Returns shape [1].
Tensor dice_ce_loss(const Tensor& logits, const Tensor& target, const LossConfig& cfg = {});

/// sigmoid(logit) > 0.5, i.e. logit > 0.
std::vector<std::uint8_t> binarize(const Tensor& logits);
LabelVolume binarize(const Tensor& logits, const Geometry& geometry);

struct OverlapCounts {
    std::int64_t pred = 0;
    std::int64_t truth = 0;
    std::int64_t both = 0;
};
OverlapCounts overlap(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);

/// 2|A∩B| / (|A|+|B|); 1 when both masks are empty.
double dsc(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);
/// |A∩B| / |A∪B|; 1 when both masks are empty.
double iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);
/// 100 * ||A| - |B|| / |B|; empty when the ground truth is empty.
std::optional<double> vol_error_pct(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);

} // namespace voxbox
