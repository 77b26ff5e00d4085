#pragma once

#include <cstdint>
#include <optional>
#include <random>

#include "voxbox/volume.hpp"

namespace voxbox {

struct PreprocessConfig {
    /// Unset means "median in-plane spacing of the dataset", resolved by the caller.
    std::optional<Vec3> target_spacing;
    double clip_low_pct = 0.5;
    double clip_high_pct = 99.5;
    Index3 crop_extent{128, 128, 128};
    /// Applied to the [0,1]-scaled image, before z-scoring.
    double fg_threshold = 0.05;
    double aug_flip_prob = 0.5;
    double aug_rot90_prob = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Permutes and flips array axes so the direction matrix is the one closest
/// to canonical RAS (W -> R, H -> A, D -> S). Idempotent.
Volume reorient_ras(const Volume& v);
LabelVolume reorient_ras(const LabelVolume& l);

/// Trilinear (images) or nearest-neighbour (labels) resampling. New extents
/// are round(n * spacing / target); sampling uses voxel-centre alignment.
Volume resample(const Volume& v, const Vec3& target_spacing);
LabelVolume resample(const LabelVolume& l, const Vec3& target_spacing);

/// Isotropic spacing at the median in-plane (H and W) spacing over the
/// given geometries, read after RAS reorientation.
Vec3 median_inplane_spacing(const std::vector<Geometry>& geometries);

/// Percentile with linear interpolation between order statistics
/// (rank = q/100 * (n-1)).
double percentile(std::vector<float> values, double q);

struct Normalized {
    /// Clipped and min-max scaled to [0,1].
    Volume unit;
    /// `unit` after global z-scoring: the training input.
    Volume standardized;
};

/// Clip to [P_low, P_high], rescale to [0,1], then subtract the mean and
/// divide by the standard deviation over all voxels.
Normalized normalize(const Volume& v, const PreprocessConfig& cfg);

enum class CropStatus { ok, empty_foreground };

struct CropResult {
    Volume image;
    LabelVolume label;
    CropStatus status = CropStatus::ok;
    /// Window start in the (zero-padded) source grid.
    Index3 start{};
};

/// Foreground centre of mass (voxels of `foreground_source` above
/// `cfg.fg_threshold`); falls back to the geometric centre when empty.
std::optional<Vec3> foreground_center(const Volume& foreground_source, double threshold);

/// Window of `cfg.crop_extent` centred on the foreground, clamped inside the
/// volume; axes shorter than the crop are zero-padded symmetrically.
CropResult foreground_crop(const Volume& image, const LabelVolume& label, const PreprocessConfig& cfg,
                           const Volume& foreground_source);
CropResult foreground_crop(const Volume& image, const LabelVolume& label, const PreprocessConfig& cfg);

/// One draw of the training augmentation: per-axis flips followed by an
/// optional k*90 degree rotation in one axis plane.
struct AugmentDraw {
    std::array<bool, 3> flip{false, false, false};
    int rot_k = 0;
    /// Rotation plane as two distinct array axes (a, b); rotation maps a -> b.
    std::array<int, 2> rot_axes{1, 2};

    /// Extents after applying the draw.
    Index3 output_extents(const Index3& in) const;
    /// Where source voxel `p` lands.
    Index3 map(const Index3& p, const Index3& in) const;
};

AugmentDraw draw_augmentation(const PreprocessConfig& cfg, std::mt19937_64& rng);

Volume apply_augmentation(const Volume& v, const AugmentDraw& draw);
LabelVolume apply_augmentation(const LabelVolume& l, const AugmentDraw& draw);

struct Augmented {
    Volume image;
    LabelVolume label;
    AugmentDraw draw;
};

/// Draws once from `rng` and transforms image and label identically.
Augmented augment(const Volume& v, const LabelVolume& l, const PreprocessConfig& cfg, std::mt19937_64& rng);

struct PreprocessedSubject {
    Volume image;
    LabelVolume label;
    CropStatus crop_status = CropStatus::ok;
};

/// reorient -> resample -> normalize -> foreground crop.
PreprocessedSubject preprocess_subject(const Volume& image, const LabelVolume& label, const PreprocessConfig& cfg,
                                       const Vec3& target_spacing);

} // namespace voxbox
