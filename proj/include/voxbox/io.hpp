#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "voxbox/tensor.hpp"
#include "voxbox/volume.hpp"

namespace voxbox {

// ---------------------------------------------------------------- NIfTI-1

/// Reads a single-file NIfTI-1 volume (.nii or gzip-compressed .nii.gz).
/// Supports 3-D uint8, int16 and float32 payloads; scl_slope is applied.
/// Geometry comes from the s-form, else the q-form, else pixdim alone.
Volume read_nifti(const std::filesystem::path& path);
/// Parses an in-memory (already decompressed) NIfTI-1 file.
Volume parse_nifti(std::span<const std::uint8_t> bytes);
/// read_nifti followed by to_label.
LabelVolume read_nifti_label(const std::filesystem::path& path);

/// Writes float32 voxels with matching s-form and q-form. A ".gz" suffix
/// selects gzip compression.
void write_nifti(const Volume& v, const std::filesystem::path& path);
/// Writes uint8 voxels.
void write_nifti(const LabelVolume& l, const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path, bool allow_gzip = true);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// ------------------------------------------------------------ VXF1 features

struct FeatureLevel {
    /// (d_emb, D, Gh, Gw)
    std::array<std::int64_t, 4> extents{};
    std::vector<float> payload;
};

/// On-disk form of a four-level feature pyramid.
///
/// Layout, all integers little-endian:
///   "VXF1" | u32 len, subject_id | u32 level_count |
///   level_count x ( 4 x u64 extents (d_emb,D,Gh,Gw) | f32 payload ) |
///   u32 len, encoder_tag | u64 FNV-1a checksum of every preceding byte
struct FeatureFile {
    std::string subject_id;
    std::vector<FeatureLevel> levels;
    std::string encoder_tag;
};

std::vector<std::uint8_t> encode_feature_file(const FeatureFile& file);
FeatureFile decode_feature_file(std::span<const std::uint8_t> bytes);
void write_feature_file(const FeatureFile& file, const std::filesystem::path& path);
FeatureFile read_feature_file(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) noexcept;

// --------------------------------------------------------------- checkpoints

/// Named parameters plus the JSON model config they were trained with.
///
/// Layout: "VXCK" | u32 version | u32 len, config JSON | u32 count |
///   count x ( u32 len, name | VXT1 tensor blob )
struct Checkpoint {
    std::string config_json;
    std::map<std::string, Tensor> tensors;
};

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// ------------------------------------------------------------------ reports

struct SubjectMetrics {
    std::string subject_id;
    double dsc = 0.0;
    double iou = 0.0;
    /// Undefined when the ground truth is empty.
    std::optional<double> vol_error_pct;
};

struct EvalReport {
    std::string configuration;
    std::vector<SubjectMetrics> subjects;

    double mean_dsc() const;
    double mean_iou() const;
    /// Mean over subjects where the value is defined.
    std::optional<double> mean_vol_error_pct() const;
};

/// JSON text of one or more configurations, each with per-subject rows and
/// a "mean" row carrying dsc / iou / vol_error_pct.
std::string report_json(std::span<const EvalReport> reports);
void write_report(std::span<const EvalReport> reports, const std::filesystem::path& path);
void write_report(const EvalReport& report, const std::filesystem::path& path);

// ----------------------------------------------------------------- overlays

enum class Plane { axial, coronal, sagittal };

const char* plane_name(Plane plane) noexcept;

struct RgbImage {
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::vector<std::uint8_t> rgb;
};

/// Gray slice of `volume` with the predicted mask tinted red and the
/// ground-truth contour drawn in green. Axial images are H x W, coronal
/// D x W, sagittal D x H (superior at the top for the latter two).
RgbImage render_overlay(const Volume& volume, const LabelVolume& pred, const LabelVolume& gt, Plane plane,
                        std::int64_t index);
/// Binary PPM (P6).
void write_ppm(const RgbImage& image, const std::filesystem::path& path);
void write_overlay(const Volume& volume, const LabelVolume& pred, const LabelVolume& gt, Plane plane,
                   std::int64_t index, const std::filesystem::path& path);

} // namespace voxbox
