#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "voxbox/trainer.hpp"

namespace voxbox {

/// Dataset directory layout:
///   <root>/images/<id>.nii[.gz]
///   <root>/labels/<id>.nii[.gz]   (optional for prediction-only sets)
struct DatasetLayout {
    std::filesystem::path root;

    std::filesystem::path images_dir() const { return root / "images"; }
    std::filesystem::path labels_dir() const { return root / "labels"; }

    /// Subject ids with an image, sorted.
    std::vector<std::string> subject_ids() const;
    std::filesystem::path image_path(const std::string& id) const;
    std::optional<std::filesystem::path> label_path(const std::string& id) const;

    /// Image and label; fails if the label is missing.
    Subject load(const std::string& id) const;
    std::vector<Subject> load(const std::vector<std::string>& ids) const;
};

/// Strips ".nii" / ".nii.gz" from a file name.
std::string subject_id_from_path(const std::filesystem::path& path);

} // namespace voxbox
