#include "voxbox/dataset.hpp"

#include <algorithm>

#include "voxbox/io.hpp"

namespace voxbox {

namespace fs = std::filesystem;

std::string subject_id_from_path(const fs::path& path) {
    std::string name = path.filename().string();
    for (const char* ext : {".nii.gz", ".nii"}) {
        const std::string e(ext);
        if (name.size() > e.size() && name.compare(name.size() - e.size(), e.size(), e) == 0) {
            return name.substr(0, name.size() - e.size());
        }
    }
    return name;
}

namespace {

std::optional<fs::path> find_nifti(const fs::path& dir, const std::string& id) {
    for (const char* ext : {".nii.gz", ".nii"}) {
        const fs::path p = dir / (id + ext);
        if (fs::exists(p)) return p;
    }
    return std::nullopt;
}

bool is_nifti(const fs::path& p) {
    const std::string n = p.filename().string();
    return n.ends_with(".nii") || n.ends_with(".nii.gz");
}

} // namespace

std::vector<std::string> DatasetLayout::subject_ids() const {
    if (!fs::is_directory(images_dir())) throw IoError("dataset has no images directory: " + images_dir().string());
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(images_dir())) {
        if (entry.is_regular_file() && is_nifti(entry.path())) ids.push_back(subject_id_from_path(entry.path()));
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

fs::path DatasetLayout::image_path(const std::string& id) const {
    if (auto p = find_nifti(images_dir(), id)) return *p;
    throw IoError("no image for subject '" + id + "' in " + images_dir().string());
}

std::optional<fs::path> DatasetLayout::label_path(const std::string& id) const {
    return find_nifti(labels_dir(), id);
}

Subject DatasetLayout::load(const std::string& id) const {
    const auto label = label_path(id);
    if (!label) throw IoError("no label for subject '" + id + "' in " + labels_dir().string());
    Subject s;
    s.id = id;
    s.image = read_nifti(image_path(id));
    s.label = read_nifti_label(*label);
    s.image.subject_id = s.label.subject_id = id;
    if (s.image.geometry.extents != s.label.geometry.extents) {
        throw ShapeError("subject '" + id + "': image extents " + index_string(s.image.geometry.extents) +
                         " differ from label extents " + index_string(s.label.geometry.extents));
    }
    return s;
}

std::vector<Subject> DatasetLayout::load(const std::vector<std::string>& ids) const {
    std::vector<Subject> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(load(id));
    return out;
}

} // namespace voxbox
