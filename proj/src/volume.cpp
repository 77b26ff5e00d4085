#include "voxbox/volume.hpp"

#include <cmath>

namespace voxbox {

Mat3 ras_direction() noexcept { return {{{0, 0, 1}, {0, 1, 0}, {1, 0, 0}}}; }

double determinant(const Mat3& m) noexcept {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

void Geometry::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (extents[a] <= 0) throw ShapeError("volume extents must be positive, got " + index_string(extents));
        if (!(spacing[a] > 0)) throw ShapeError("volume spacing must be strictly positive");
    }
    const double det = determinant(direction);
    if (std::abs(std::abs(det) - 1.0) > 1e-3) {
        throw ShapeError("direction matrix determinant " + std::to_string(det) + " is not +-1");
    }
}

LabelVolume to_label(const Volume& v) {
    LabelVolume l{v.geometry, {}, v.subject_id};
    l.voxels.resize(v.voxels.size());
    for (std::size_t i = 0; i < v.voxels.size(); ++i) {
        const float x = v.voxels[i];
        if (x != 0.0f && x != 1.0f) {
            throw Error("label volume contains non-binary value " + std::to_string(x) + " at voxel " +
                        std::to_string(i));
        }
        l.voxels[i] = x == 1.0f ? 1 : 0;
    }
    return l;
}

Volume to_volume(const LabelVolume& l) {
    Volume v{l.geometry, std::vector<float>(l.voxels.begin(), l.voxels.end()), l.subject_id};
    return v;
}

namespace {

template <class V>
Tensor voxels_to_tensor(const Geometry& g, const std::vector<V>& voxels, DType dtype) {
    Tensor t = Tensor::zeros({1, 1, g.extents[0], g.extents[1], g.extents[2]}, dtype);
    dispatch(dtype, [&](auto tag) {
        using T = decltype(tag);
        auto d = t.mutable_data<T>();
        for (std::size_t i = 0; i < voxels.size(); ++i) d[i] = static_cast<T>(voxels[i]);
    });
    return t;
}

} // namespace

Tensor to_tensor(const Volume& v, DType dtype) { return voxels_to_tensor(v.geometry, v.voxels, dtype); }
Tensor to_tensor(const LabelVolume& l, DType dtype) { return voxels_to_tensor(l.geometry, l.voxels, dtype); }

} // namespace voxbox
