#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "voxbox/partition.hpp"
#include "voxbox/tensor.hpp"

namespace voxbox {

using Vec3 = std::array<double, 3>;
/// m[r][c]: row r, column c.
using Mat3 = std::array<Vec3, 3>;

/// Voxel grid placement. Array axes are ordered (D,H,W), i.e. NIfTI (k,j,i);
/// W is the fastest-varying axis in memory.
struct Geometry {
    Index3 extents{1, 1, 1};
    /// mm per voxel along (D,H,W).
    Vec3 spacing{1.0, 1.0, 1.0};
    /// direction[r][a]: world (RAS+) component r of a unit step along array axis a.
    Mat3 direction{{{0, 0, 1}, {0, 1, 0}, {1, 0, 0}}};
    /// World position (mm) of voxel (0,0,0).
    Vec3 origin{0, 0, 0};

    std::int64_t voxel_count() const noexcept { return extents[0] * extents[1] * extents[2]; }
    /// Throws unless spacing > 0 and |det(direction)| is within 1e-3 of 1.
    void validate() const;
};

/// Direction matrix of a canonical RAS volume: W -> +R, H -> +A, D -> +S.
Mat3 ras_direction() noexcept;
double determinant(const Mat3& m) noexcept;

struct Volume {
    Geometry geometry;
    std::vector<float> voxels;
    std::string subject_id;

    std::int64_t index(std::int64_t z, std::int64_t y, std::int64_t x) const noexcept {
        return (z * geometry.extents[1] + y) * geometry.extents[2] + x;
    }
    float at(std::int64_t z, std::int64_t y, std::int64_t x) const { return voxels[index(z, y, x)]; }
};

/// Binary mask; every voxel is exactly 0 or 1.
struct LabelVolume {
    Geometry geometry;
    std::vector<std::uint8_t> voxels;
    std::string subject_id;

    std::int64_t index(std::int64_t z, std::int64_t y, std::int64_t x) const noexcept {
        return (z * geometry.extents[1] + y) * geometry.extents[2] + x;
    }
    std::uint8_t at(std::int64_t z, std::int64_t y, std::int64_t x) const { return voxels[index(z, y, x)]; }
};

/// Fails unless every voxel is 0 or 1.
LabelVolume to_label(const Volume& v);
Volume to_volume(const LabelVolume& l);

/// (1,1,D,H,W) tensor of the voxel values.
Tensor to_tensor(const Volume& v, DType dtype);
Tensor to_tensor(const LabelVolume& l, DType dtype);

} // namespace voxbox
