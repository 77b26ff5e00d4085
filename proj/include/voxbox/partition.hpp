#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace voxbox {

/// (depth, height, width) triple.
using Index3 = std::array<std::int64_t, 3>;

std::string index_string(const Index3& v);

/// Non-overlapping tiling of a (D,H,W) grid by equal cubes, offsets in
/// lexicographic (z,y,x) order.
struct Partition {
    Index3 volume_extents{};
    Index3 cube_extents{};
    std::vector<Index3> offsets;

    std::size_t size() const noexcept { return offsets.size(); }
};

/// Fails when a volume extent is not a multiple of the cube extent.
Partition make_partition(const Index3& volume_extents, const Index3& cube_extents);

/// Cube extents that split every axis of `volume_extents` into `per_axis` parts.
Index3 cube_extents_for(const Index3& volume_extents, std::int64_t per_axis);

} // namespace voxbox
