#pragma once

#include <cstdint>

#include "voxbox/trainer.hpp"

namespace voxbox {

struct PhantomSpec {
    Index3 extents{32, 32, 32};
    /// Centre in voxel coordinates; defaults to the volume centre.
    std::optional<Vec3> center;
    double radius = 9.0;
    double foreground = 1.0;
    double background = 0.0;
    /// Standard deviation of additive Gaussian noise.
    double noise = 0.1;
    std::uint64_t seed = 0;
};

/// Bright sphere on a dark background with its exact mask. The image is
/// z-scored so it looks like preprocessed data.
Subject sphere_phantom(const PhantomSpec& spec, const std::string& id = "phantom");

} // namespace voxbox
