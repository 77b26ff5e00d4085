#include "voxbox/phantom.hpp"

#include <cmath>
#include <random>

namespace voxbox {

Subject sphere_phantom(const PhantomSpec& spec, const std::string& id) {
    Geometry g;
    g.extents = spec.extents;
    const Vec3 c = spec.center.value_or(Vec3{(spec.extents[0] - 1) / 2.0, (spec.extents[1] - 1) / 2.0,
                                            (spec.extents[2] - 1) / 2.0});
    Subject s;
    s.id = id;
    s.image.geometry = s.label.geometry = g;
    s.image.subject_id = s.label.subject_id = id;
    const auto n = static_cast<std::size_t>(g.voxel_count());
    s.image.voxels.resize(n);
    s.label.voxels.resize(n);
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, spec.noise > 0 ? spec.noise : 1.0);

    std::vector<double> raw(n);
    for (std::int64_t z = 0; z < g.extents[0]; ++z)
        for (std::int64_t y = 0; y < g.extents[1]; ++y)
            for (std::int64_t x = 0; x < g.extents[2]; ++x) {
                const double dz = z - c[0], dy = y - c[1], dx = x - c[2];
                const bool inside = dz * dz + dy * dy + dx * dx <= spec.radius * spec.radius;
                const auto i = static_cast<std::size_t>(s.label.index(z, y, x));
                s.label.voxels[i] = inside ? 1 : 0;
                raw[i] = (inside ? spec.foreground : spec.background) + (spec.noise > 0 ? noise(rng) : 0.0);
            }
    double mean = 0.0, sq = 0.0;
    for (double v : raw) mean += v;
    mean /= static_cast<double>(n);
    for (double v : raw) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) s.image.voxels[i] = static_cast<float>(sd > 0 ? (raw[i] - mean) / sd : 0.0);
    return s;
}

} // namespace voxbox
