#include "voxbox/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace voxbox {

void PreprocessConfig::validate() const {
    if (!(0.0 <= clip_low_pct && clip_low_pct < clip_high_pct && clip_high_pct <= 100.0)) {
        throw ConfigError("clip percentiles must satisfy 0 <= low < high <= 100");
    }
    for (auto e : crop_extent) {
        if (e <= 0) throw ConfigError("crop extents must be positive");
    }
    if (target_spacing) {
        for (double s : *target_spacing) {
            if (!(s > 0)) throw ConfigError("target spacing must be positive");
        }
    }
    for (double p : {aug_flip_prob, aug_rot90_prob}) {
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augmentation probabilities must lie in [0,1]");
    }
}

namespace {

struct AxisMap {
    std::array<int, 3> source{0, 1, 2};
    std::array<bool, 3> flip{false, false, false};
};

AxisMap ras_axis_map(const Geometry& g) {
    g.validate();
    // world row each array axis should follow: D -> S (z), H -> A (y), W -> R (x)
    constexpr std::array<int, 3> world_row{2, 1, 0};
    std::array<int, 3> perm{0, 1, 2}, best = perm;
    double best_score = -1;
    do {
        double score = 0;
        for (int a = 0; a < 3; ++a) score += std::abs(g.direction[world_row[a]][perm[a]]);
        if (score > best_score + 1e-12) {
            best_score = score;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    AxisMap m;
    m.source = best;
    for (int a = 0; a < 3; ++a) m.flip[a] = g.direction[world_row[a]][best[a]] < 0;
    return m;
}

Geometry remap_geometry(const Geometry& g, const AxisMap& m) {
    Geometry out = g;
    for (int a = 0; a < 3; ++a) {
        const int s = m.source[a];
        out.extents[a] = g.extents[s];
        out.spacing[a] = g.spacing[s];
        const double sign = m.flip[a] ? -1.0 : 1.0;
        for (int r = 0; r < 3; ++r) out.direction[r][a] = sign * g.direction[r][s];
        if (m.flip[a]) {
            for (int r = 0; r < 3; ++r) out.origin[r] += g.direction[r][s] * g.spacing[s] * static_cast<double>(g.extents[s] - 1);
        }
    }
    return out;
}

template <class V>
std::vector<V> remap_voxels(const std::vector<V>& src, const Geometry& g, const AxisMap& m) {
    const Index3& n = g.extents;
    Index3 out_ext{};
    for (int a = 0; a < 3; ++a) out_ext[a] = n[m.source[a]];
    std::vector<V> dst(src.size());
    Index3 c{};
    std::size_t o = 0;
    for (c[0] = 0; c[0] < out_ext[0]; ++c[0])
        for (c[1] = 0; c[1] < out_ext[1]; ++c[1])
            for (c[2] = 0; c[2] < out_ext[2]; ++c[2]) {
                Index3 s{};
                for (int a = 0; a < 3; ++a) s[m.source[a]] = m.flip[a] ? out_ext[a] - 1 - c[a] : c[a];
                dst[o++] = src[static_cast<std::size_t>((s[0] * n[1] + s[1]) * n[2] + s[2])];
            }
    return dst;
}

struct ResampleAxis {
    std::int64_t out_extent;
    double ratio; // target / source spacing
};

std::array<ResampleAxis, 3> resample_axes(const Geometry& g, const Vec3& target) {
    std::array<ResampleAxis, 3> axes{};
    for (int a = 0; a < 3; ++a) {
        if (!(target[a] > 0)) throw ConfigError("target spacing must be positive");
        const double n = static_cast<double>(g.extents[a]) * g.spacing[a] / target[a];
        axes[a] = {std::max<std::int64_t>(1, std::llround(n)), target[a] / g.spacing[a]};
    }
    return axes;
}

Geometry resampled_geometry(const Geometry& g, const Vec3& target, const std::array<ResampleAxis, 3>& axes) {
    Geometry out = g;
    for (int a = 0; a < 3; ++a) {
        out.extents[a] = axes[a].out_extent;
        out.spacing[a] = target[a];
        const double first = 0.5 * axes[a].ratio - 0.5; // source coordinate of output voxel 0
        for (int r = 0; r < 3; ++r) out.origin[r] += g.direction[r][a] * g.spacing[a] * first;
    }
    return out;
}

struct Tap {
    std::int64_t lo, hi;
    double frac;
};

std::vector<Tap> clamped_taps(std::int64_t n, const ResampleAxis& ax) {
    std::vector<Tap> taps(static_cast<std::size_t>(ax.out_extent));
    for (std::int64_t i = 0; i < ax.out_extent; ++i) {
        double src = (static_cast<double>(i) + 0.5) * ax.ratio - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(n - 1));
        const auto lo = std::min(static_cast<std::int64_t>(std::floor(src)), n - 1);
        taps[i] = {lo, std::min(lo + 1, n - 1), src - static_cast<double>(lo)};
    }
    return taps;
}

Geometry padded_crop_geometry(const Geometry& g, const Index3& crop, const Index3& shift) {
    Geometry out = g;
    out.extents = crop;
    for (int a = 0; a < 3; ++a)
        for (int r = 0; r < 3; ++r) out.origin[r] += g.direction[r][a] * g.spacing[a] * static_cast<double>(shift[a]);
    return out;
}

// Copies the window at `start` of the volume embedded at `pad_before` in a
// zero grid of extent max(n, crop).
template <class V>
std::vector<V> crop_voxels(const std::vector<V>& src, const Index3& n, const Index3& crop, const Index3& pad_before,
                           const Index3& start) {
    std::vector<V> out(static_cast<std::size_t>(crop[0] * crop[1] * crop[2]), V{});
    for (std::int64_t z = 0; z < crop[0]; ++z) {
        const std::int64_t sz = z + start[0] - pad_before[0];
        if (sz < 0 || sz >= n[0]) continue;
        for (std::int64_t y = 0; y < crop[1]; ++y) {
            const std::int64_t sy = y + start[1] - pad_before[1];
            if (sy < 0 || sy >= n[1]) continue;
            for (std::int64_t x = 0; x < crop[2]; ++x) {
                const std::int64_t sx = x + start[2] - pad_before[2];
                if (sx < 0 || sx >= n[2]) continue;
                out[static_cast<std::size_t>((z * crop[1] + y) * crop[2] + x)] =
                    src[static_cast<std::size_t>((sz * n[1] + sy) * n[2] + sx)];
            }
        }
    }
    return out;
}

template <class V>
std::vector<V> augment_voxels(const std::vector<V>& src, const Index3& n, const AugmentDraw& draw) {
    const Index3 out_ext = draw.output_extents(n);
    std::vector<V> dst(src.size());
    Index3 p{};
    std::size_t i = 0;
    for (p[0] = 0; p[0] < n[0]; ++p[0])
        for (p[1] = 0; p[1] < n[1]; ++p[1])
            for (p[2] = 0; p[2] < n[2]; ++p[2]) {
                const Index3 q = draw.map(p, n);
                dst[static_cast<std::size_t>((q[0] * out_ext[1] + q[1]) * out_ext[2] + q[2])] = src[i++];
            }
    return dst;
}

Geometry augmented_geometry(const Geometry& g, const AugmentDraw& draw) {
    Geometry out = g;
    out.extents = draw.output_extents(g.extents);
    if (draw.rot_k % 2 == 1) std::swap(out.spacing[draw.rot_axes[0]], out.spacing[draw.rot_axes[1]]);
    return out;
}

} // namespace

Volume reorient_ras(const Volume& v) {
    const AxisMap m = ras_axis_map(v.geometry);
    return Volume{remap_geometry(v.geometry, m), remap_voxels(v.voxels, v.geometry, m), v.subject_id};
}

LabelVolume reorient_ras(const LabelVolume& l) {
    const AxisMap m = ras_axis_map(l.geometry);
    return LabelVolume{remap_geometry(l.geometry, m), remap_voxels(l.voxels, l.geometry, m), l.subject_id};
}

Volume resample(const Volume& v, const Vec3& target_spacing) {
    const auto axes = resample_axes(v.geometry, target_spacing);
    const Index3& n = v.geometry.extents;
    const auto tz = clamped_taps(n[0], axes[0]);
    const auto ty = clamped_taps(n[1], axes[1]);
    const auto tx = clamped_taps(n[2], axes[2]);
    Volume out{resampled_geometry(v.geometry, target_spacing, axes), {}, v.subject_id};
    const Index3& m = out.geometry.extents;
    out.voxels.resize(static_cast<std::size_t>(out.geometry.voxel_count()));
    for (std::int64_t z = 0; z < m[0]; ++z)
        for (std::int64_t y = 0; y < m[1]; ++y)
            for (std::int64_t x = 0; x < m[2]; ++x) {
                auto at = [&](std::int64_t a, std::int64_t b, std::int64_t c) -> double { return v.at(a, b, c); };
                const Tap &a = tz[z], &b = ty[y], &c = tx[x];
                const double c00 = at(a.lo, b.lo, c.lo) * (1 - c.frac) + at(a.lo, b.lo, c.hi) * c.frac;
                const double c01 = at(a.lo, b.hi, c.lo) * (1 - c.frac) + at(a.lo, b.hi, c.hi) * c.frac;
                const double c10 = at(a.hi, b.lo, c.lo) * (1 - c.frac) + at(a.hi, b.lo, c.hi) * c.frac;
                const double c11 = at(a.hi, b.hi, c.lo) * (1 - c.frac) + at(a.hi, b.hi, c.hi) * c.frac;
                const double c0 = c00 * (1 - b.frac) + c01 * b.frac;
                const double c1 = c10 * (1 - b.frac) + c11 * b.frac;
                out.voxels[static_cast<std::size_t>((z * m[1] + y) * m[2] + x)] =
                    static_cast<float>(c0 * (1 - a.frac) + c1 * a.frac);
            }
    return out;
}

LabelVolume resample(const LabelVolume& l, const Vec3& target_spacing) {
    const auto axes = resample_axes(l.geometry, target_spacing);
    const Index3& n = l.geometry.extents;
    LabelVolume out{resampled_geometry(l.geometry, target_spacing, axes), {}, l.subject_id};
    const Index3& m = out.geometry.extents;
    std::array<std::vector<std::int64_t>, 3> nearest;
    for (int a = 0; a < 3; ++a) {
        nearest[a].resize(static_cast<std::size_t>(m[a]));
        for (std::int64_t i = 0; i < m[a]; ++i) {
            const double src = (static_cast<double>(i) + 0.5) * axes[a].ratio;
            nearest[a][i] = std::clamp<std::int64_t>(static_cast<std::int64_t>(std::floor(src)), 0, n[a] - 1);
        }
    }
    out.voxels.resize(static_cast<std::size_t>(out.geometry.voxel_count()));
    for (std::int64_t z = 0; z < m[0]; ++z)
        for (std::int64_t y = 0; y < m[1]; ++y)
            for (std::int64_t x = 0; x < m[2]; ++x) {
                out.voxels[static_cast<std::size_t>((z * m[1] + y) * m[2] + x)] =
                    l.at(nearest[0][z], nearest[1][y], nearest[2][x]);
            }
    return out;
}

Vec3 median_inplane_spacing(const std::vector<Geometry>& geometries) {
    if (geometries.empty()) throw ConfigError("cannot derive a target spacing from an empty dataset");
    std::vector<double> inplane;
    for (const Geometry& g : geometries) {
        const Geometry r = remap_geometry(g, ras_axis_map(g));
        inplane.push_back(r.spacing[1]);
        inplane.push_back(r.spacing[2]);
    }
    std::sort(inplane.begin(), inplane.end());
    const std::size_t n = inplane.size();
    const double m = n % 2 == 1 ? inplane[n / 2] : 0.5 * (inplane[n / 2 - 1] + inplane[n / 2]);
    return {m, m, m};
}

double percentile(std::vector<float> values, double q) {
    if (values.empty()) throw Error("percentile of an empty set");
    std::sort(values.begin(), values.end());
    const double rank = q / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return static_cast<double>(values[lo]) + frac * (static_cast<double>(values[hi]) - static_cast<double>(values[lo]));
}

Normalized normalize(const Volume& v, const PreprocessConfig& cfg) {
    const double lo = percentile(v.voxels, cfg.clip_low_pct);
    const double hi = percentile(v.voxels, cfg.clip_high_pct);
    if (!(hi > lo)) throw Error("normalize: intensities are constant within the clip percentiles");
    Normalized out{v, v};
    const double n = static_cast<double>(v.voxels.size());
    double total = 0;
    for (auto& x : out.unit.voxels) {
        const double c = std::clamp(static_cast<double>(x), lo, hi);
        x = static_cast<float>((c - lo) / (hi - lo));
        total += x;
    }
    const double mu = total / n;
    double var = 0;
    for (float x : out.unit.voxels) var += (x - mu) * (x - mu);
    const double sd = std::sqrt(var / n);
    if (!(sd > 0)) throw Error("normalize: zero standard deviation after clipping");
    for (std::size_t i = 0; i < out.unit.voxels.size(); ++i) {
        out.standardized.voxels[i] = static_cast<float>((out.unit.voxels[i] - mu) / sd);
    }
    return out;
}

std::optional<Vec3> foreground_center(const Volume& src, double threshold) {
    Vec3 acc{0, 0, 0};
    std::int64_t count = 0;
    const Index3& n = src.geometry.extents;
    for (std::int64_t z = 0; z < n[0]; ++z)
        for (std::int64_t y = 0; y < n[1]; ++y)
            for (std::int64_t x = 0; x < n[2]; ++x) {
                if (src.at(z, y, x) > threshold) {
                    acc[0] += static_cast<double>(z);
                    acc[1] += static_cast<double>(y);
                    acc[2] += static_cast<double>(x);
                    ++count;
                }
            }
    if (count == 0) return std::nullopt;
    for (auto& a : acc) a /= static_cast<double>(count);
    return acc;
}

CropResult foreground_crop(const Volume& image, const LabelVolume& label, const PreprocessConfig& cfg,
                           const Volume& foreground_source) {
    const Index3& n = image.geometry.extents;
    if (label.geometry.extents != n || foreground_source.geometry.extents != n) {
        throw ShapeError("foreground_crop: image, label and foreground source extents differ");
    }
    const Index3& crop = cfg.crop_extent;
    CropResult result;
    auto center = foreground_center(foreground_source, cfg.fg_threshold);
    if (!center) {
        result.status = CropStatus::empty_foreground;
        center = Vec3{(n[0] - 1) / 2.0, (n[1] - 1) / 2.0, (n[2] - 1) / 2.0};
    }
    Index3 pad_before{}, shift{};
    for (int a = 0; a < 3; ++a) {
        if (n[a] < crop[a]) {
            pad_before[a] = (crop[a] - n[a]) / 2;
            result.start[a] = 0;
        } else {
            const double s = (*center)[a] - static_cast<double>(crop[a] - 1) / 2.0;
            result.start[a] = std::clamp<std::int64_t>(std::llround(s), 0, n[a] - crop[a]);
        }
        shift[a] = result.start[a] - pad_before[a];
    }
    result.image = Volume{padded_crop_geometry(image.geometry, crop, shift),
                          crop_voxels(image.voxels, n, crop, pad_before, result.start), image.subject_id};
    result.label = LabelVolume{padded_crop_geometry(label.geometry, crop, shift),
                               crop_voxels(label.voxels, n, crop, pad_before, result.start), label.subject_id};
    return result;
}

CropResult foreground_crop(const Volume& image, const LabelVolume& label, const PreprocessConfig& cfg) {
    return foreground_crop(image, label, cfg, image);
}

Index3 AugmentDraw::output_extents(const Index3& in) const {
    Index3 out = in;
    if (rot_k % 2 == 1) std::swap(out[rot_axes[0]], out[rot_axes[1]]);
    return out;
}

Index3 AugmentDraw::map(const Index3& p, const Index3& in) const {
    Index3 q = p;
    for (int a = 0; a < 3; ++a) {
        if (flip[a]) q[a] = in[a] - 1 - q[a];
    }
    Index3 ext = in;
    const int a = rot_axes[0], b = rot_axes[1];
    for (int step = 0; step < rot_k; ++step) {
        const std::int64_t qa = ext[b] - 1 - q[b];
        const std::int64_t qb = q[a];
        q[a] = qa;
        q[b] = qb;
        std::swap(ext[a], ext[b]);
    }
    return q;
}

AugmentDraw draw_augmentation(const PreprocessConfig& cfg, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    AugmentDraw d;
    for (int a = 0; a < 3; ++a) d.flip[a] = unit(rng) < cfg.aug_flip_prob;
    if (unit(rng) < cfg.aug_rot90_prob) {
        d.rot_k = std::uniform_int_distribution<int>(1, 3)(rng);
        static constexpr std::array<std::array<int, 2>, 3> planes{{{0, 1}, {0, 2}, {1, 2}}};
        d.rot_axes = planes[std::uniform_int_distribution<int>(0, 2)(rng)];
    }
    return d;
}

Volume apply_augmentation(const Volume& v, const AugmentDraw& draw) {
    return Volume{augmented_geometry(v.geometry, draw), augment_voxels(v.voxels, v.geometry.extents, draw), v.subject_id};
}

LabelVolume apply_augmentation(const LabelVolume& l, const AugmentDraw& draw) {
    return LabelVolume{augmented_geometry(l.geometry, draw), augment_voxels(l.voxels, l.geometry.extents, draw),
                       l.subject_id};
}

Augmented augment(const Volume& v, const LabelVolume& l, const PreprocessConfig& cfg, std::mt19937_64& rng) {
    if (v.geometry.extents != l.geometry.extents) throw ShapeError("augment: image and label extents differ");
    const AugmentDraw draw = draw_augmentation(cfg, rng);
    return Augmented{apply_augmentation(v, draw), apply_augmentation(l, draw), draw};
}

PreprocessedSubject preprocess_subject(const Volume& image, const LabelVolume& label, const PreprocessConfig& cfg,
                                       const Vec3& target_spacing) {
    cfg.validate();
    const Volume ras = resample(reorient_ras(image), target_spacing);
    const LabelVolume ras_label = resample(reorient_ras(label), target_spacing);
    if (ras.geometry.extents != ras_label.geometry.extents) {
        throw ShapeError("preprocess: image and label grids differ for subject " + image.subject_id);
    }
    const Normalized norm = normalize(ras, cfg);
    CropResult crop = foreground_crop(norm.standardized, ras_label, cfg, norm.unit);
    return PreprocessedSubject{std::move(crop.image), std::move(crop.label), crop.status};
}

} // namespace voxbox
