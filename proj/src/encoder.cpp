#include "voxbox/encoder.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "voxbox/nn.hpp"
#include "voxbox/ops.hpp"
#include "voxbox/tape.hpp"

namespace voxbox {

void EncoderConfig::validate() const {
    if (native_size <= 0 || patch_size <= 0 || native_size % patch_size != 0) {
        throw ConfigError("encoder native size must be a positive multiple of the patch size");
    }
    if (d_emb <= 0) throw ConfigError("encoder d_emb must be positive");
    for (std::size_t i = 0; i < tap_layers.size(); ++i) {
        if (tap_layers[i] < 1 || (i > 0 && tap_layers[i] <= tap_layers[i - 1])) {
            throw ConfigError("encoder tap layers must be four strictly increasing indices >= 1");
        }
    }
    if (design_depth <= 0) throw ConfigError("design depth must be positive");
    if (backend == EncoderBackend::toy && (toy_heads <= 0 || d_emb % toy_heads != 0)) {
        throw ConfigError("toy encoder d_emb must be divisible by its head count");
    }
}

std::array<std::int64_t, 2> EncoderConfig::token_grid_for(std::int64_t h, std::int64_t w) const {
    if (token_grid == TokenGrid::native) return {grid(), grid()};
    if (h % patch_size != 0 || w % patch_size != 0) {
        throw ShapeError("slice " + std::to_string(h) + "x" + std::to_string(w) + " is not a multiple of patch size " +
                         std::to_string(patch_size));
    }
    return {h / patch_size, w / patch_size};
}

EncoderConfig EncoderConfig::toy(std::int64_t d_emb) {
    EncoderConfig cfg;
    cfg.backend = EncoderBackend::toy;
    cfg.native_size = 32;
    cfg.patch_size = 4;
    cfg.d_emb = d_emb;
    cfg.tap_layers = {1, 2, 3, 4};
    cfg.toy_heads = d_emb % 4 == 0 ? 4 : 1;
    return cfg;
}

// ------------------------------------------------------------------ toy ViT

namespace {

std::vector<double> normal_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(rows)));
    std::vector<double> m(rows * cols);
    for (auto& v : m) v = dist(rng);
    return m;
}

// 2-D sinusoidal table, (g*g, d): first half of channels encodes the row,
// second half the column.
std::vector<double> sinusoidal_positions(std::int64_t g, std::int64_t d) {
    std::vector<double> pos(static_cast<std::size_t>(g * g * d), 0.0);
    const std::int64_t half = d / 2;
    for (std::int64_t r = 0; r < g; ++r)
        for (std::int64_t c = 0; c < g; ++c) {
            double* row = pos.data() + (r * g + c) * d;
            for (std::int64_t i = 0; i < d; ++i) {
                const bool col_part = i >= half;
                const std::int64_t j = col_part ? i - half : i;
                const std::int64_t width = col_part ? d - half : half;
                const double freq = std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / static_cast<double>(std::max<std::int64_t>(width, 1)));
                const double p = static_cast<double>(col_part ? c : r) * freq;
                row[i] = j % 2 == 0 ? std::sin(p) : std::cos(p);
            }
        }
    return pos;
}

} // namespace

ToyVitEncoder::ToyVitEncoder(EncoderConfig cfg) : FrozenEncoder(std::move(cfg)) {
    const auto d = static_cast<std::size_t>(cfg_.d_emb);
    const auto p = static_cast<std::size_t>(cfg_.patch_size);
    const auto hidden = d * static_cast<std::size_t>(cfg_.toy_mlp_ratio);
    std::mt19937_64 rng(cfg_.toy_seed);
    patch_w_ = normal_matrix(3 * p * p, d, rng);
    patch_b_ = normal_matrix(1, d, rng);
    for (auto& v : patch_b_) v *= 0.1;
    cls_ = normal_matrix(1, d, rng);
    if (cfg_.toy_positional) pos_ = sinusoidal_positions(cfg_.grid(), cfg_.d_emb);
    blocks_.resize(static_cast<std::size_t>(cfg_.tap_layers.back()));
    for (auto& b : blocks_) {
        b.qkv = normal_matrix(d, 3 * d, rng);
        b.proj = normal_matrix(d, d, rng);
        b.fc1 = normal_matrix(d, hidden, rng);
        b.fc1_b = std::vector<double>(hidden, 0.0);
        b.fc2 = normal_matrix(hidden, d, rng);
        b.fc2_b = std::vector<double>(d, 0.0);
    }
}

std::string ToyVitEncoder::tag() const {
    std::ostringstream os;
    os << "toy-vit;S=" << cfg_.native_size << ";p=" << cfg_.patch_size << ";d=" << cfg_.d_emb
       << ";blocks=" << blocks_.size() << ";seed=" << cfg_.toy_seed << ";pos=" << (cfg_.toy_positional ? 1 : 0);
    return os.str();
}

std::vector<double> ToyVitEncoder::embed_patches(std::span<const double> image) const {
    const std::int64_t S = cfg_.native_size, p = cfg_.patch_size, g = cfg_.grid(), d = cfg_.d_emb;
    if (static_cast<std::int64_t>(image.size()) != S * S) throw ShapeError("embed_patches: image must be S x S");
    const std::size_t in = static_cast<std::size_t>(3 * p * p);
    std::vector<double> patches(static_cast<std::size_t>(g * g) * in);
    for (std::int64_t gr = 0; gr < g; ++gr)
        for (std::int64_t gc = 0; gc < g; ++gc) {
            double* v = patches.data() + (gr * g + gc) * in;
            // grayscale replicated to three channels, channel-major
            for (std::int64_t ch = 0; ch < 3; ++ch)
                for (std::int64_t py = 0; py < p; ++py)
                    for (std::int64_t px = 0; px < p; ++px) {
                        v[(ch * p + py) * p + px] = image[(gr * p + py) * S + gc * p + px];
                    }
        }
    auto tokens = frozen::matmul(patches, patch_w_, static_cast<std::size_t>(g * g), in, static_cast<std::size_t>(d));
    for (std::int64_t t = 0; t < g * g; ++t)
        for (std::int64_t i = 0; i < d; ++i) {
            tokens[t * d + i] += patch_b_[i];
            if (!pos_.empty()) tokens[t * d + i] += pos_[t * d + i];
        }
    return tokens;
}

void ToyVitEncoder::run_block(const Block& b, std::vector<double>& x, std::size_t count) const {
    const auto d = static_cast<std::size_t>(cfg_.d_emb);
    const auto heads = static_cast<std::size_t>(cfg_.toy_heads);
    const std::size_t dh = d / heads;
    const auto hidden = b.fc1_b.size();

    std::vector<double> h = x;
    frozen::layernorm(h, d);
    const auto qkv = frozen::matmul(h, b.qkv, count, d, 3 * d);
    std::vector<double> attn(count * d, 0.0), scores(count * count);
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t head = 0; head < heads; ++head) {
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t j = 0; j < count; ++j) {
                double s = 0;
                for (std::size_t k = 0; k < dh; ++k) s += qkv[i * 3 * d + head * dh + k] * qkv[j * 3 * d + d + head * dh + k];
                scores[i * count + j] = s * inv;
            }
        frozen::softmax(scores, count);
        for (std::size_t i = 0; i < count; ++i)
            for (std::size_t j = 0; j < count; ++j) {
                const double a = scores[i * count + j];
                for (std::size_t k = 0; k < dh; ++k) attn[i * d + head * dh + k] += a * qkv[j * 3 * d + 2 * d + head * dh + k];
            }
    }
    const auto projected = frozen::matmul(attn, b.proj, count, d, d);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += projected[i];

    h = x;
    frozen::layernorm(h, d);
    auto mid = frozen::matmul(h, b.fc1, count, d, hidden);
    for (std::size_t t = 0; t < count; ++t)
        for (std::size_t k = 0; k < hidden; ++k) mid[t * hidden + k] += b.fc1_b[k];
    frozen::gelu(mid);
    const auto out = frozen::matmul(mid, b.fc2, count, hidden, d);
    for (std::size_t t = 0; t < count; ++t)
        for (std::size_t k = 0; k < d; ++k) x[t * d + k] += out[t * d + k] + b.fc2_b[k];
}

SliceFeatures ToyVitEncoder::encode_slice(std::span<const float> slice, std::int64_t h, std::int64_t w,
                                          const SliceLocation&) const {
    if (static_cast<std::int64_t>(slice.size()) != h * w) throw ShapeError("encode_slice: slice size mismatch");
    const std::int64_t S = cfg_.native_size, g = cfg_.grid(), d = cfg_.d_emb;
    std::vector<double> pixels(slice.begin(), slice.end());
    const auto resized = frozen::resize_bilinear(pixels, h, w, S, S);
    const auto patch_tokens = embed_patches(resized);

    const std::size_t count = static_cast<std::size_t>(g * g + 1);
    std::vector<double> tokens(count * static_cast<std::size_t>(d));
    std::copy(cls_.begin(), cls_.end(), tokens.begin());
    std::copy(patch_tokens.begin(), patch_tokens.end(), tokens.begin() + d);

    SliceFeatures out;
    out.d_emb = d;
    out.gh = out.gw = g;
    std::size_t next_tap = 0;
    for (std::size_t layer = 1; layer <= blocks_.size(); ++layer) {
        run_block(blocks_[layer - 1], tokens, count);
        if (next_tap < 4 && static_cast<std::size_t>(cfg_.tap_layers[next_tap]) == layer) {
            auto& grid = out.taps[next_tap++];
            grid.resize(static_cast<std::size_t>(d * g * g));
            // drop the class token; (tokens, d) -> (d, g, g)
            for (std::int64_t t = 0; t < g * g; ++t)
                for (std::int64_t c = 0; c < d; ++c) grid[c * g * g + t] = static_cast<float>(tokens[(t + 1) * d + c]);
        }
    }
    return out;
}

// ------------------------------------------------------------- imported

ImportedFeatureEncoder::ImportedFeatureEncoder(EncoderConfig cfg) : FrozenEncoder(std::move(cfg)) {}

std::string ImportedFeatureEncoder::tag() const { return "imported:" + cfg_.feature_dir.string(); }

std::shared_ptr<const FeatureFile> ImportedFeatureEncoder::load(const std::string& subject) const {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(subject); it != cache_.end()) return it->second;
    const auto path = cfg_.feature_dir / (subject + ".vxf");
    if (!std::filesystem::exists(path)) {
        throw IoError("imported encoder has no features for subject '" + subject + "' (looked for " + path.string() + ")");
    }
    auto file = std::make_shared<const FeatureFile>(read_feature_file(path));
    if (file->levels.front().extents[0] != cfg_.d_emb) {
        throw ConfigError("feature file for '" + subject + "' has d_emb " + std::to_string(file->levels.front().extents[0]) +
                          ", config expects " + std::to_string(cfg_.d_emb));
    }
    cache_.emplace(subject, file);
    return file;
}

SliceFeatures ImportedFeatureEncoder::encode_slice(std::span<const float>, std::int64_t, std::int64_t,
                                                   const SliceLocation& where) const {
    const auto file = load(where.subject_id);
    const auto [d, depth, stored_h, stored_w] = file->levels.front().extents;
    const Index3& v = where.volume_extents;
    std::int64_t gh = stored_h, gw = stored_w;
    if (cfg_.token_grid == TokenGrid::input) {
        const auto g = cfg_.token_grid_for(v[1], v[2]);
        gh = g[0];
        gw = g[1];
    }
    if (depth != v[0]) {
        throw ShapeError("feature file for '" + where.subject_id + "' covers depth " + std::to_string(depth) +
                         ", volume depth is " + std::to_string(v[0]));
    }
    if (where.z < 0 || where.z >= depth) throw ShapeError("slice depth index outside the feature file");
    auto exact = [](std::int64_t a, std::int64_t g, std::int64_t n) {
        if ((a * g) % n != 0) throw ShapeError("sub-cube window does not align with the feature grid");
        return a * g / n;
    };
    const std::int64_t gy0 = exact(where.y0, gh, v[1]), gx0 = exact(where.x0, gw, v[2]);
    const std::int64_t ny = exact(where.h, gh, v[1]), nx = exact(where.w, gw, v[2]);

    SliceFeatures out;
    out.d_emb = d;
    out.gh = ny;
    out.gw = nx;
    for (std::size_t k = 0; k < 4; ++k) {
        const auto& stored = file->levels[k].payload;
        std::vector<float> resampled;
        if (gh != stored_h || gw != stored_w) {
            resampled.resize(static_cast<std::size_t>(d * gh * gw));
            const std::size_t plane = static_cast<std::size_t>(stored_h * stored_w);
            for (std::int64_t c = 0; c < d; ++c) {
                const auto first = stored.begin() + static_cast<std::ptrdiff_t>((c * depth + where.z) * plane);
                const std::vector<double> grid(first, first + static_cast<std::ptrdiff_t>(plane));
                const auto r = frozen::resize_bilinear(grid, stored_h, stored_w, gh, gw);
                std::copy(r.begin(), r.end(), resampled.begin() + c * gh * gw);
            }
        }
        auto& dst = out.taps[k];
        dst.resize(static_cast<std::size_t>(d * ny * nx));
        for (std::int64_t c = 0; c < d; ++c)
            for (std::int64_t y = 0; y < ny; ++y)
                for (std::int64_t x = 0; x < nx; ++x) {
                    dst[(c * ny + y) * nx + x] = resampled.empty()
                                                     ? stored[((c * depth + where.z) * gh + gy0 + y) * gw + gx0 + x]
                                                     : resampled[(c * gh + gy0 + y) * gw + gx0 + x];
                }
    }
    return out;
}

std::shared_ptr<const FrozenEncoder> make_encoder(const EncoderConfig& cfg) {
    if (cfg.backend == EncoderBackend::imported) return std::make_shared<ImportedFeatureEncoder>(cfg);
    return std::make_shared<ToyVitEncoder>(cfg);
}

// -------------------------------------------------------------- boxing

void FeaturePyramid::validate() const {
    for (const auto& l : levels) {
        if (!l.defined() || l.rank() != 5 || l.dim(0) != 1) throw ShapeError("feature pyramid levels must be (1,C,d,gh,gw)");
        if (l.shape() != levels[0].shape()) {
            throw ShapeError("feature pyramid levels disagree: " + shape_string(l.shape()) + " vs " +
                             shape_string(levels[0].shape()));
        }
    }
    if (levels[0].dim(2) != source_extents[0]) throw ShapeError("feature pyramid depth differs from its source depth");
}

std::vector<std::vector<float>> unbox(const Tensor& x) {
    if (x.rank() != 5 || x.dim(0) != 1 || x.dim(1) != 1) {
        throw ShapeError("unbox expects a (1,1,d,h,w) sub-volume, got " + shape_string(x.shape()));
    }
    const std::int64_t d = x.dim(2), plane = x.dim(3) * x.dim(4);
    const auto values = x.to_vector();
    std::vector<std::vector<float>> slices(static_cast<std::size_t>(d));
    for (std::int64_t i = 0; i < d; ++i) {
        slices[i].assign(values.begin() + i * plane, values.begin() + (i + 1) * plane);
    }
    return slices;
}

FeaturePyramid box(const std::vector<SliceFeatures>& slices, const Index3& source_extents, DType dtype) {
    if (slices.empty()) throw ShapeError("box: no slices");
    const auto& f = slices.front();
    for (const auto& s : slices) {
        if (s.d_emb != f.d_emb || s.gh != f.gh || s.gw != f.gw) throw ShapeError("box: inconsistent slice feature shapes");
        for (const auto& t : s.taps) {
            if (static_cast<std::int64_t>(t.size()) != s.d_emb * s.gh * s.gw) throw ShapeError("box: malformed token grid");
        }
    }
    const std::int64_t d = static_cast<std::int64_t>(slices.size()), plane = f.gh * f.gw;
    FeaturePyramid pyr;
    pyr.source_extents = source_extents;
    for (std::size_t k = 0; k < 4; ++k) {
        Tensor level = Tensor::zeros({1, f.d_emb, d, f.gh, f.gw}, dtype);
        dispatch(dtype, [&](auto tag) {
            using T = decltype(tag);
            auto out = level.mutable_data<T>();
            for (std::int64_t i = 0; i < d; ++i) {
                const auto& grid = slices[i].taps[k];
                for (std::int64_t c = 0; c < f.d_emb; ++c)
                    for (std::int64_t p = 0; p < plane; ++p) out[(c * d + i) * plane + p] = static_cast<T>(grid[c * plane + p]);
            }
        });
        pyr.levels[k] = std::move(level);
    }
    return pyr;
}

FeaturePyramid encode_subvolume(const FrozenEncoder& encoder, const Tensor& x, const CubeContext& ctx, DType dtype) {
    NoGradGuard frozen_encoder;
    const auto slices = unbox(x);
    const std::int64_t h = x.dim(3), w = x.dim(4);
    std::vector<SliceFeatures> features;
    features.reserve(slices.size());
    for (std::size_t i = 0; i < slices.size(); ++i) {
        SliceLocation where{ctx.subject_id, ctx.offset[0] + static_cast<std::int64_t>(i), ctx.offset[1], ctx.offset[2], h, w,
                            ctx.volume_extents};
        features.push_back(encoder.encode_slice(slices[i], h, w, where));
    }
    const auto [th, tw] = encoder.config().token_grid_for(h, w);
    for (auto& f : features) {
        if (f.gh == th && f.gw == tw) continue;
        for (auto& tap : f.taps) {
            std::vector<float> out(static_cast<std::size_t>(f.d_emb * th * tw));
            const std::size_t plane = static_cast<std::size_t>(f.gh * f.gw);
            for (std::int64_t c = 0; c < f.d_emb; ++c) {
                const std::vector<double> grid(tap.begin() + c * plane, tap.begin() + (c + 1) * plane);
                const auto r = frozen::resize_bilinear(grid, f.gh, f.gw, th, tw);
                std::copy(r.begin(), r.end(), out.begin() + c * th * tw);
            }
            tap = std::move(out);
        }
        f.gh = th;
        f.gw = tw;
    }
    return box(features, {x.dim(2), h, w}, dtype);
}

FeaturePyramid add_depth_embedding(const FeaturePyramid& pyramid, const Tensor& table, bool enabled) {
    if (!enabled) return pyramid;
    pyramid.validate();
    const std::int64_t c = pyramid.levels[0].dim(1), d = pyramid.levels[0].dim(2);
    if (table.rank() != 2 || table.dim(0) != c) {
        throw ShapeError("depth embedding table " + shape_string(table.shape()) + " does not match " +
                         std::to_string(c) + " feature channels");
    }
    const Tensor as_volume = reshape(table, {1, c, table.dim(1), 1, 1});
    const Tensor resized = interp_trilinear(as_volume, {d, 1, 1});
    FeaturePyramid out = pyramid;
    for (auto& level : out.levels) level = add(level, resized);
    return out;
}

FeatureFile to_feature_file(const FeaturePyramid& pyramid, const std::string& subject_id, const std::string& tag) {
    pyramid.validate();
    FeatureFile f{subject_id, {}, tag};
    for (const auto& l : pyramid.levels) {
        FeatureLevel level;
        level.extents = {l.dim(1), l.dim(2), l.dim(3), l.dim(4)};
        const auto v = l.to_vector();
        level.payload.assign(v.begin(), v.end());
        f.levels.push_back(std::move(level));
    }
    return f;
}

FeaturePyramid from_feature_file(const FeatureFile& file, DType dtype) {
    if (file.levels.size() != 4) throw ShapeError("feature file must carry four levels");
    FeaturePyramid pyr;
    for (std::size_t k = 0; k < 4; ++k) {
        const auto& e = file.levels[k].extents;
        std::vector<double> values(file.levels[k].payload.begin(), file.levels[k].payload.end());
        pyr.levels[k] = Tensor::from_values({1, e[0], e[1], e[2], e[3]}, values, dtype);
    }
    pyr.source_extents = {file.levels[0].extents[1], file.levels[0].extents[2], file.levels[0].extents[3]};
    return pyr;
}

} // namespace voxbox
