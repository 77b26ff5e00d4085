#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "voxbox/io.hpp"
#include "voxbox/partition.hpp"
#include "voxbox/tensor.hpp"

namespace voxbox {

enum class EncoderBackend { toy, imported };

/// Token grid handed to the decoder. `native`: the encoder's own G x G grid
/// (G = S/p) whatever the slice size. `input`: that grid bilinearly resampled
/// to (h/p, w/p) of the encoded slice, so feature extents follow the input.
enum class TokenGrid { native, input };

struct EncoderConfig {
    EncoderBackend backend = EncoderBackend::toy;
    /// Slices are resized to native_size x native_size before encoding.
    std::int64_t native_size = 224;
    std::int64_t patch_size = 16;
    std::int64_t d_emb = 768;
    /// 1-based transformer block indices whose outputs are tapped.
    std::array<int, 4> tap_layers{3, 6, 9, 12};
    /// Depth the learnable embedding table is laid out for.
    std::int64_t design_depth = 128;
    TokenGrid token_grid = TokenGrid::input;

    // toy backend
    int toy_heads = 4;
    std::int64_t toy_mlp_ratio = 2;
    bool toy_positional = true;
    std::uint64_t toy_seed = 7;

    // imported backend: <feature_dir>/<subject>.vxf
    std::filesystem::path feature_dir;

    std::int64_t grid() const { return native_size / patch_size; }
    /// Token grid (rows, cols) for an h x w slice under `token_grid`.
    std::array<std::int64_t, 2> token_grid_for(std::int64_t h, std::int64_t w) const;
    void validate() const;

    /// Small toy geometry: S=32, p=4, d_emb=64, taps after blocks 1..4.
    static EncoderConfig toy(std::int64_t d_emb = 64);
};

/// Tapped token grids for one slice: four (d_emb, gh, gw) row-major blocks.
struct SliceFeatures {
    std::int64_t d_emb = 0, gh = 0, gw = 0;
    std::array<std::vector<float>, 4> taps;
};

/// Where a slice sits inside the subject volume.
struct SliceLocation {
    std::string subject_id;
    /// Absolute depth index of the slice.
    std::int64_t z = 0;
    /// In-plane window covered by the slice.
    std::int64_t y0 = 0, x0 = 0, h = 0, w = 0;
    Index3 volume_extents{};
};

/// Frozen 2-D encoder. Implementations are stateless from the caller's
/// point of view and never record on the tape.
class FrozenEncoder {
public:
    explicit FrozenEncoder(EncoderConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }
    virtual ~FrozenEncoder() = default;

    const EncoderConfig& config() const noexcept { return cfg_; }

    virtual SliceFeatures encode_slice(std::span<const float> slice, std::int64_t h, std::int64_t w,
                                       const SliceLocation& where) const = 0;
    virtual std::string tag() const = 0;

protected:
    EncoderConfig cfg_;
};

/// Deterministic miniature ViT with seeded weights: patch embedding, fixed
/// sinusoidal positions, class token, pre-norm attention/MLP blocks.
class ToyVitEncoder final : public FrozenEncoder {
public:
    explicit ToyVitEncoder(EncoderConfig cfg);

    SliceFeatures encode_slice(std::span<const float> slice, std::int64_t h, std::int64_t w,
                               const SliceLocation& where) const override;
    std::string tag() const override;

    /// Patch tokens (G*G, d_emb) of an S x S single-channel image after the
    /// linear embedding (and positions, if enabled).
    std::vector<double> embed_patches(std::span<const double> image) const;

    /// Linear patch-embedding weights, (3*p*p, d_emb), and bias.
    const std::vector<double>& patch_weight() const noexcept { return patch_w_; }
    const std::vector<double>& patch_bias() const noexcept { return patch_b_; }

private:
    struct Block {
        std::vector<double> qkv, proj, fc1, fc1_b, fc2, fc2_b;
    };
    void run_block(const Block& b, std::vector<double>& tokens, std::size_t count) const;

    std::vector<double> patch_w_, patch_b_, pos_, cls_;
    std::vector<Block> blocks_;
};

/// Serves slice features cropped from per-subject VXF1 files that were
/// exported for whole slices at full-volume depth. Under TokenGrid::input the
/// stored grid is first resampled to (H/p, W/p) of the full volume.
class ImportedFeatureEncoder final : public FrozenEncoder {
public:
    explicit ImportedFeatureEncoder(EncoderConfig cfg);

    SliceFeatures encode_slice(std::span<const float> slice, std::int64_t h, std::int64_t w,
                               const SliceLocation& where) const override;
    std::string tag() const override;

private:
    std::shared_ptr<const FeatureFile> load(const std::string& subject) const;

    mutable std::mutex mutex_;
    mutable std::map<std::string, std::shared_ptr<const FeatureFile>> cache_;
};

std::shared_ptr<const FrozenEncoder> make_encoder(const EncoderConfig& cfg);

/// Four boxed feature volumes F_1..F_4, each (1, d_emb, d, gh, gw).
struct FeaturePyramid {
    std::array<Tensor, 4> levels;
    /// (d,h,w) of the sub-volume the features came from.
    Index3 source_extents{};

    void validate() const;
};

/// Position of a sub-cube inside its subject volume.
struct CubeContext {
    std::string subject_id;
    Index3 offset{};
    Index3 volume_extents{};
};

/// Splits a (1,1,d,h,w) tensor into d axial slices of h*w values.
std::vector<std::vector<float>> unbox(const Tensor& x);

/// Stacks per-slice features along depth.
FeaturePyramid box(const std::vector<SliceFeatures>& slices, const Index3& source_extents, DType dtype);

/// unbox -> encode every slice -> resample to the configured token grid ->
/// box. Runs with the tape suspended.
FeaturePyramid encode_subvolume(const FrozenEncoder& encoder, const Tensor& x, const CubeContext& ctx, DType dtype);

/// Adds the (d_emb, design_depth) table, linearly resampled along depth to the
/// pyramid's depth and broadcast in-plane, to every level. Disabled returns
/// the input unchanged.
FeaturePyramid add_depth_embedding(const FeaturePyramid& pyramid, const Tensor& table, bool enabled);

/// FeaturePyramid <-> VXF1 conversion (payload stored as f32).
FeatureFile to_feature_file(const FeaturePyramid& pyramid, const std::string& subject_id, const std::string& tag);
FeaturePyramid from_feature_file(const FeatureFile& file, DType dtype);

} // namespace voxbox
