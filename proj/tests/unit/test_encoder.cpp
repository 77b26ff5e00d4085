#include <gtest/gtest.h>

#include "testing.hpp"
#include "voxbox/encoder.hpp"

namespace voxbox {
namespace {

using testing::random_tensor;

EncoderConfig small_toy(bool positional = true) {
    EncoderConfig cfg = EncoderConfig::toy(8);
    cfg.native_size = 16;
    cfg.toy_heads = 2;
    cfg.design_depth = 8;
    cfg.toy_positional = positional;
    return cfg;
}

TEST(Boxing, UnboxSplitsAxialSlicesInOrder) {
    std::mt19937_64 rng(1);
    const Tensor x = random_tensor({1, 1, 3, 2, 4}, rng, DType::f32);
    const auto slices = unbox(x);
    ASSERT_EQ(slices.size(), 3u);
    const auto v = x.data<float>();
    for (std::size_t z = 0; z < 3; ++z)
        for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(slices[z][i], v[z * 8 + i]);
    EXPECT_EQ(unbox(Tensor::zeros({1, 1, 1, 2, 2})).size(), 1u);
    EXPECT_THROW(unbox(Tensor::zeros({1, 2, 3, 2, 2})), ShapeError);
}

TEST(Boxing, BoxStacksEverySliceAtItsDepth) {
    std::vector<SliceFeatures> slices(3);
    for (std::size_t z = 0; z < 3; ++z) {
        slices[z].d_emb = 2;
        slices[z].gh = 1;
        slices[z].gw = 2;
        for (std::size_t k = 0; k < 4; ++k) {
            for (int i = 0; i < 4; ++i) slices[z].taps[k].push_back(static_cast<float>(100 * k + 10 * z + i));
        }
    }
    const FeaturePyramid pyr = box(slices, {3, 4, 8}, DType::f64);
    for (std::size_t k = 0; k < 4; ++k) {
        ASSERT_EQ(pyr.levels[k].shape(), (Shape{1, 2, 3, 1, 2}));
        const auto v = pyr.levels[k].to_vector();
        // (c, z, x) -> slice z, channel c, column x
        for (int c = 0; c < 2; ++c)
            for (int z = 0; z < 3; ++z)
                for (int xx = 0; xx < 2; ++xx) EXPECT_EQ(v[(c * 3 + z) * 2 + xx], 100.0 * k + 10 * z + c * 2 + xx);
    }
    slices[1].gw = 3;
    EXPECT_THROW(box(slices, {3, 4, 8}, DType::f32), ShapeError);
}

TEST(ToyEncoder, PatchEmbeddingMatchesHandProjection) {
    const ToyVitEncoder enc(small_toy(false));
    const auto& cfg = enc.config();
    const std::int64_t S = cfg.native_size, p = cfg.patch_size, g = cfg.grid(), d = cfg.d_emb;
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> image(static_cast<std::size_t>(S * S));
    for (auto& v : image) v = u(rng);
    const auto tokens = enc.embed_patches(image);
    ASSERT_EQ(tokens.size(), static_cast<std::size_t>(g * g * d));
    const auto& W = enc.patch_weight();
    const auto& b = enc.patch_bias();
    // token (r,c) = sum over channel copies and pixels of pixel * W[row] + b
    for (std::int64_t r = 0; r < g; ++r)
        for (std::int64_t c = 0; c < g; ++c)
            for (std::int64_t o = 0; o < d; ++o) {
                double acc = b[o];
                for (std::int64_t ch = 0; ch < 3; ++ch)
                    for (std::int64_t y = 0; y < p; ++y)
                        for (std::int64_t x = 0; x < p; ++x)
                            acc += image[(r * p + y) * S + c * p + x] * W[((ch * p + y) * p + x) * d + o];
                EXPECT_NEAR(tokens[(r * g + c) * d + o], acc, 1e-12);
            }
}

TEST(ToyEncoder, ConstantSliceWithoutPositionsGivesSpatiallyConstantTaps) {
    const ToyVitEncoder enc(small_toy(false));
    const std::vector<float> slice(16 * 16, 0.7f);
    const auto f = enc.encode_slice(slice, 16, 16, {});
    const std::int64_t plane = f.gh * f.gw;
    for (const auto& tap : f.taps)
        for (std::int64_t c = 0; c < f.d_emb; ++c)
            for (std::int64_t i = 1; i < plane; ++i) EXPECT_NEAR(tap[c * plane + i], tap[c * plane], 1e-5);
}

TEST(ToyEncoder, SliceShapesAndDeterminism) {
    const EncoderConfig cfg = small_toy();
    const ToyVitEncoder a(cfg), b(cfg);
    std::mt19937_64 rng(3);
    const Tensor s = random_tensor({12 * 20}, rng, DType::f32);
    const auto fa = a.encode_slice(s.data<float>(), 12, 20, {});
    const auto fb = b.encode_slice(s.data<float>(), 12, 20, {});
    EXPECT_EQ(fa.d_emb, 8);
    EXPECT_EQ(fa.gh, cfg.grid());
    EXPECT_EQ(fa.gw, cfg.grid());
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_EQ(fa.taps[k].size(), static_cast<std::size_t>(8 * cfg.grid() * cfg.grid()));
        EXPECT_EQ(fa.taps[k], fb.taps[k]);
    }
    EncoderConfig other = cfg;
    other.toy_seed += 1;
    EXPECT_NE(ToyVitEncoder(other).encode_slice(s.data<float>(), 12, 20, {}).taps[3], fa.taps[3]);
    EXPECT_THROW(a.encode_slice(s.data<float>(), 12, 21, {}), ShapeError);
}

TEST(ToyEncoder, SlicesAreEncodedIndependently) {
    const auto enc = make_encoder(small_toy());
    std::mt19937_64 rng(4);
    const Tensor x = random_tensor({1, 1, 4, 8, 8}, rng, DType::f32);
    const FeaturePyramid pyr = encode_subvolume(*enc, x, {}, DType::f64);
    // reversing the slices reverses the feature depth axis and nothing else
    std::vector<double> rev(static_cast<std::size_t>(x.numel()));
    const auto xv = x.to_vector();
    for (int z = 0; z < 4; ++z)
        for (int i = 0; i < 64; ++i) rev[(3 - z) * 64 + i] = xv[z * 64 + i];
    const FeaturePyramid flipped = encode_subvolume(*enc, Tensor::from_values(x.shape(), rev, DType::f32), {}, DType::f64);
    for (std::size_t k = 0; k < 4; ++k) {
        ASSERT_EQ(pyr.levels[k].shape(), (Shape{1, 8, 4, 2, 2}));
        const auto a = pyr.levels[k].to_vector(), b = flipped.levels[k].to_vector();
        for (int c = 0; c < 8; ++c)
            for (int z = 0; z < 4; ++z)
                for (int i = 0; i < 4; ++i) EXPECT_EQ(a[(c * 4 + z) * 4 + i], b[(c * 4 + 3 - z) * 4 + i]);
    }
}

TEST(ToyEncoder, TokenGridPolicies) {
    EncoderConfig cfg = small_toy();
    std::mt19937_64 rng(5);
    const Tensor x = random_tensor({1, 1, 2, 8, 12}, rng, DType::f32);
    cfg.token_grid = TokenGrid::input;
    const auto in = encode_subvolume(*make_encoder(cfg), x, {}, DType::f32);
    EXPECT_EQ(in.levels[0].shape(), (Shape{1, 8, 2, 2, 3}));
    cfg.token_grid = TokenGrid::native;
    const auto nat = encode_subvolume(*make_encoder(cfg), x, {}, DType::f32);
    EXPECT_EQ(nat.levels[0].shape(), (Shape{1, 8, 2, 4, 4}));
    EXPECT_EQ(nat.source_extents, (Index3{2, 8, 12}));
    cfg.token_grid = TokenGrid::input;
    EXPECT_THROW(cfg.token_grid_for(8, 10), ShapeError);
}

TEST(ToyEncoder, NeverRecordsOnTheTape) {
    Tape::current().clear();
    std::mt19937_64 rng(6);
    Tensor x = testing::trainable(random_tensor({1, 1, 2, 8, 8}, rng, DType::f32));
    const auto pyr = encode_subvolume(*make_encoder(small_toy()), x, {}, DType::f32);
    EXPECT_EQ(Tape::current().size(), 0u);
    EXPECT_TRUE(Tape::current().recording());
    for (const auto& l : pyr.levels) EXPECT_FALSE(l.requires_grad());
}

TEST(EncoderConfig, ValidationRejectsBadGeometry) {
    EncoderConfig cfg = small_toy();
    cfg.patch_size = 5;
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = small_toy();
    cfg.tap_layers = {1, 3, 3, 4};
    EXPECT_THROW(cfg.validate(), ConfigError);
    cfg = small_toy();
    cfg.toy_heads = 3;
    EXPECT_THROW(ToyVitEncoder{cfg}, ConfigError);
}

FeaturePyramid ramp_pyramid(std::int64_t c, std::int64_t d, std::int64_t gh, std::int64_t gw, DType dtype) {
    FeaturePyramid pyr;
    for (std::size_t k = 0; k < 4; ++k) {
        std::vector<double> v(static_cast<std::size_t>(c * d * gh * gw));
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(1000 * k + i);
        pyr.levels[k] = Tensor::from_values({1, c, d, gh, gw}, v, dtype);
    }
    pyr.source_extents = {d, gh * 4, gw * 4};
    return pyr;
}

TEST(DepthEmbedding, AddsTheTableRowAtDesignDepth) {
    std::mt19937_64 rng(7);
    const FeaturePyramid pyr = ramp_pyramid(3, 5, 2, 2, DType::f64);
    const Tensor table = random_tensor({3, 5}, rng);
    const auto out = add_depth_embedding(pyr, table, true);
    const auto t = table.to_vector();
    for (std::size_t k = 0; k < 4; ++k) {
        const auto a = pyr.levels[k].to_vector(), b = out.levels[k].to_vector();
        for (int c = 0; c < 3; ++c)
            for (int z = 0; z < 5; ++z)
                for (int i = 0; i < 4; ++i) EXPECT_EQ(b[(c * 5 + z) * 4 + i], a[(c * 5 + z) * 4 + i] + t[c * 5 + z]);
    }
}

TEST(DepthEmbedding, ResamplesLinearlyToOtherDepths) {
    // a table linear in depth stays linear after align_corners=false resampling
    const FeaturePyramid pyr = ramp_pyramid(1, 2, 1, 1, DType::f64);
    const Tensor table = Tensor::from_values({1, 4}, {0.0, 1.0, 2.0, 3.0}, DType::f64);
    const auto out = add_depth_embedding(pyr, table, true);
    const auto a = pyr.levels[0].to_vector(), b = out.levels[0].to_vector();
    EXPECT_DOUBLE_EQ(b[0] - a[0], 0.5);
    EXPECT_DOUBLE_EQ(b[1] - a[1], 2.5);
}

TEST(DepthEmbedding, DisabledOrZeroTableIsIdentity) {
    const FeaturePyramid pyr = ramp_pyramid(2, 3, 2, 1, DType::f32);
    const auto off = add_depth_embedding(pyr, Tensor{}, false);
    const auto zero = add_depth_embedding(pyr, Tensor::zeros({2, 8}), true);
    for (std::size_t k = 0; k < 4; ++k) {
        EXPECT_TRUE(off.levels[k].same_storage(pyr.levels[k]));
        EXPECT_EQ(zero.levels[k].to_vector(), pyr.levels[k].to_vector());
    }
    EXPECT_THROW(add_depth_embedding(pyr, Tensor::zeros({3, 8}), true), ShapeError);
}

TEST(DepthEmbedding, TableReceivesGradient) {
    std::mt19937_64 rng(8);
    Tensor table = testing::trainable(random_tensor({2, 6}, rng));
    FeaturePyramid pyr;
    for (auto& l : pyr.levels) l = Tensor::zeros({1, 2, 4, 2, 2}, DType::f64);
    pyr.source_extents = {4, 8, 8};
    const double err = testing::gradcheck(
        [&] {
            const auto out = add_depth_embedding(pyr, table, true);
            return add(testing::weighted_sum(out.levels[0], 1), testing::weighted_sum(out.levels[3], 2));
        },
        {table});
    EXPECT_LE(err, 1e-7);
    Tape::current().clear();
    backward(testing::weighted_sum(add_depth_embedding(pyr, table, true).levels[1]));
    double norm = 0;
    for (double g : table.grad().to_vector()) norm += g * g;
    EXPECT_GT(norm, 0.0);
    Tape::current().clear();
    table.zero_grad();
}

class ImportedEncoder : public ::testing::Test {
protected:
    void SetUp() override {
        // whole-slice features for a 4 x 16 x 16 volume at p = 4: grid 4 x 4
        stored_ = ramp_pyramid(8, 4, 4, 4, DType::f32);
        stored_.source_extents = {4, 4, 4};
        write_feature_file(to_feature_file(stored_, "case01", "test"), dir_ / "case01.vxf");
        cfg_ = small_toy();
        cfg_.backend = EncoderBackend::imported;
        cfg_.feature_dir = dir_.path();
    }

    testing::TempDir dir_;
    FeaturePyramid stored_;
    EncoderConfig cfg_;
};

TEST_F(ImportedEncoder, CropsTheSubCubeWindow) {
    const Tensor cube = Tensor::zeros({1, 1, 2, 8, 8});
    const CubeContext ctx{"case01", {2, 8, 0}, {4, 16, 16}};
    {
        const auto pyr = encode_subvolume(*make_encoder(cfg_), cube, ctx, DType::f64);
        for (std::size_t k = 0; k < 4; ++k) {
            ASSERT_EQ(pyr.levels[k].shape(), (Shape{1, 8, 2, 2, 2}));
            const auto got = pyr.levels[k].to_vector(), all = stored_.levels[k].to_vector();
            for (int c = 0; c < 8; ++c)
                for (int z = 0; z < 2; ++z)
                    for (int y = 0; y < 2; ++y)
                        for (int x = 0; x < 2; ++x)
                            EXPECT_EQ(got[((c * 2 + z) * 2 + y) * 2 + x], all[((c * 4 + 2 + z) * 4 + 2 + y) * 4 + x]);
        }
    }
    // the native grid is fixed at G x G whatever the window
    cfg_.token_grid = TokenGrid::native;
    const auto pyr = encode_subvolume(*make_encoder(cfg_), cube, ctx, DType::f64);
    EXPECT_EQ(pyr.levels[0].shape(), (Shape{1, 8, 2, 4, 4}));
}

TEST_F(ImportedEncoder, ReportsMissingSubjectAndWidthMismatch) {
    const auto enc = make_encoder(cfg_);
    const CubeContext ctx{"case02", {0, 0, 0}, {4, 16, 16}};
    try {
        encode_subvolume(*enc, Tensor::zeros({1, 1, 4, 16, 16}), ctx, DType::f32);
        FAIL();
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("case02"), std::string::npos) << e.what();
    }
    cfg_.d_emb = 16;
    cfg_.toy_heads = 4;
    const auto wide = make_encoder(cfg_);
    EXPECT_THROW(encode_subvolume(*wide, Tensor::zeros({1, 1, 4, 16, 16}), {"case01", {}, {4, 16, 16}}, DType::f32),
                 ConfigError);
}

TEST(FeatureFile, PyramidRoundTrip) {
    const FeaturePyramid pyr = ramp_pyramid(2, 3, 2, 2, DType::f64);
    const auto back = from_feature_file(decode_feature_file(encode_feature_file(to_feature_file(pyr, "s", "t"))), DType::f64);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(back.levels[k].to_vector(), pyr.levels[k].to_vector());
}

} // namespace
} // namespace voxbox
