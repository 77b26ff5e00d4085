#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "testing.hpp"
#include "voxbox/loss.hpp"

namespace voxbox {
namespace {

using testing::random_tensor;
using testing::trainable;

// Plain-double reference: soft Dice on sigmoid probabilities plus mean BCE.
double reference_loss(const std::vector<double>& x, const std::vector<double>& g, const LossConfig& cfg) {
    double inter = 0, ps = 0, gs = 0, bce = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double p = 1.0 / (1.0 + std::exp(-x[i]));
        inter += p * g[i];
        ps += p;
        gs += g[i];
        bce += -(g[i] * std::log(p) + (1 - g[i]) * std::log(1 - p));
    }
    const double dice = 1.0 - (2 * inter + cfg.smooth) / (ps + gs + cfg.smooth);
    return cfg.lambda_dice * dice + cfg.lambda_ce * bce / static_cast<double>(x.size());
}

Tensor random_mask(const Shape& shape, std::mt19937_64& rng, double density = 0.4) {
    std::bernoulli_distribution b(density);
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = b(rng) ? 1.0 : 0.0;
    return Tensor::from_values(shape, v, DType::f64);
}

std::vector<std::uint8_t> random_bits(std::size_t n, std::mt19937_64& rng, double density) {
    std::bernoulli_distribution b(density);
    std::vector<std::uint8_t> v(n);
    for (auto& x : v) x = b(rng);
    return v;
}

TEST(DiceCeLoss, MatchesPlainReference) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor x = random_tensor({1, 1, 3, 4, 2}, rng, DType::f64, -4, 4);
        const Tensor g = random_mask(x.shape(), rng);
        LossConfig cfg;
        cfg.lambda_dice = 0.25 * (trial % 5);
        cfg.lambda_ce = trial % 5 == 4 ? 0.0 : 1.0;
        const double got = dice_ce_loss(x, g, cfg).item();
        EXPECT_NEAR(got, reference_loss(x.to_vector(), g.to_vector(), cfg), 1e-12);
    }
}

TEST(DiceCeLoss, PerfectConfidentPredictionIsNearZero) {
    std::mt19937_64 rng(2);
    const Tensor g = random_mask({1, 1, 4, 4, 4}, rng);
    std::vector<double> x;
    for (double v : g.to_vector()) x.push_back(v > 0 ? 20.0 : -20.0);
    for (DType dt : {DType::f32, DType::f64}) {
        const double loss = dice_ce_loss(Tensor::from_values(g.shape(), x, dt), g.to(dt)).item();
        EXPECT_GE(loss, 0.0);
        EXPECT_LE(loss, 1e-6) << dtype_name(dt);
    }
}

TEST(DiceCeLoss, UniformLogitsGiveLn2WithoutDice) {
    std::mt19937_64 rng(3);
    const Tensor g = random_mask({1, 1, 2, 3, 5}, rng);
    LossConfig cfg;
    cfg.lambda_dice = 0.0;
    EXPECT_NEAR(dice_ce_loss(Tensor::zeros(g.shape(), DType::f64), g, cfg).item(), std::log(2.0), 1e-12);
}

TEST(DiceCeLoss, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 4; ++trial) {
        Tensor x = trainable(random_tensor({1, 1, 4, 4, 4}, rng, DType::f64, -3, 3));
        const Tensor g = random_mask(x.shape(), rng, 0.2 + 0.2 * trial);
        LossConfig cfg;
        cfg.lambda_dice = 1.0 + trial;
        const double err = testing::gradcheck([&] { return dice_ce_loss(x, g, cfg); }, {x});
        EXPECT_LE(err, 1e-5) << "trial " << trial;
    }
}

TEST(DiceCeLoss, GradientMatchesComposedOps) {
    // Dice term rebuilt from primitive tape ops; gradients must agree.
    std::mt19937_64 rng(5);
    Tensor x = trainable(random_tensor({1, 1, 3, 3, 3}, rng, DType::f64, -2, 2));
    const Tensor g = random_mask(x.shape(), rng);
    LossConfig cfg;
    cfg.lambda_ce = 0.0;
    Tape::current().clear();
    backward(dice_ce_loss(x, g, cfg));
    const auto fused = x.grad().to_vector();
    x.zero_grad();
    Tape::current().clear();
    const Tensor p = sigmoid(x);
    const Tensor eps = Tensor::full({1}, cfg.smooth, DType::f64);
    const Tensor num = add(scale(sum(mul(p, g)), 2.0), eps);
    const Tensor den = add(add(sum(p), sum(g)), eps);
    // 1 - num/den, with the division taken by hand: d/dx of num/den.
    backward(num, Tensor::full({1}, -1.0 / den.item(), DType::f64));
    backward(den, Tensor::full({1}, num.item() / (den.item() * den.item()), DType::f64));
    const auto composed = x.grad().to_vector();
    Tape::current().clear();
    x.zero_grad();
    for (std::size_t i = 0; i < fused.size(); ++i) EXPECT_NEAR(fused[i], composed[i], 1e-14);
}

TEST(DiceCeLoss, InvariantUnderVoxelPermutation) {
    std::mt19937_64 rng(6);
    const Tensor x = random_tensor({1, 1, 2, 4, 4}, rng, DType::f64, -3, 3);
    const Tensor g = random_mask(x.shape(), rng);
    std::vector<std::size_t> perm(static_cast<std::size_t>(x.numel()));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto xv = x.to_vector(), gv = g.to_vector();
    std::vector<double> xp(xv.size()), gp(gv.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        xp[i] = xv[perm[i]];
        gp[i] = gv[perm[i]];
    }
    const double a = dice_ce_loss(x, g).item();
    const double b = dice_ce_loss(Tensor::from_values(x.shape(), xp, DType::f64),
                                  Tensor::from_values(x.shape(), gp, DType::f64))
                         .item();
    EXPECT_NEAR(a, b, 1e-12);
}

TEST(DiceCeLoss, RejectsMismatchAndBadConfig) {
    const Tensor x = Tensor::zeros({1, 1, 2, 2, 2});
    EXPECT_THROW(dice_ce_loss(x, Tensor::zeros({1, 1, 2, 2, 1})), ShapeError);
    EXPECT_THROW(dice_ce_loss(x, Tensor::zeros({1, 1, 2, 2, 2}, DType::f64)), ShapeError);
    LossConfig bad;
    bad.lambda_dice = bad.lambda_ce = 0.0;
    EXPECT_THROW(dice_ce_loss(x, x, bad), ConfigError);
    bad = {};
    bad.smooth = 0.0;
    EXPECT_THROW(dice_ce_loss(x, x, bad), ConfigError);
}

TEST(Metrics, HandCountedOverlap) {
    // |A| = |B| = 4 sharing 2 voxels
    const std::vector<std::uint8_t> a{1, 1, 1, 1, 0, 0, 0, 0}, b{0, 0, 1, 1, 1, 1, 0, 0};
    EXPECT_DOUBLE_EQ(dsc(a, b), 0.5);
    EXPECT_DOUBLE_EQ(iou(a, b), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(*vol_error_pct(a, b), 0.0);
    const std::vector<std::uint8_t> c{0, 0, 0, 0, 0, 0, 1, 1};
    EXPECT_EQ(dsc(a, c), 0.0);
    EXPECT_EQ(iou(a, c), 0.0);
    EXPECT_DOUBLE_EQ(*vol_error_pct(c, b), 50.0);
    const auto o = overlap(a, b);
    EXPECT_EQ(o.pred, 4);
    EXPECT_EQ(o.truth, 4);
    EXPECT_EQ(o.both, 2);
}

TEST(Metrics, EmptyMaskConventions) {
    const std::vector<std::uint8_t> empty(6, 0), some{0, 1, 0, 0, 0, 0};
    EXPECT_EQ(dsc(empty, empty), 1.0);
    EXPECT_EQ(iou(empty, empty), 1.0);
    EXPECT_EQ(dsc(some, empty), 0.0);
    EXPECT_FALSE(vol_error_pct(some, empty).has_value());
    EXPECT_THROW(dsc(some, std::vector<std::uint8_t>(5, 0)), ShapeError);
}

TEST(Metrics, IouIsAFunctionOfDscOnRandomPairs) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> density(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> size(1, 300);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = size(rng);
        const auto a = random_bits(n, rng, density(rng)), b = random_bits(n, rng, density(rng));
        const double d = dsc(a, b), j = iou(a, b);
        ASSERT_GE(d, 0.0);
        ASSERT_LE(d, 1.0);
        ASSERT_GE(j, 0.0);
        ASSERT_LE(j, d + 1e-15);
        ASSERT_NEAR(j, d / (2.0 - d), 1e-12);
        ASSERT_EQ(dsc(a, b), dsc(b, a));
        if (a == b) ASSERT_EQ(d, 1.0);
    }
}

TEST(Binarize, ThresholdsAtZeroLogit) {
    const Tensor x = Tensor::from_values({5}, {-1.0, -1e-9, 0.0, 1e-9, 3.0});
    EXPECT_EQ(binarize(x), (std::vector<std::uint8_t>{0, 0, 0, 1, 1}));
    Geometry geo;
    geo.extents = {1, 1, 5};
    const LabelVolume l = binarize(x, geo);
    EXPECT_EQ(l.voxels, binarize(x));
    geo.extents = {1, 1, 4};
    EXPECT_THROW(binarize(x, geo), ShapeError);
}

} // namespace
} // namespace voxbox
