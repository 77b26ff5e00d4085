#include <gtest/gtest.h>

#include "testing.hpp"

namespace voxbox {
namespace {

using testing::random_tensor;
using testing::trainable;

TEST(Tensor, FactoriesAndConversion) {
    const Tensor z = Tensor::zeros({2, 3});
    EXPECT_EQ(z.numel(), 6);
    EXPECT_EQ(z.dtype(), DType::f32);
    EXPECT_EQ(z.bytes(), 24);
    const Tensor v = Tensor::from_values({3}, {1.5, -2.0, 3.25}, DType::f64);
    EXPECT_EQ(v.to(DType::f32).to_vector(), (std::vector<double>{1.5, -2.0, 3.25}));
    EXPECT_THROW(Tensor::from_values({2}, {1.0, 2.0, 3.0}), ShapeError);
    EXPECT_THROW(Tensor::zeros({2, 0}), ShapeError);
    EXPECT_THROW(v.data<float>(), ShapeError);
    EXPECT_THROW(v.item(), ShapeError);
}

TEST(Tensor, CloneOwnsStorageDetachShares) {
    const Tensor a = Tensor::from_values({2}, {1.0, 2.0});
    EXPECT_FALSE(a.clone().same_storage(a));
    EXPECT_TRUE(detach(a).same_storage(a));
}

TEST(Tensor, SerializationRoundTripsBothDtypes) {
    std::mt19937_64 rng(1);
    for (DType dt : {DType::f32, DType::f64}) {
        const Tensor t = random_tensor({2, 1, 3}, rng, dt);
        const auto blob = serialize_tensor(t);
        std::size_t offset = 0;
        const Tensor back = deserialize_tensor(blob, offset);
        EXPECT_EQ(offset, blob.size());
        EXPECT_EQ(back.shape(), t.shape());
        EXPECT_EQ(back.dtype(), dt);
        EXPECT_EQ(back.to_vector(), t.to_vector());
    }
}

TEST(Tensor, DeserializationRejectsDamagedBlobs) {
    const auto blob = serialize_tensor(Tensor::from_values({2}, {1.0, 2.0}));
    std::size_t offset = 0;
    auto bad = blob;
    bad[0] = 'X';
    EXPECT_THROW(deserialize_tensor(bad, offset), BadMagicError);
    bad = blob;
    bad[4] = 7;
    offset = 0;
    EXPECT_THROW(deserialize_tensor(bad, offset), UnsupportedDtypeError);
    offset = 0;
    EXPECT_THROW(deserialize_tensor(std::span(blob).first(blob.size() - 1), offset), TruncatedError);
}

TEST(Tape, RecordsOnlyWhenAnInputRequiresGrad) {
    Tape& tape = Tape::current();
    tape.clear();
    const Tensor a = Tensor::from_values({2}, {1.0, 2.0}, DType::f64);
    add(a, a);
    EXPECT_EQ(tape.size(), 0u);
    const Tensor w = trainable(Tensor::from_values({2}, {1.0, 2.0}, DType::f64));
    const Tensor y = mul(a, w);
    EXPECT_EQ(tape.size(), 1u);
    EXPECT_TRUE(y.requires_grad());
    EXPECT_FALSE(y.is_leaf());
    tape.clear();
}

TEST(Tape, NoGradGuardSuspendsAndRestores) {
    Tape& tape = Tape::current();
    tape.clear();
    const Tensor w = trainable(Tensor::from_values({1}, {3.0}, DType::f64));
    {
        NoGradGuard g;
        EXPECT_FALSE(tape.recording());
        const Tensor y = scale(w, 2.0);
        EXPECT_FALSE(y.requires_grad());
        {
            NoGradGuard nested;
        }
        EXPECT_FALSE(tape.recording());
    }
    EXPECT_TRUE(tape.recording());
    EXPECT_EQ(tape.size(), 0u);
}

TEST(Tape, BackwardAccumulatesIntoLeavesOnly) {
    Tape& tape = Tape::current();
    tape.clear();
    Tensor w = trainable(Tensor::from_values({2}, {2.0, -1.0}, DType::f64));
    const Tensor x = Tensor::from_values({2}, {3.0, 4.0}, DType::f64);
    // y = sum(w*x + w*w)  ->  dy/dw = x + 2w
    const Tensor h = mul(w, x);
    const Tensor y = sum(add(h, mul(w, w)));
    backward(y);
    EXPECT_EQ(w.grad().to_vector(), (std::vector<double>{7.0, 2.0}));
    EXPECT_FALSE(h.has_grad());
    // a second backward on a fresh graph adds on top
    tape.clear();
    backward(sum(w));
    EXPECT_EQ(w.grad().to_vector(), (std::vector<double>{8.0, 3.0}));
    tape.clear();
    w.zero_grad();
    EXPECT_FALSE(w.has_grad());
}

TEST(Tape, RejectsStaleRootsAndBadSeeds) {
    Tape& tape = Tape::current();
    tape.clear();
    const Tensor w = trainable(Tensor::from_values({2}, {1.0, 2.0}, DType::f64));
    const Tensor y = scale(w, 3.0);
    EXPECT_THROW(backward(y), TapeError);  // not a scalar
    EXPECT_THROW(backward(y, Tensor::zeros({3}, DType::f64)), TapeError);
    EXPECT_THROW(backward(y, Tensor::zeros({2}, DType::f32)), TapeError);
    tape.clear();
    EXPECT_THROW(backward(y, Tensor::zeros({2}, DType::f64)), TapeError);
    EXPECT_THROW(backward(w, Tensor::zeros({2}, DType::f64)), TapeError);
    EXPECT_THROW(Tensor(y).set_requires_grad(false), TapeError);
}

TEST(Tape, MeterCountsDistinctStorageAndReleasesOnClear) {
    Tape& tape = Tape::current();
    tape.clear();
    tape.reset_peak();
    const Tensor w = trainable(Tensor::zeros({100}, DType::f64));
    const Tensor y = scale(w, 2.0);
    scale(w, 3.0);
    // w once, two outputs
    EXPECT_EQ(tape.meter().live_bytes(), 3 * 800);
    tape.clear();
    EXPECT_EQ(tape.meter().live_bytes(), 0);
    EXPECT_EQ(tape.meter().peak_bytes(), 3 * 800);
}

TEST(Meters, DataAndGradientBuffersAreSeparate) {
    const std::int64_t data_before = data_meter().live_bytes(), grad_before = grad_meter().live_bytes();
    {
        Tensor w = trainable(Tensor::zeros({16}, DType::f64));
        EXPECT_EQ(data_meter().live_bytes() - data_before, 128);
        w.accumulate_grad(Tensor::full({16}, 1.0, DType::f64));
        EXPECT_EQ(grad_meter().live_bytes() - grad_before, 128);
    }
    EXPECT_EQ(data_meter().live_bytes(), data_before);
    EXPECT_EQ(grad_meter().live_bytes(), grad_before);
}

TEST(Ops, ElementwiseGradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(2);
    Tensor a = trainable(random_tensor({2, 3, 4}, rng));
    Tensor b = trainable(random_tensor({3, 1}, rng));
    const double err = testing::gradcheck(
        [&] {
            const Tensor t = add(mul(a, b), sub(sigmoid(a), scale(relu(b), 0.5)));
            return mean(mul(t, t));
        },
        {a, b});
    EXPECT_LE(err, 1e-6);
}

TEST(Ops, MatmulReshapeConcatGradients) {
    std::mt19937_64 rng(3);
    Tensor a = trainable(random_tensor({3, 4}, rng));
    Tensor b = trainable(random_tensor({4, 2}, rng));
    Tensor c = trainable(random_tensor({3, 3}, rng));
    const double err = testing::gradcheck(
        [&] { return testing::weighted_sum(reshape(concat({matmul(a, b), c}, 1), {5, 3})); }, {a, b, c});
    EXPECT_LE(err, 1e-6);
}

TEST(Ops, BroadcastErrorsNameBothShapes) {
    try {
        broadcast_shape({2, 3}, {4, 3});
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("[4,3]"), std::string::npos) << e.what();
    }
    EXPECT_EQ(broadcast_shape({2, 1, 3}, {4, 1}), (Shape{2, 4, 3}));
}

} // namespace
} // namespace voxbox
