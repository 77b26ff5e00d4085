#include "voxbox/loss.hpp"

#include <cmath>

#include "voxbox/tape.hpp"

namespace voxbox {

void LossConfig::validate() const {
    if (lambda_dice < 0 || lambda_ce < 0 || lambda_dice + lambda_ce == 0) {
        throw ConfigError("loss weights must be non-negative and not both zero");
    }
    if (!(smooth > 0)) throw ConfigError("Dice smoothing must be positive");
}

namespace {

double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + e^x) without overflow
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

struct DiceTerms {
    double intersection = 0, pred = 0, truth = 0, bce = 0;
};

template <class T>
DiceTerms accumulate_terms(std::span<const T> x, std::span<const T> g) {
    DiceTerms t;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double p = stable_sigmoid(x[i]);
        t.intersection += p * g[i];
        t.pred += p;
        t.truth += g[i];
        t.bce += softplus(x[i]) - static_cast<double>(g[i]) * x[i];
    }
    return t;
}

} // namespace

Tensor dice_ce_loss(const Tensor& logits, const Tensor& target, const LossConfig& cfg) {
    cfg.validate();
    if (logits.shape() != target.shape()) {
        throw ShapeError("dice_ce_loss: logits " + shape_string(logits.shape()) + " vs target " +
                         shape_string(target.shape()));
    }
    if (logits.dtype() != target.dtype()) throw ShapeError("dice_ce_loss: logits and target dtypes differ");
    const double n = static_cast<double>(logits.numel());

    Tensor out = dispatch(logits.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const DiceTerms t = accumulate_terms<T>(logits.data<T>(), target.data<T>());
        const double dice = 1.0 - (2.0 * t.intersection + cfg.smooth) / (t.pred + t.truth + cfg.smooth);
        const double value = cfg.lambda_dice * dice + cfg.lambda_ce * t.bce / n;
        return Tensor::from_values({1}, {value}, logits.dtype());
    });

    Tape& tape = Tape::current();
    if (!tape.should_record({&logits})) return out;
    return tape.record(
        OpKind::dice_ce_loss, {logits}, out,
        [cfg, n](const TapeNode& node, const Tensor& grad_out) -> std::vector<Tensor> {
            const Tensor& x = node.inputs[0];
            const Tensor& g = node.saved[0];
            Tensor dx = Tensor::zeros(x.shape(), x.dtype());
            dispatch(x.dtype(), [&](auto tag) {
                using T = decltype(tag);
                const auto xs = x.data<T>();
                const auto gs = g.data<T>();
                const DiceTerms t = accumulate_terms<T>(xs, gs);
                const double num = 2.0 * t.intersection + cfg.smooth;
                const double den = t.pred + t.truth + cfg.smooth;
                const double seed = grad_out.item();
                auto out = dx.mutable_data<T>();
                for (std::size_t i = 0; i < xs.size(); ++i) {
                    const double p = stable_sigmoid(xs[i]);
                    // d(1 - num/den)/dp = -(2g*den - num)/den^2
                    const double d_dice = -(2.0 * gs[i] * den - num) / (den * den) * p * (1.0 - p);
                    const double d_bce = (p - gs[i]) / n;
                    out[i] = static_cast<T>(seed * (cfg.lambda_dice * d_dice + cfg.lambda_ce * d_bce));
                }
            });
            return {dx};
        },
        {detach(target)});
}

std::vector<std::uint8_t> binarize(const Tensor& logits) {
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(logits.numel()));
    dispatch(logits.dtype(), [&](auto tag) {
        using T = decltype(tag);
        const auto x = logits.data<T>();
        for (std::size_t i = 0; i < x.size(); ++i) mask[i] = x[i] > 0 ? 1 : 0;
    });
    return mask;
}

LabelVolume binarize(const Tensor& logits, const Geometry& geometry) {
    if (logits.numel() != geometry.voxel_count()) {
        throw ShapeError("binarize: logits " + shape_string(logits.shape()) + " do not fit extents " +
                         index_string(geometry.extents));
    }
    LabelVolume l;
    l.geometry = geometry;
    l.voxels = binarize(logits);
    return l;
}

OverlapCounts overlap(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
    if (pred.size() != truth.size()) {
        throw ShapeError("mask sizes differ: " + std::to_string(pred.size()) + " vs " + std::to_string(truth.size()));
    }
    OverlapCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool a = pred[i] != 0, b = truth[i] != 0;
        c.pred += a;
        c.truth += b;
        c.both += a && b;
    }
    return c;
}

double dsc(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
    const auto c = overlap(pred, truth);
    if (c.pred + c.truth == 0) return 1.0;
    return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.pred + c.truth);
}

double iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
    const auto c = overlap(pred, truth);
    const std::int64_t uni = c.pred + c.truth - c.both;
    if (uni == 0) return 1.0;
    return static_cast<double>(c.both) / static_cast<double>(uni);
}

std::optional<double> vol_error_pct(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
    const auto c = overlap(pred, truth);
    if (c.truth == 0) return std::nullopt;
    return 100.0 * static_cast<double>(std::llabs(c.pred - c.truth)) / static_cast<double>(c.truth);
}

} // namespace voxbox
