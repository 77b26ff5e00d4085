#include "voxbox/selftest.hpp"

#include <cmath>
#include <sstream>

#include "voxbox/phantom.hpp"
#include "voxbox/tape.hpp"

namespace voxbox {

ModelConfig selftest_model(DType dtype) {
    ModelConfig m;
    m.encoder = EncoderConfig::toy(8);
    m.encoder.native_size = 16;
    m.encoder.patch_size = 4;
    m.encoder.toy_heads = 2;
    m.encoder.design_depth = 16;
    m.decoder.c_proj = m.decoder.c_ref = m.decoder.c_head = 4;
    m.dtype = dtype;
    m.seed = 11;
    return m;
}

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific << v;
    return os.str();
}

// Norm-wise relative difference over every parameter gradient.
double gradient_rel_err(const ParameterSet& a, const ParameterSet& b) {
    double num = 0, den = 0;
    for (const auto& [name, p] : a) {
        const auto ga = p.grad().to_vector();
        const auto gb = b.at(name).grad().to_vector();
        for (std::size_t i = 0; i < ga.size(); ++i) {
            num += (ga[i] - gb[i]) * (ga[i] - gb[i]);
            den += gb[i] * gb[i];
        }
    }
    return std::sqrt(num / den);
}

struct Fixture {
    Subject subject;
    Tensor x, target;
};

Fixture fixture(DType dtype) {
    PhantomSpec spec;
    spec.extents = {16, 16, 16};
    spec.radius = 5.0;
    spec.seed = 5;
    Fixture f{sphere_phantom(spec, "selftest"), {}, {}};
    f.x = to_tensor(f.subject.image, dtype);
    f.target = to_tensor(f.subject.label, dtype);
    return f;
}

CheckResult gradient_equivalence(DType dtype, double tolerance) {
    const Fixture f = fixture(dtype);
    SegmentationModel two(selftest_model(dtype)), one(selftest_model(dtype));
    const Partition p = make_partition({16, 16, 16}, {8, 8, 8});
    two_pass_gradients(two, f.x, f.target, p, {}, f.subject.id);
    single_pass_gradients(one, f.x, f.target, p, {}, f.subject.id);
    const double err = gradient_rel_err(two.params(), one.params());
    return {std::string("two-pass gradients equal single-pass (") + dtype_name(dtype) + ")", err <= tolerance,
            "rel err " + fmt(err) + " <= " + fmt(tolerance)};
}

CheckResult degenerate_partition() {
    const Fixture f = fixture(DType::f64);
    SegmentationModel a(selftest_model(DType::f64)), b(selftest_model(DType::f64));
    TrainConfig cfg;
    cfg.optim.lr = 1e-3;
    AdamW oa(cfg.optim), ob(cfg.optim);
    two_pass_step(a, oa, f.x, f.target, make_partition({16, 16, 16}, {16, 16, 16}), cfg, cfg.optim.lr, f.subject.id);
    plain_step(b, ob, f.x, f.target, cfg, cfg.optim.lr, f.subject.id);
    std::size_t differing = 0;
    for (const auto& [name, p] : a.params()) {
        if (p.to_vector() != b.params().at(name).to_vector()) ++differing;
    }
    return {"single-cube two-pass step bit-equal to a plain step", differing == 0,
            std::to_string(differing) + " parameter tensors differ"};
}

CheckResult memory_bound() {
    const Fixture f = fixture(DType::f64);
    SegmentationModel m(selftest_model(DType::f64));
    const auto eight = two_pass_gradients(m, f.x, f.target, make_partition({16, 16, 16}, {8, 8, 8}), {}, f.subject.id);
    m.params().zero_grad();
    const auto one = two_pass_gradients(m, f.x, f.target, make_partition({16, 16, 16}, {16, 16, 16}), {}, f.subject.id);
    m.params().zero_grad();
    const double ratio = static_cast<double>(eight.peak_tape_bytes) / static_cast<double>(one.peak_tape_bytes);
    return {"8-cube peak tape bytes <= 0.25x single cube", ratio <= 0.25,
            std::to_string(eight.peak_tape_bytes) + " / " + std::to_string(one.peak_tape_bytes) + " = " + fmt(ratio)};
}

CheckResult forward_modes() {
    const Fixture f = fixture(DType::f64);
    SegmentationModel m(selftest_model(DType::f64));
    Tape& tape = Tape::current();
    tape.clear();
    const CubeContext ctx{f.subject.id, {0, 0, 0}, {16, 16, 16}};
    const std::int64_t grads_before = grad_meter().live_bytes();
    const Tensor quiet = m.forward_subcube(f.x, ctx, ForwardMode::suspended);
    const bool no_tape = tape.size() == 0 && grad_meter().live_bytes() == grads_before;
    const Tensor tracked = m.forward_subcube(f.x, ctx, ForwardMode::tracked);
    const bool equal = quiet.to_vector() == tracked.to_vector();
    tape.clear();
    return {"suspended forward records nothing and equals tracked forward", no_tape && equal,
            std::string(no_tape ? "" : "tape grew; ") + (equal ? "outputs bit-equal" : "outputs differ")};
}

} // namespace

std::vector<CheckResult> run_selftest() {
    return {gradient_equivalence(DType::f64, 1e-10), gradient_equivalence(DType::f32, 1e-4), degenerate_partition(),
            memory_bound(), forward_modes()};
}

} // namespace voxbox
