#include "voxbox/decoder.hpp"

#include <algorithm>

#include "voxbox/ops.hpp"

namespace voxbox {

Tensor& ParameterSet::add(std::string name, Tensor value) {
    if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
    value.set_requires_grad(true);
    entries_.emplace_back(std::move(name), std::move(value));
    return entries_.back().second;
}

bool ParameterSet::contains(const std::string& name) const noexcept {
    return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

Tensor& ParameterSet::at(const std::string& name) {
    for (auto& [n, t] : entries_)
        if (n == name) return t;
    throw ConfigError("unknown parameter '" + name + "'");
}

const Tensor& ParameterSet::at(const std::string& name) const {
    return const_cast<ParameterSet&>(*this).at(name);
}

std::int64_t ParameterSet::parameter_count() const noexcept {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
}

ParameterSet ParameterSet::clone() const {
    ParameterSet out;
    for (const auto& [n, t] : entries_) out.add(n, t.clone());
    return out;
}

void DecoderConfig::validate() const {
    if (d_emb < 1 || c_proj < 1 || c_ref < 1 || c_head < 1) throw ConfigError("decoder channel widths must be positive");
}

namespace {

ConvSpec pointwise(std::int64_t in, std::int64_t out) { return ConvSpec{in, out, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, false}; }
ConvSpec cube3(std::int64_t in, std::int64_t out) { return ConvSpec{in, out, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, false}; }
ConvSpec fusion(std::int64_t c) { return ConvSpec{c, c, {1, 2, 2}, {1, 2, 2}, {0, 0, 0}, true}; }

std::int64_t fan_in(const ConvSpec& s) {
    const std::int64_t taps = s.kernel[0] * s.kernel[1] * s.kernel[2];
    return (s.transposed ? s.out_channels : s.in_channels) * taps;
}

void add_conv(ParameterSet& p, const std::string& name, const ConvSpec& spec, bool bias, std::mt19937_64& rng,
              DType dtype) {
    p.add(name + ".weight", kaiming_uniform(spec.weight_shape(), fan_in(spec), rng, dtype));
    if (bias) p.add(name + ".bias", Tensor::zeros({spec.out_channels}, dtype));
}

std::string level_name(const char* stem, int k) { return stem + std::to_string(k); }

Tensor head_block(const ParameterSet& p, const std::string& name, const Tensor& x, const ConvSpec& spec) {
    const Tensor y = conv3d(x, p.at(name + ".weight"), Tensor{}, spec);
    return relu(instance_norm3d(y, p.at(name + ".gamma"), p.at(name + ".beta")));
}

} // namespace

void init_decoder(ParameterSet& params, const DecoderConfig& cfg, std::mt19937_64& rng, DType dtype) {
    cfg.validate();
    for (int k = 1; k <= 4; ++k) {
        add_conv(params, level_name("proj", k), pointwise(cfg.d_emb, cfg.c_proj), true, rng, dtype);
        add_conv(params, level_name("refine", k), cube3(cfg.c_proj, cfg.c_ref), true, rng, dtype);
    }
    add_conv(params, "fuse", fusion(cfg.c_ref), true, rng, dtype);
    // Head convs carry no bias: instance norm would cancel it.
    add_conv(params, "head1", cube3(4 * cfg.c_ref, cfg.c_head), false, rng, dtype);
    params.add("head1.gamma", Tensor::full({cfg.c_head}, 1.0, dtype));
    params.add("head1.beta", Tensor::zeros({cfg.c_head}, dtype));
    add_conv(params, "head2", cube3(cfg.c_head, cfg.c_head), false, rng, dtype);
    params.add("head2.gamma", Tensor::full({cfg.c_head}, 1.0, dtype));
    params.add("head2.beta", Tensor::zeros({cfg.c_head}, dtype));
    add_conv(params, "logits", pointwise(cfg.c_head, 1), true, rng, dtype);
}

Tensor decode(const ParameterSet& p, const FeaturePyramid& pyramid, const DecoderConfig& cfg) {
    pyramid.validate();
    if (pyramid.levels[0].dim(1) != cfg.d_emb) {
        throw ShapeError("decoder expects " + std::to_string(cfg.d_emb) + " feature channels, pyramid has " +
                         std::to_string(pyramid.levels[0].dim(1)));
    }
    auto refined = [&](int k) {
        const Tensor proj = conv3d(pyramid.levels[k - 1], p.at(level_name("proj", k) + ".weight"),
                                   p.at(level_name("proj", k) + ".bias"), pointwise(cfg.d_emb, cfg.c_proj));
        return conv3d(proj, p.at(level_name("refine", k) + ".weight"), p.at(level_name("refine", k) + ".bias"),
                      cube3(cfg.c_proj, cfg.c_ref));
    };

    const Shape& fs = pyramid.levels[0].shape();
    const Index3 grid{fs[2], 2 * fs[3], 2 * fs[4]};
    std::vector<Tensor> branches(4);
    if (cfg.multi_scale) {
        branches[0] = conv_transpose3d(refined(1), p.at("fuse.weight"), p.at("fuse.bias"), fusion(cfg.c_ref));
        for (int k = 2; k <= 3; ++k) branches[k - 1] = interp_trilinear(refined(k), grid);
    } else {
        const Tensor silent = Tensor::zeros({1, cfg.c_ref, grid[0], grid[1], grid[2]}, pyramid.levels[0].dtype());
        for (int k = 0; k < 3; ++k) branches[k] = silent;
    }
    branches[3] = interp_trilinear(refined(4), grid);

    Tensor h = concat(branches, 1);
    h = head_block(p, "head1", h, cube3(4 * cfg.c_ref, cfg.c_head));
    h = head_block(p, "head2", h, cube3(cfg.c_head, cfg.c_head));
    const Tensor logits = conv3d(h, p.at("logits.weight"), p.at("logits.bias"), pointwise(cfg.c_head, 1));
    return interp_trilinear(logits, pyramid.source_extents);
}

} // namespace voxbox
