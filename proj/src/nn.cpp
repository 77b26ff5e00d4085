#include "voxbox/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "voxbox/ops.hpp"
#include "voxbox/tape.hpp"

namespace voxbox {

void ConvSpec::validate() const {
    if (in_channels <= 0 || out_channels <= 0) throw ShapeError("ConvSpec: channel counts must be positive");
    for (int a = 0; a < 3; ++a) {
        if (kernel[a] <= 0 || stride[a] <= 0 || padding[a] < 0) {
            throw ShapeError("ConvSpec: kernel/stride must be positive and padding non-negative");
        }
        if (padding[a] >= kernel[a]) throw ShapeError("ConvSpec: padding must be smaller than the kernel");
    }
}

Shape ConvSpec::weight_shape() const {
    if (transposed) return {in_channels, out_channels, kernel[0], kernel[1], kernel[2]};
    return {out_channels, in_channels, kernel[0], kernel[1], kernel[2]};
}

Index3 ConvSpec::output_extents(const Index3& input) const {
    Index3 out{};
    for (int a = 0; a < 3; ++a) {
        if (transposed) {
            out[a] = (input[a] - 1) * stride[a] - 2 * padding[a] + kernel[a];
        } else {
            const std::int64_t span = input[a] + 2 * padding[a] - kernel[a];
            out[a] = span < 0 ? 0 : span / stride[a] + 1;
        }
        if (out[a] < 1) {
            throw ShapeError("convolution output extent on axis " + std::to_string(a) + " is " +
                             std::to_string(out[a]) + " for input extent " + std::to_string(input[a]));
        }
    }
    return out;
}

namespace {

struct ConvGeom {
    std::int64_t n, ci, co;
    Index3 in, out, k, s, p;
};

// First and one-past-last output position whose tap `kk` lands inside [0, extent).
inline std::pair<std::int64_t, std::int64_t> valid_range(std::int64_t extent, std::int64_t out_extent, std::int64_t kk,
                                                         std::int64_t s, std::int64_t p) {
    // need 0 <= o*s - p + kk <= extent-1
    std::int64_t lo = p - kk <= 0 ? 0 : (p - kk + s - 1) / s;
    std::int64_t num = extent - 1 + p - kk;
    std::int64_t hi = num < 0 ? 0 : num / s + 1;
    return {lo, std::min(hi, out_extent)};
}

// out must hold the initial value (bias or zero). Taps are added per output
// element in (ci, kd, kh, kw) order.
template <class T>
void conv_forward_kernel(std::span<const T> x, std::span<const T> w, std::span<T> out, const ConvGeom& g) {
    const auto [D, H, W] = g.in;
    const auto [OD, OH, OW] = g.out;
    const std::int64_t in_vol = D * H * W, out_vol = OD * OH * OW, kvol = g.k[0] * g.k[1] * g.k[2];
    for (std::int64_t n = 0; n < g.n; ++n)
        for (std::int64_t co = 0; co < g.co; ++co) {
            T* o = out.data() + (n * g.co + co) * out_vol;
            for (std::int64_t ci = 0; ci < g.ci; ++ci) {
                const T* xi = x.data() + (n * g.ci + ci) * in_vol;
                const T* wk = w.data() + (co * g.ci + ci) * kvol;
                for (std::int64_t kd = 0; kd < g.k[0]; ++kd) {
                    const auto [d0, d1] = valid_range(D, OD, kd, g.s[0], g.p[0]);
                    for (std::int64_t kh = 0; kh < g.k[1]; ++kh) {
                        const auto [h0, h1] = valid_range(H, OH, kh, g.s[1], g.p[1]);
                        for (std::int64_t kw = 0; kw < g.k[2]; ++kw) {
                            const auto [w0, w1] = valid_range(W, OW, kw, g.s[2], g.p[2]);
                            const T wv = wk[(kd * g.k[1] + kh) * g.k[2] + kw];
                            for (std::int64_t od = d0; od < d1; ++od) {
                                const std::int64_t id = od * g.s[0] - g.p[0] + kd;
                                for (std::int64_t oh = h0; oh < h1; ++oh) {
                                    const std::int64_t ih = oh * g.s[1] - g.p[1] + kh;
                                    T* orow = o + (od * OH + oh) * OW;
                                    const T* xrow = xi + (id * H + ih) * W - g.p[2] + kw;
                                    if (g.s[2] == 1) {
                                        for (std::int64_t ow = w0; ow < w1; ++ow) orow[ow] += wv * xrow[ow];
                                    } else {
                                        for (std::int64_t ow = w0; ow < w1; ++ow) orow[ow] += wv * xrow[ow * g.s[2]];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
}

// Scatters gout (N,Co,out) through w into gin (N,Ci,in). gin must hold its
// initial value; each element receives taps in (co, kd, kh, kw) order.
template <class T>
void conv_input_grad_kernel(std::span<const T> gout, std::span<const T> w, std::span<T> gin, const ConvGeom& g) {
    const auto [D, H, W] = g.in;
    const auto [OD, OH, OW] = g.out;
    const std::int64_t in_vol = D * H * W, out_vol = OD * OH * OW, kvol = g.k[0] * g.k[1] * g.k[2];
    for (std::int64_t n = 0; n < g.n; ++n)
        for (std::int64_t co = 0; co < g.co; ++co) {
            const T* go = gout.data() + (n * g.co + co) * out_vol;
            for (std::int64_t ci = 0; ci < g.ci; ++ci) {
                T* gi = gin.data() + (n * g.ci + ci) * in_vol;
                const T* wk = w.data() + (co * g.ci + ci) * kvol;
                for (std::int64_t kd = 0; kd < g.k[0]; ++kd) {
                    const auto [d0, d1] = valid_range(D, OD, kd, g.s[0], g.p[0]);
                    for (std::int64_t kh = 0; kh < g.k[1]; ++kh) {
                        const auto [h0, h1] = valid_range(H, OH, kh, g.s[1], g.p[1]);
                        for (std::int64_t kw = 0; kw < g.k[2]; ++kw) {
                            const auto [w0, w1] = valid_range(W, OW, kw, g.s[2], g.p[2]);
                            const T wv = wk[(kd * g.k[1] + kh) * g.k[2] + kw];
                            for (std::int64_t od = d0; od < d1; ++od) {
                                const std::int64_t id = od * g.s[0] - g.p[0] + kd;
                                for (std::int64_t oh = h0; oh < h1; ++oh) {
                                    const std::int64_t ih = oh * g.s[1] - g.p[1] + kh;
                                    const T* grow = go + (od * OH + oh) * OW;
                                    T* irow = gi + (id * H + ih) * W - g.p[2] + kw;
                                    for (std::int64_t ow = w0; ow < w1; ++ow) irow[ow * g.s[2]] += wv * grow[ow];
                                }
                            }
                        }
                    }
                }
            }
        }
}

template <class T>
void conv_weight_grad_kernel(std::span<const T> x, std::span<const T> gout, std::span<T> gw, const ConvGeom& g) {
    const auto [D, H, W] = g.in;
    const auto [OD, OH, OW] = g.out;
    const std::int64_t in_vol = D * H * W, out_vol = OD * OH * OW, kvol = g.k[0] * g.k[1] * g.k[2];
    for (std::int64_t co = 0; co < g.co; ++co)
        for (std::int64_t ci = 0; ci < g.ci; ++ci) {
            T* wk = gw.data() + (co * g.ci + ci) * kvol;
            for (std::int64_t kd = 0; kd < g.k[0]; ++kd) {
                const auto [d0, d1] = valid_range(D, OD, kd, g.s[0], g.p[0]);
                for (std::int64_t kh = 0; kh < g.k[1]; ++kh) {
                    const auto [h0, h1] = valid_range(H, OH, kh, g.s[1], g.p[1]);
                    for (std::int64_t kw = 0; kw < g.k[2]; ++kw) {
                        const auto [w0, w1] = valid_range(W, OW, kw, g.s[2], g.p[2]);
                        T acc{0};
                        for (std::int64_t n = 0; n < g.n; ++n) {
                            const T* xi = x.data() + (n * g.ci + ci) * in_vol;
                            const T* go = gout.data() + (n * g.co + co) * out_vol;
                            for (std::int64_t od = d0; od < d1; ++od) {
                                const std::int64_t id = od * g.s[0] - g.p[0] + kd;
                                for (std::int64_t oh = h0; oh < h1; ++oh) {
                                    const std::int64_t ih = oh * g.s[1] - g.p[1] + kh;
                                    const T* grow = go + (od * OH + oh) * OW;
                                    const T* xrow = xi + (id * H + ih) * W - g.p[2] + kw;
                                    for (std::int64_t ow = w0; ow < w1; ++ow) acc += grow[ow] * xrow[ow * g.s[2]];
                                }
                            }
                        }
                        wk[(kd * g.k[1] + kh) * g.k[2] + kw] += acc;
                    }
                }
            }
        }
}

// Per-channel sums of a (N,C,...) tensor.
Tensor channel_sums(const Tensor& t) {
    const std::int64_t n = t.dim(0), c = t.dim(1), vol = t.numel() / (n * c);
    Tensor out = Tensor::zeros({c}, t.dtype());
    dispatch(t.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto d = t.data<T>();
        auto o = out.mutable_data<T>();
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t ch = 0; ch < c; ++ch) {
                T acc{0};
                const T* p = d.data() + (i * c + ch) * vol;
                for (std::int64_t v = 0; v < vol; ++v) acc += p[v];
                o[ch] += acc;
            }
    });
    return out;
}

// Fills each (n,c) plane of `t` with bias[c].
void fill_bias(Tensor& t, const Tensor& bias) {
    if (!bias.defined()) return;
    const std::int64_t n = t.dim(0), c = t.dim(1), vol = t.numel() / (n * c);
    dispatch(t.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto d = t.mutable_data<T>();
        auto b = bias.data<T>();
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t ch = 0; ch < c; ++ch) std::fill_n(d.begin() + (i * c + ch) * vol, vol, b[ch]);
    });
}

Index3 spatial(const Tensor& t) { return {t.dim(2), t.dim(3), t.dim(4)}; }

void check_conv_operands(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvSpec& spec,
                         const char* op) {
    spec.validate();
    if (x.rank() != 5) throw ShapeError(std::string(op) + ": input must be (N,C,D,H,W), got " + shape_string(x.shape()));
    if (x.dim(1) != spec.in_channels) {
        throw ShapeError(std::string(op) + ": input has " + std::to_string(x.dim(1)) + " channels, spec expects " +
                         std::to_string(spec.in_channels));
    }
    if (weight.shape() != spec.weight_shape()) {
        throw ShapeError(std::string(op) + ": weight shape " + shape_string(weight.shape()) + ", expected " +
                         shape_string(spec.weight_shape()));
    }
    if (weight.dtype() != x.dtype()) throw ShapeError(std::string(op) + ": weight dtype differs from input");
    if (bias.defined() && (bias.shape() != Shape{spec.out_channels} || bias.dtype() != x.dtype())) {
        throw ShapeError(std::string(op) + ": bias must be [" + std::to_string(spec.out_channels) + "]");
    }
}

} // namespace

Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvSpec& spec) {
    if (spec.transposed) throw ShapeError("conv3d: spec is marked transposed");
    check_conv_operands(x, weight, bias, spec, "conv3d");
    const ConvGeom g{x.dim(0), spec.in_channels, spec.out_channels, spatial(x), spec.output_extents(spatial(x)),
                     spec.kernel, spec.stride, spec.padding};
    Tensor out = Tensor::zeros({g.n, g.co, g.out[0], g.out[1], g.out[2]}, x.dtype());
    fill_bias(out, bias);
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        conv_forward_kernel<T>(x.data<T>(), weight.data<T>(), out.mutable_data<T>(), g);
    });
    auto& tape = Tape::current();
    if (!tape.should_record({&x, &weight, &bias})) return out;
    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return tape.record(OpKind::conv3d, std::move(inputs), out,
                       [g](const TapeNode& node, const Tensor& gout) -> std::vector<Tensor> {
                           const Tensor& in = node.inputs[0];
                           const Tensor& w = node.inputs[1];
                           std::vector<Tensor> grads(node.inputs.size());
                           dispatch(gout.dtype(), [&](auto tag) {
                               using T = decltype(tag);
                               if (in.requires_grad()) {
                                   grads[0] = Tensor::zeros(in.shape(), in.dtype());
                                   conv_input_grad_kernel<T>(gout.data<T>(), w.data<T>(), grads[0].mutable_data<T>(), g);
                               }
                               if (w.requires_grad()) {
                                   grads[1] = Tensor::zeros(w.shape(), w.dtype());
                                   conv_weight_grad_kernel<T>(in.data<T>(), gout.data<T>(), grads[1].mutable_data<T>(), g);
                               }
                           });
                           if (node.inputs.size() > 2 && node.inputs[2].requires_grad()) grads[2] = channel_sums(gout);
                           return grads;
                       });
}

Tensor conv_transpose3d(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvSpec& spec) {
    if (!spec.transposed) throw ShapeError("conv_transpose3d: spec is not marked transposed");
    check_conv_operands(x, weight, bias, spec, "conv_transpose3d");
    // Geometry of the conv3d whose input-gradient this op computes.
    const Index3 out_ext = spec.output_extents(spatial(x));
    const ConvGeom g{x.dim(0), spec.out_channels, spec.in_channels, out_ext, spatial(x),
                     spec.kernel, spec.stride, spec.padding};
    Tensor out = Tensor::zeros({g.n, spec.out_channels, out_ext[0], out_ext[1], out_ext[2]}, x.dtype());
    fill_bias(out, bias);
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        conv_input_grad_kernel<T>(x.data<T>(), weight.data<T>(), out.mutable_data<T>(), g);
    });
    auto& tape = Tape::current();
    if (!tape.should_record({&x, &weight, &bias})) return out;
    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return tape.record(OpKind::conv_transpose3d, std::move(inputs), out,
                       [g](const TapeNode& node, const Tensor& gout) -> std::vector<Tensor> {
                           const Tensor& in = node.inputs[0];
                           const Tensor& w = node.inputs[1];
                           std::vector<Tensor> grads(node.inputs.size());
                           dispatch(gout.dtype(), [&](auto tag) {
                               using T = decltype(tag);
                               if (in.requires_grad()) {
                                   grads[0] = Tensor::zeros(in.shape(), in.dtype());
                                   conv_forward_kernel<T>(gout.data<T>(), w.data<T>(), grads[0].mutable_data<T>(), g);
                               }
                               if (w.requires_grad()) {
                                   grads[1] = Tensor::zeros(w.shape(), w.dtype());
                                   conv_weight_grad_kernel<T>(gout.data<T>(), in.data<T>(), grads[1].mutable_data<T>(), g);
                               }
                           });
                           if (node.inputs.size() > 2 && node.inputs[2].requires_grad()) grads[2] = channel_sums(gout);
                           return grads;
                       });
}

Tensor instance_norm3d(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() != 5) throw ShapeError("instance_norm3d: input must be (N,C,D,H,W), got " + shape_string(x.shape()));
    const std::int64_t n = x.dim(0), c = x.dim(1), vol = x.dim(2) * x.dim(3) * x.dim(4);
    if (vol < 2) throw ShapeError("instance_norm3d: variance is undefined for a single-voxel instance");
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
        throw ShapeError("instance_norm3d: gamma/beta must be [" + std::to_string(c) + "]");
    }
    if (gamma.dtype() != x.dtype() || beta.dtype() != x.dtype()) throw ShapeError("instance_norm3d: dtype mismatch");

    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    Tensor xhat = Tensor::zeros(x.shape(), x.dtype());
    Tensor inv_std = Tensor::zeros({n, c}, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto in = x.data<T>();
        auto o = out.mutable_data<T>();
        auto xh = xhat.mutable_data<T>();
        auto is = inv_std.mutable_data<T>();
        auto gm = gamma.data<T>();
        auto bt = beta.data<T>();
        for (std::int64_t i = 0; i < n * c; ++i) {
            const T* p = in.data() + i * vol;
            T mu{0};
            for (std::int64_t v = 0; v < vol; ++v) mu += p[v];
            mu /= static_cast<T>(vol);
            T var{0};
            for (std::int64_t v = 0; v < vol; ++v) var += (p[v] - mu) * (p[v] - mu);
            var /= static_cast<T>(vol);
            const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
            is[i] = inv;
            const std::int64_t ch = i % c;
            for (std::int64_t v = 0; v < vol; ++v) {
                const T h = (p[v] - mu) * inv;
                xh[i * vol + v] = h;
                o[i * vol + v] = gm[ch] * h + bt[ch];
            }
        }
    });
    auto& tape = Tape::current();
    if (!tape.should_record({&x, &gamma, &beta})) return out;
    return tape.record(
        OpKind::instance_norm3d, {x, gamma, beta}, out,
        [n, c, vol](const TapeNode& node, const Tensor& gout) -> std::vector<Tensor> {
            const Tensor& xh_t = node.saved[0];
            const Tensor& is_t = node.saved[1];
            const Tensor& gm_t = node.inputs[1];
            std::vector<Tensor> grads(3);
            Tensor gx = Tensor::zeros(node.inputs[0].shape(), gout.dtype());
            Tensor gg = Tensor::zeros({c}, gout.dtype());
            Tensor gb = Tensor::zeros({c}, gout.dtype());
            dispatch(gout.dtype(), [&](auto tag) {
                using T = decltype(tag);
                auto go = gout.data<T>();
                auto xh = xh_t.data<T>();
                auto is = is_t.data<T>();
                auto gm = gm_t.data<T>();
                auto dx = gx.mutable_data<T>();
                auto dg = gg.mutable_data<T>();
                auto db = gb.mutable_data<T>();
                for (std::int64_t i = 0; i < n * c; ++i) {
                    const std::int64_t ch = i % c;
                    T sum_g{0}, sum_gx{0};
                    for (std::int64_t v = 0; v < vol; ++v) {
                        sum_g += go[i * vol + v];
                        sum_gx += go[i * vol + v] * xh[i * vol + v];
                    }
                    dg[ch] += sum_gx;
                    db[ch] += sum_g;
                    const T mean_g = sum_g / static_cast<T>(vol);
                    const T mean_gx = sum_gx / static_cast<T>(vol);
                    const T k = gm[ch] * is[i];
                    for (std::int64_t v = 0; v < vol; ++v) {
                        dx[i * vol + v] = k * (go[i * vol + v] - mean_g - xh[i * vol + v] * mean_gx);
                    }
                }
            });
            if (node.inputs[0].requires_grad()) grads[0] = gx;
            if (node.inputs[1].requires_grad()) grads[1] = gg;
            if (node.inputs[2].requires_grad()) grads[2] = gb;
            return grads;
        },
        {xhat, inv_std});
}

std::vector<LinearTap> linear_taps(std::int64_t in_extent, std::int64_t out_extent) {
    if (in_extent <= 0 || out_extent <= 0) throw ShapeError("linear_taps: extents must be positive");
    std::vector<LinearTap> taps(static_cast<std::size_t>(out_extent));
    const double ratio = static_cast<double>(in_extent) / static_cast<double>(out_extent);
    for (std::int64_t i = 0; i < out_extent; ++i) {
        double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
        if (src < 0) src = 0;
        auto lo = static_cast<std::int64_t>(std::floor(src));
        lo = std::min(lo, in_extent - 1);
        taps[i] = {lo, std::min(lo + 1, in_extent - 1), src - static_cast<double>(lo)};
    }
    return taps;
}

Tensor interp_trilinear(const Tensor& x, const Index3& out_extents) {
    if (x.rank() != 5) throw ShapeError("interp_trilinear: input must be (N,C,D,H,W), got " + shape_string(x.shape()));
    for (auto e : out_extents) {
        if (e <= 0) throw ShapeError("interp_trilinear: output extents must be positive");
    }
    const Index3 in = spatial(x);
    const std::int64_t planes = x.dim(0) * x.dim(1);
    Tensor out;
    const bool identity = in == out_extents;
    std::array<std::vector<LinearTap>, 3> taps;
    if (identity) {
        out = x.clone();
    } else {
        for (int a = 0; a < 3; ++a) taps[a] = linear_taps(in[a], out_extents[a]);
        out = Tensor::zeros({x.dim(0), x.dim(1), out_extents[0], out_extents[1], out_extents[2]}, x.dtype());
        dispatch(x.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto src = x.data<T>();
            auto dst = out.mutable_data<T>();
            const std::int64_t iv = in[0] * in[1] * in[2];
            const std::int64_t ov = out_extents[0] * out_extents[1] * out_extents[2];
            for (std::int64_t p = 0; p < planes; ++p) {
                const T* s = src.data() + p * iv;
                T* d = dst.data() + p * ov;
                for (std::int64_t z = 0; z < out_extents[0]; ++z) {
                    const auto& tz = taps[0][z];
                    for (std::int64_t y = 0; y < out_extents[1]; ++y) {
                        const auto& ty = taps[1][y];
                        for (std::int64_t xx = 0; xx < out_extents[2]; ++xx) {
                            const auto& tx = taps[2][xx];
                            auto at = [&](std::int64_t a, std::int64_t b, std::int64_t c) {
                                return s[(a * in[1] + b) * in[2] + c];
                            };
                            const T fz = static_cast<T>(tz.frac), fy = static_cast<T>(ty.frac),
                                    fx = static_cast<T>(tx.frac);
                            const T c00 = at(tz.lo, ty.lo, tx.lo) * (T(1) - fx) + at(tz.lo, ty.lo, tx.hi) * fx;
                            const T c01 = at(tz.lo, ty.hi, tx.lo) * (T(1) - fx) + at(tz.lo, ty.hi, tx.hi) * fx;
                            const T c10 = at(tz.hi, ty.lo, tx.lo) * (T(1) - fx) + at(tz.hi, ty.lo, tx.hi) * fx;
                            const T c11 = at(tz.hi, ty.hi, tx.lo) * (T(1) - fx) + at(tz.hi, ty.hi, tx.hi) * fx;
                            const T c0 = c00 * (T(1) - fy) + c01 * fy;
                            const T c1 = c10 * (T(1) - fy) + c11 * fy;
                            d[(z * out_extents[1] + y) * out_extents[2] + xx] = c0 * (T(1) - fz) + c1 * fz;
                        }
                    }
                }
            }
        });
    }
    auto& tape = Tape::current();
    if (!tape.should_record({&x})) return out;
    return tape.record(OpKind::interp_trilinear, {x}, out,
                       [identity, taps, in, out_extents, planes](const TapeNode&, const Tensor& g) -> std::vector<Tensor> {
                           if (identity) return {g};
                           Tensor gx = Tensor::zeros({g.dim(0), g.dim(1), in[0], in[1], in[2]}, g.dtype());
                           dispatch(g.dtype(), [&](auto tag) {
                               using T = decltype(tag);
                               auto go = g.data<T>();
                               auto gi = gx.mutable_data<T>();
                               const std::int64_t iv = in[0] * in[1] * in[2];
                               const std::int64_t ov = out_extents[0] * out_extents[1] * out_extents[2];
                               for (std::int64_t p = 0; p < planes; ++p) {
                                   T* s = gi.data() + p * iv;
                                   const T* d = go.data() + p * ov;
                                   for (std::int64_t z = 0; z < out_extents[0]; ++z) {
                                       const auto& tz = taps[0][z];
                                       for (std::int64_t y = 0; y < out_extents[1]; ++y) {
                                           const auto& ty = taps[1][y];
                                           for (std::int64_t xx = 0; xx < out_extents[2]; ++xx) {
                                               const auto& tx = taps[2][xx];
                                               const T v = d[(z * out_extents[1] + y) * out_extents[2] + xx];
                                               const T fz = static_cast<T>(tz.frac), fy = static_cast<T>(ty.frac),
                                                       fx = static_cast<T>(tx.frac);
                                               auto at = [&](std::int64_t a, std::int64_t b, std::int64_t c) -> T& {
                                                   return s[(a * in[1] + b) * in[2] + c];
                                               };
                                               const T wz[2] = {T(1) - fz, fz}, wy[2] = {T(1) - fy, fy},
                                                       wx[2] = {T(1) - fx, fx};
                                               const std::int64_t iz[2] = {tz.lo, tz.hi}, iy[2] = {ty.lo, ty.hi},
                                                                  ix[2] = {tx.lo, tx.hi};
                                               for (int a = 0; a < 2; ++a)
                                                   for (int b = 0; b < 2; ++b)
                                                       for (int c = 0; c < 2; ++c)
                                                           at(iz[a], iy[b], ix[c]) += v * wz[a] * wy[b] * wx[c];
                                           }
                                       }
                                   }
                               }
                           });
                           return {gx};
                       });
}

Tensor kaiming_uniform(const Shape& shape, std::int64_t fan_in, std::mt19937_64& rng, DType dtype) {
    const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::int64_t>(fan_in, 1)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> values(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : values) v = dist(rng);
    return Tensor::from_values(shape, values, dtype);
}

namespace frozen {

void layernorm(std::span<double> x, std::size_t width, double eps) {
    for (std::size_t r = 0; r + width <= x.size(); r += width) {
        double mu = 0;
        for (std::size_t i = 0; i < width; ++i) mu += x[r + i];
        mu /= static_cast<double>(width);
        double var = 0;
        for (std::size_t i = 0; i < width; ++i) var += (x[r + i] - mu) * (x[r + i] - mu);
        var /= static_cast<double>(width);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t i = 0; i < width; ++i) x[r + i] = (x[r + i] - mu) * inv;
    }
}

void softmax(std::span<double> x, std::size_t width) {
    for (std::size_t r = 0; r + width <= x.size(); r += width) {
        const double m = *std::max_element(x.begin() + r, x.begin() + r + width);
        double total = 0;
        for (std::size_t i = 0; i < width; ++i) total += (x[r + i] = std::exp(x[r + i] - m));
        for (std::size_t i = 0; i < width; ++i) x[r + i] /= total;
    }
}

void gelu(std::span<double> x) {
    for (auto& v : x) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
}

std::vector<double> matmul(std::span<const double> a, std::span<const double> b, std::size_t rows, std::size_t inner,
                           std::size_t cols) {
    std::vector<double> out(rows * cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t k = 0; k < inner; ++k) {
            const double v = a[i * inner + k];
            const double* brow = b.data() + k * cols;
            double* orow = out.data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) orow[j] += v * brow[j];
        }
    return out;
}

std::vector<double> resize_bilinear(std::span<const double> image, std::int64_t h, std::int64_t w, std::int64_t out_h,
                                    std::int64_t out_w) {
    if (h == out_h && w == out_w) return {image.begin(), image.end()};
    const auto ty = linear_taps(h, out_h);
    const auto tx = linear_taps(w, out_w);
    std::vector<double> out(static_cast<std::size_t>(out_h * out_w));
    for (std::int64_t y = 0; y < out_h; ++y)
        for (std::int64_t x = 0; x < out_w; ++x) {
            const auto& a = ty[y];
            const auto& b = tx[x];
            const double top = image[a.lo * w + b.lo] * (1 - b.frac) + image[a.lo * w + b.hi] * b.frac;
            const double bot = image[a.hi * w + b.lo] * (1 - b.frac) + image[a.hi * w + b.hi] * b.frac;
            out[y * out_w + x] = top * (1 - a.frac) + bot * a.frac;
        }
    return out;
}

} // namespace frozen

} // namespace voxbox
