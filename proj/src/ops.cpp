#include "voxbox/ops.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace voxbox {

std::string index_string(const Index3& v) {
    return "(" + std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]) + ")";
}

Partition make_partition(const Index3& volume_extents, const Index3& cube_extents) {
    static constexpr const char* axis_names[] = {"depth", "height", "width"};
    Partition p{volume_extents, cube_extents, {}};
    for (int a = 0; a < 3; ++a) {
        if (volume_extents[a] <= 0 || cube_extents[a] <= 0) {
            throw ShapeError("make_partition: extents must be positive on axis " + std::string(axis_names[a]));
        }
        if (volume_extents[a] % cube_extents[a] != 0) {
            throw ShapeError("make_partition: " + std::string(axis_names[a]) + " extent " +
                             std::to_string(volume_extents[a]) + " is not divisible by cube extent " +
                             std::to_string(cube_extents[a]));
        }
    }
    for (std::int64_t z = 0; z < volume_extents[0]; z += cube_extents[0])
        for (std::int64_t y = 0; y < volume_extents[1]; y += cube_extents[1])
            for (std::int64_t x = 0; x < volume_extents[2]; x += cube_extents[2]) p.offsets.push_back({z, y, x});
    return p;
}

Index3 cube_extents_for(const Index3& volume_extents, std::int64_t per_axis) {
    if (per_axis <= 0) throw ShapeError("cube_extents_for: per-axis split must be positive");
    Index3 out{};
    for (int a = 0; a < 3; ++a) {
        if (volume_extents[a] % per_axis != 0) {
            throw ShapeError("cube_extents_for: extent " + std::to_string(volume_extents[a]) +
                             " not divisible into " + std::to_string(per_axis) + " parts");
        }
        out[a] = volume_extents[a] / per_axis;
    }
    return out;
}

namespace {

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
    if (a.dtype() != b.dtype()) {
        throw ShapeError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " + dtype_name(b.dtype()));
    }
}

std::vector<std::int64_t> contiguous_strides(const Shape& shape) {
    std::vector<std::int64_t> s(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
    return s;
}

// Strides of `in` viewed at rank out.size(), zero on broadcast axes.
std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::int64_t> s(out.size(), 0);
    auto cs = contiguous_strides(in);
    const std::size_t lead = out.size() - in.size();
    for (std::size_t i = 0; i < in.size(); ++i) s[lead + i] = in[i] == 1 ? 0 : cs[i];
    return s;
}

template <class Fn>
void for_each_broadcast(const Shape& out, const std::vector<std::int64_t>& sa, const std::vector<std::int64_t>& sb,
                        Fn&& fn) {
    const std::int64_t n = shape_numel(out);
    const std::size_t r = out.size();
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t ia = 0, ib = 0;
    for (std::int64_t o = 0; o < n; ++o) {
        fn(o, ia, ib);
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            ia += sa[d];
            ib += sb[d];
            if (idx[d] < out[d]) break;
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

// Sums `grad` (shaped `out`) down onto `target` shape.
Tensor reduce_to(const Tensor& grad, const Shape& target) {
    if (grad.shape() == target) return grad;
    Tensor result = Tensor::zeros(target, grad.dtype());
    auto st = broadcast_strides(target, grad.shape());
    std::vector<std::int64_t> none(grad.rank(), 0);
    dispatch(grad.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto g = grad.data<T>();
        auto r = result.mutable_data<T>();
        for_each_broadcast(grad.shape(), st, none, [&](std::int64_t o, std::int64_t it, std::int64_t) { r[it] += g[o]; });
    });
    return result;
}

enum class Binary { add, sub, mul };

Tensor binary_forward(const Tensor& a, const Tensor& b, Binary op) {
    const Shape out_shape = broadcast_shape(a.shape(), b.shape());
    Tensor out = Tensor::zeros(out_shape, a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = a.data<T>();
        auto y = b.data<T>();
        auto z = out.mutable_data<T>();
        auto apply = [op](T u, T v) -> T {
            switch (op) {
            case Binary::add: return u + v;
            case Binary::sub: return u - v;
            case Binary::mul: return u * v;
            }
            return T{};
        };
        if (a.shape() == b.shape()) {
            for (std::size_t i = 0; i < z.size(); ++i) z[i] = apply(x[i], y[i]);
        } else {
            for_each_broadcast(out_shape, broadcast_strides(a.shape(), out_shape),
                               broadcast_strides(b.shape(), out_shape),
                               [&](std::int64_t o, std::int64_t ia, std::int64_t ib) { z[o] = apply(x[ia], y[ib]); });
        }
    });
    return out;
}

Tensor binary(const Tensor& a, const Tensor& b, Binary op, OpKind kind, const char* name) {
    require_same_dtype(a, b, name);
    Tensor out = binary_forward(a, b, op);
    auto& tape = Tape::current();
    if (!tape.should_record({&a, &b})) return out;
    return tape.record(kind, {a, b}, out, [op](const TapeNode& node, const Tensor& g) -> std::vector<Tensor> {
        const Tensor& x = node.inputs[0];
        const Tensor& y = node.inputs[1];
        Tensor ga, gb;
        switch (op) {
        case Binary::add:
            ga = reduce_to(g, x.shape());
            gb = reduce_to(g, y.shape());
            break;
        case Binary::sub:
            ga = reduce_to(g, x.shape());
            gb = reduce_to(binary_forward(g, Tensor::full({1}, -1.0, g.dtype()), Binary::mul), y.shape());
            break;
        case Binary::mul:
            ga = reduce_to(binary_forward(g, y, Binary::mul), x.shape());
            gb = reduce_to(binary_forward(g, x, Binary::mul), y.shape());
            break;
        }
        return {ga, gb};
    });
}

template <class Fwd, class Bwd>
Tensor unary(const Tensor& x, OpKind kind, Fwd fwd, Bwd bwd) {
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto in = x.data<T>();
        auto o = out.mutable_data<T>();
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = fwd(in[i]);
    });
    auto& tape = Tape::current();
    if (!tape.should_record({&x})) return out;
    return tape.record(kind, {x}, out, [bwd](const TapeNode& node, const Tensor& g) -> std::vector<Tensor> {
        Tensor gx = Tensor::zeros(g.shape(), g.dtype());
        dispatch(g.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto in = node.inputs[0].data<T>();
            auto y = node.output.data<T>();
            auto go = g.data<T>();
            auto gi = gx.mutable_data<T>();
            for (std::size_t i = 0; i < gi.size(); ++i) gi[i] = bwd(in[i], y[i], go[i]);
        });
        return {gx};
    });
}

} // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        const std::int64_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::int64_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (ea != eb && ea != 1 && eb != 1) {
            throw ShapeError("cannot broadcast shapes " + shape_string(a) + " and " + shape_string(b));
        }
        out[i] = std::max(ea, eb);
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::add, OpKind::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::sub, OpKind::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::mul, OpKind::mul, "mul"); }

Tensor relu(const Tensor& x) {
    return unary(
        x, OpKind::relu, [](auto v) { return v > 0 ? v : decltype(v){0}; },
        [](auto in, auto, auto g) { return in > 0 ? g : decltype(g){0}; });
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x, OpKind::sigmoid,
        [](auto v) {
            using T = decltype(v);
            if (v >= 0) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](auto, auto y, auto g) { return g * y * (decltype(y)(1) - y); });
}

Tensor scale(const Tensor& x, double factor) {
    Tensor out = Tensor::zeros(x.shape(), x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto in = x.data<T>();
        auto o = out.mutable_data<T>();
        const T f = static_cast<T>(factor);
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] * f;
    });
    auto& tape = Tape::current();
    if (!tape.should_record({&x})) return out;
    return tape.record(OpKind::scale, {x}, out, [factor](const TapeNode&, const Tensor& g) -> std::vector<Tensor> {
        return {scale(g, factor)};
    });
}

Tensor sum(const Tensor& x) {
    Tensor out = Tensor::zeros({1}, x.dtype());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        T acc{0};
        for (T v : x.data<T>()) acc += v;
        out.mutable_data<T>()[0] = acc;
    });
    auto& tape = Tape::current();
    if (!tape.should_record({&x})) return out;
    return tape.record(OpKind::sum, {x}, out, [](const TapeNode& node, const Tensor& g) -> std::vector<Tensor> {
        return {Tensor::full(node.inputs[0].shape(), g.item(), g.dtype())};
    });
}

Tensor mean(const Tensor& x) {
    Tensor out = Tensor::zeros({1}, x.dtype());
    const auto n = static_cast<double>(x.numel());
    dispatch(x.dtype(), [&](auto tag) {
        using T = decltype(tag);
        T acc{0};
        for (T v : x.data<T>()) acc += v;
        out.mutable_data<T>()[0] = acc / static_cast<T>(n);
    });
    auto& tape = Tape::current();
    if (!tape.should_record({&x})) return out;
    return tape.record(OpKind::mean, {x}, out, [n](const TapeNode& node, const Tensor& g) -> std::vector<Tensor> {
        return {Tensor::full(node.inputs[0].shape(), g.item() / n, g.dtype())};
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_same_dtype(a, b, "matmul");
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()));
    }
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n}, a.dtype());
    dispatch(a.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto x = a.data<T>();
        auto y = b.data<T>();
        auto z = out.mutable_data<T>();
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t p = 0; p < k; ++p) {
                const T v = x[i * k + p];
                for (std::int64_t j = 0; j < n; ++j) z[i * n + j] += v * y[p * n + j];
            }
    });
    auto& tape = Tape::current();
    if (!tape.should_record({&a, &b})) return out;
    return tape.record(OpKind::matmul, {a, b}, out, [](const TapeNode& node, const Tensor& g) -> std::vector<Tensor> {
        const Tensor& x = node.inputs[0];
        const Tensor& y = node.inputs[1];
        auto transpose = [](const Tensor& t) {
            Tensor r = Tensor::zeros({t.dim(1), t.dim(0)}, t.dtype());
            dispatch(t.dtype(), [&](auto tag) {
                using T = decltype(tag);
                auto s = t.data<T>();
                auto d = r.mutable_data<T>();
                for (std::int64_t i = 0; i < t.dim(0); ++i)
                    for (std::int64_t j = 0; j < t.dim(1); ++j) d[j * t.dim(0) + i] = s[i * t.dim(1) + j];
            });
            return r;
        };
        return {matmul(g, transpose(y)), matmul(transpose(x), g)};
    });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
    }
    Tensor out = x.clone();
    out.impl()->shape = shape;
    auto& tape = Tape::current();
    if (!tape.should_record({&x})) return out;
    return tape.record(OpKind::reshape, {x}, out, [](const TapeNode& node, const Tensor& g) -> std::vector<Tensor> {
        Tensor r = g.clone();
        r.impl()->shape = node.inputs[0].shape();
        return {r};
    });
}

namespace {

// Treats `shape` as (outer, axis, inner) around `axis`.
struct AxisSplit {
    std::int64_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

} // namespace

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Shape out_shape = parts.front().shape();
    if (axis >= out_shape.size()) throw ShapeError("concat: axis out of range");
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        require_same_dtype(parts.front(), p, "concat");
        Shape a = p.shape(), b = parts.front().shape();
        if (a.size() != b.size()) throw ShapeError("concat: rank mismatch");
        a[axis] = b[axis] = 0;
        if (a != b) {
            throw ShapeError("concat: shapes " + shape_string(parts.front().shape()) + " and " +
                             shape_string(p.shape()) + " differ off axis " + std::to_string(axis));
        }
        out_shape[axis] += p.dim(axis);
    }
    Tensor out = Tensor::zeros(out_shape, parts.front().dtype());
    const AxisSplit os = split_axis(out_shape, axis);
    dispatch(out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto z = out.mutable_data<T>();
        std::int64_t start = 0;
        for (const auto& p : parts) {
            const AxisSplit ps = split_axis(p.shape(), axis);
            auto x = p.data<T>();
            for (std::int64_t o = 0; o < ps.outer; ++o)
                std::copy_n(x.begin() + o * ps.extent * ps.inner, ps.extent * ps.inner,
                            z.begin() + (o * os.extent + start) * os.inner);
            start += ps.extent;
        }
    });
    auto& tape = Tape::current();
    if (!tape.should_record(parts)) return out;
    return tape.record(OpKind::concat, parts, out, [axis](const TapeNode& node, const Tensor& g) -> std::vector<Tensor> {
        std::vector<Tensor> grads;
        std::int64_t start = 0;
        for (const auto& p : node.inputs) {
            std::vector<std::int64_t> off(g.rank(), 0), ext = p.shape();
            off[axis] = start;
            grads.push_back(p.requires_grad() ? slice_view(g, off, ext) : Tensor());
            start += p.dim(axis);
        }
        return grads;
    });
}

namespace {

// Copies between a block and a region of a larger tensor of equal rank.
// to_block=true reads the region; false writes the block into it.
template <class T>
void copy_region(std::span<T> big, const Shape& big_shape, std::span<T> block, const Shape& block_shape,
                 const std::vector<std::int64_t>& offsets, bool to_block, bool accumulate = false) {
    const std::size_t r = big_shape.size();
    auto bs = contiguous_strides(big_shape);
    const std::int64_t row = block_shape[r - 1];
    const std::int64_t rows = shape_numel(block_shape) / row;
    std::vector<std::int64_t> idx(r, 0);
    for (std::int64_t q = 0; q < rows; ++q) {
        std::int64_t base = 0;
        for (std::size_t d = 0; d < r; ++d) base += (idx[d] + offsets[d]) * bs[d];
        T* b = big.data() + base;
        T* s = block.data() + q * row;
        if (to_block) {
            std::copy_n(b, row, s);
        } else if (accumulate) {
            for (std::int64_t i = 0; i < row; ++i) b[i] += s[i];
        } else {
            std::copy_n(s, row, b);
        }
        for (std::size_t d = r - 1; d-- > 0;) {
            if (++idx[d] < block_shape[d]) break;
            idx[d] = 0;
        }
    }
}

} // namespace

Tensor slice_view(const Tensor& t, const std::vector<std::int64_t>& offsets, const std::vector<std::int64_t>& extents) {
    if (offsets.size() != t.rank() || extents.size() != t.rank()) {
        throw ShapeError("slice_view: expected " + std::to_string(t.rank()) + " offsets and extents");
    }
    for (std::size_t d = 0; d < t.rank(); ++d) {
        if (offsets[d] < 0 || extents[d] <= 0 || offsets[d] + extents[d] > t.dim(d)) {
            throw ShapeError("slice_view: dimension " + std::to_string(d) + " range [" + std::to_string(offsets[d]) +
                             ", " + std::to_string(offsets[d] + extents[d]) + ") exceeds extent " +
                             std::to_string(t.dim(d)));
        }
    }
    Tensor out = Tensor::zeros(extents, t.dtype());
    dispatch(t.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = t.data<T>();
        std::span<T> big(const_cast<T*>(src.data()), src.size());
        copy_region<T>(big, t.shape(), out.mutable_data<T>(), extents, offsets, true);
    });
    auto& tape = Tape::current();
    if (!tape.should_record({&t})) return out;
    return tape.record(OpKind::slice, {t}, out, [offsets](const TapeNode& node, const Tensor& g) -> std::vector<Tensor> {
        Tensor full = Tensor::zeros(node.inputs[0].shape(), g.dtype());
        dispatch(g.dtype(), [&](auto tag) {
            using T = decltype(tag);
            auto gs = g.data<T>();
            std::span<T> block(const_cast<T*>(gs.data()), gs.size());
            copy_region<T>(full.mutable_data<T>(), full.shape(), block, g.shape(), offsets, false);
        });
        return {full};
    });
}

Tensor assemble(const std::vector<Tensor>& blocks, const Partition& partition) {
    if (blocks.size() != partition.size()) {
        throw ShapeError("assemble: " + std::to_string(blocks.size()) + " blocks for a partition of " +
                         std::to_string(partition.size()) + " cubes");
    }
    std::set<Index3> seen;
    for (const auto& o : partition.offsets) {
        if (!seen.insert(o).second) throw ShapeError("assemble: duplicate cube at offset " + index_string(o));
        for (int a = 0; a < 3; ++a) {
            if (o[a] < 0 || o[a] % partition.cube_extents[a] != 0 ||
                o[a] + partition.cube_extents[a] > partition.volume_extents[a]) {
                throw ShapeError("assemble: offset " + index_string(o) + " is not on the cube grid");
            }
        }
    }
    if (static_cast<std::int64_t>(seen.size()) != shape_numel({partition.volume_extents[0] / partition.cube_extents[0],
                                                               partition.volume_extents[1] / partition.cube_extents[1],
                                                               partition.volume_extents[2] / partition.cube_extents[2]})) {
        throw ShapeError("assemble: partition does not cover the volume");
    }
    const Tensor& first = blocks.front();
    if (first.rank() != 5) throw ShapeError("assemble: blocks must be 5-D (N,C,d,h,w)");
    for (const auto& b : blocks) {
        require_same_dtype(first, b, "assemble");
        const Shape expect{first.dim(0), first.dim(1), partition.cube_extents[0], partition.cube_extents[1],
                           partition.cube_extents[2]};
        if (b.shape() != expect) {
            throw ShapeError("assemble: block shape " + shape_string(b.shape()) + ", expected " + shape_string(expect));
        }
    }
    const Shape full_shape{first.dim(0), first.dim(1), partition.volume_extents[0], partition.volume_extents[1],
                           partition.volume_extents[2]};
    Tensor out = Tensor::zeros(full_shape, first.dtype());
    dispatch(out.dtype(), [&](auto tag) {
        using T = decltype(tag);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            const auto& o = partition.offsets[i];
            auto bs = blocks[i].data<T>();
            std::span<T> block(const_cast<T*>(bs.data()), bs.size());
            copy_region<T>(out.mutable_data<T>(), full_shape, block, blocks[i].shape(), {0, 0, o[0], o[1], o[2]},
                           false);
        }
    });
    auto& tape = Tape::current();
    if (!tape.should_record(blocks)) return out;
    return tape.record(OpKind::assemble, blocks, out,
                       [partition](const TapeNode& node, const Tensor& g) -> std::vector<Tensor> {
                           std::vector<Tensor> grads;
                           for (std::size_t i = 0; i < node.inputs.size(); ++i) {
                               const auto& o = partition.offsets[i];
                               grads.push_back(node.inputs[i].requires_grad()
                                                   ? slice_view(g, {0, 0, o[0], o[1], o[2]}, node.inputs[i].shape())
                                                   : Tensor());
                           }
                           return grads;
                       });
}

std::vector<Tensor> disassemble(const Tensor& full, const Partition& partition) {
    if (full.rank() != 5) throw ShapeError("disassemble: expected a 5-D tensor");
    for (int a = 0; a < 3; ++a) {
        if (full.dim(2 + a) != partition.volume_extents[a]) {
            throw ShapeError("disassemble: tensor " + shape_string(full.shape()) + " does not match partition volume " +
                             index_string(partition.volume_extents));
        }
    }
    std::vector<Tensor> blocks;
    blocks.reserve(partition.size());
    const auto& c = partition.cube_extents;
    for (const auto& o : partition.offsets) {
        blocks.push_back(slice_view(full, {0, 0, o[0], o[1], o[2]}, {full.dim(0), full.dim(1), c[0], c[1], c[2]}));
    }
    return blocks;
}

} // namespace voxbox
