#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "voxbox/error.hpp"
#include "voxbox/memory.hpp"

namespace voxbox {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::int64_t>;

std::size_t dtype_size(DType dtype) noexcept;
const char* dtype_name(DType dtype) noexcept;
std::int64_t shape_numel(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

template <class T>
constexpr DType dtype_of() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

/// Calls `fn(T{})` with T the scalar type matching `dtype`.
template <class Fn>
decltype(auto) dispatch(DType dtype, Fn&& fn) {
    if (dtype == DType::f32) return fn(float{});
    return fn(double{});
}

/// Flat, metered storage for one dtype.
class Buffer {
public:
    Buffer(DType dtype, std::size_t count, MemoryMeter& meter);
    ~Buffer();
    Buffer(const Buffer&) = delete;
    Buffer& operator=(const Buffer&) = delete;

    DType dtype() const noexcept { return dtype_; }
    std::size_t size() const noexcept;
    std::int64_t bytes() const noexcept { return static_cast<std::int64_t>(size() * dtype_size(dtype_)); }

    template <class T>
    std::span<T> span() {
        return std::get<std::vector<T>>(storage_);
    }
    template <class T>
    std::span<const T> span() const {
        return std::get<std::vector<T>>(storage_);
    }

private:
    DType dtype_;
    std::variant<std::vector<float>, std::vector<double>> storage_;
    MemoryMeter* meter_;
};

/// Identifies a node on a specific recording of the tape.
struct NodeHandle {
    std::uint64_t generation = 0;
    std::size_t index = 0;
};

struct TensorImpl {
    Shape shape;
    std::shared_ptr<Buffer> data;
    bool requires_grad = false;
    std::shared_ptr<Buffer> grad;
    std::optional<NodeHandle> node;
};

/// Dense row-major tensor. Copies share storage; values are immutable once a
/// tensor participates in a recorded computation.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, DType dtype = DType::f32);
    static Tensor full(const Shape& shape, double value, DType dtype = DType::f32);
    /// Converts `values` to `dtype`.
    static Tensor from_values(const Shape& shape, std::span<const double> values, DType dtype = DType::f32);
    static Tensor from_values(const Shape& shape, std::initializer_list<double> values, DType dtype = DType::f32);
    template <class T>
    static Tensor from_vector(const Shape& shape, std::vector<T> values);

    bool defined() const noexcept { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::int64_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
    std::size_t rank() const { return impl_->shape.size(); }
    std::int64_t numel() const { return shape_numel(impl_->shape); }
    DType dtype() const { return impl_->data->dtype(); }
    std::int64_t bytes() const { return impl_->data->bytes(); }

    template <class T>
    std::span<const T> data() const;
    /// Writable view. Only valid on tensors that are not recorded on a tape.
    template <class T>
    std::span<T> mutable_data();

    std::vector<double> to_vector() const;
    double item() const;
    /// Deep copy with fresh storage and no autograd state.
    Tensor clone() const;
    Tensor to(DType dtype) const;

    bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }
    /// Marks a leaf as trainable. Dropping the flag also drops its gradient.
    Tensor& set_requires_grad(bool flag);
    bool is_leaf() const noexcept { return impl_ && !impl_->node; }
    const std::optional<NodeHandle>& node() const { return impl_->node; }

    bool has_grad() const noexcept { return impl_ && impl_->grad != nullptr; }
    /// Gradient as a detached tensor sharing the gradient storage.
    Tensor grad() const;
    void zero_grad();
    /// Adds `delta` into the gradient buffer, allocating it on first use.
    void accumulate_grad(const Tensor& delta);
    /// Multiplies the gradient in place (used for norm clipping).
    void scale_grad(double factor);

    bool same_storage(const Tensor& other) const noexcept {
        return impl_ && other.impl_ && impl_->data == other.impl_->data;
    }
    const Buffer* storage() const noexcept { return impl_ ? impl_->data.get() : nullptr; }

    std::shared_ptr<TensorImpl> impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<TensorImpl> impl_;
};

template <class T>
Tensor Tensor::from_vector(const Shape& shape, std::vector<T> values) {
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
        throw ShapeError("from_vector: " + std::to_string(values.size()) + " values for shape " + shape_string(shape));
    }
    Tensor t = zeros(shape, dtype_of<T>());
    std::copy(values.begin(), values.end(), t.mutable_data<T>().begin());
    return t;
}

template <class T>
std::span<const T> Tensor::data() const {
    if (dtype() != dtype_of<T>()) {
        throw ShapeError(std::string("tensor dtype is ") + dtype_name(dtype()) + ", requested " + dtype_name(dtype_of<T>()));
    }
    return static_cast<const Buffer&>(*impl_->data).span<T>();
}

template <class T>
std::span<T> Tensor::mutable_data() {
    if (dtype() != dtype_of<T>()) {
        throw ShapeError(std::string("tensor dtype is ") + dtype_name(dtype()) + ", requested " + dtype_name(dtype_of<T>()));
    }
    return impl_->data->span<T>();
}

/// Same values and storage, never tracked.
Tensor detach(const Tensor& t);

/// Binary checkpoint blob: "VXT1", dtype u8, rank u8, u64 LE extents, raw data.
std::vector<std::uint8_t> serialize_tensor(const Tensor& t);
/// Parses one blob starting at `offset`; advances `offset` past it.
Tensor deserialize_tensor(std::span<const std::uint8_t> bytes, std::size_t& offset);

} // namespace voxbox
