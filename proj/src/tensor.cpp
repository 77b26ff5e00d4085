#include "voxbox/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <numeric>
#include <sstream>

namespace voxbox {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

void MemoryMeter::allocate(std::int64_t bytes) noexcept {
    live_bytes_ += bytes;
    ++allocations_;
    peak_bytes_ = std::max(peak_bytes_, live_bytes_);
}

void MemoryMeter::release(std::int64_t bytes) noexcept {
    live_bytes_ = std::max<std::int64_t>(0, live_bytes_ - bytes);
}

MemoryMeter& data_meter() noexcept {
    thread_local MemoryMeter meter;
    return meter;
}

MemoryMeter& grad_meter() noexcept {
    thread_local MemoryMeter meter;
    return meter;
}

std::size_t dtype_size(DType dtype) noexcept {
    return dtype == DType::f32 ? sizeof(float) : sizeof(double);
}

const char* dtype_name(DType dtype) noexcept {
    return dtype == DType::f32 ? "f32" : "f64";
}

std::int64_t shape_numel(const Shape& shape) noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Buffer::Buffer(DType dtype, std::size_t count, MemoryMeter& meter) : dtype_(dtype), meter_(&meter) {
    if (dtype == DType::f32) {
        storage_ = std::vector<float>(count, 0.0f);
    } else {
        storage_ = std::vector<double>(count, 0.0);
    }
    meter_->allocate(bytes());
}

Buffer::~Buffer() { meter_->release(bytes()); }

std::size_t Buffer::size() const noexcept {
    return std::visit([](const auto& v) { return v.size(); }, storage_);
}

namespace {

void check_shape(const Shape& shape) {
    for (auto e : shape) {
        if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
    }
}

} // namespace

Tensor Tensor::zeros(const Shape& shape, DType dtype) {
    check_shape(shape);
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = shape;
    impl->data = std::make_shared<Buffer>(dtype, static_cast<std::size_t>(shape_numel(shape)), data_meter());
    return Tensor(std::move(impl));
}

Tensor Tensor::full(const Shape& shape, double value, DType dtype) {
    Tensor t = zeros(shape, dtype);
    dispatch(dtype, [&](auto tag) {
        using T = decltype(tag);
        auto d = t.mutable_data<T>();
        std::fill(d.begin(), d.end(), static_cast<T>(value));
    });
    return t;
}

Tensor Tensor::from_values(const Shape& shape, std::span<const double> values, DType dtype) {
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
        throw ShapeError("from_values: " + std::to_string(values.size()) + " values for shape " + shape_string(shape));
    }
    Tensor t = zeros(shape, dtype);
    dispatch(dtype, [&](auto tag) {
        using T = decltype(tag);
        auto d = t.mutable_data<T>();
        std::transform(values.begin(), values.end(), d.begin(), [](double v) { return static_cast<T>(v); });
    });
    return t;
}

Tensor Tensor::from_values(const Shape& shape, std::initializer_list<double> values, DType dtype) {
    return from_values(shape, std::span<const double>(values.begin(), values.size()), dtype);
}

std::vector<double> Tensor::to_vector() const {
    return dispatch(dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto d = data<T>();
        return std::vector<double>(d.begin(), d.end());
    });
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
    return to_vector()[0];
}

Tensor Tensor::clone() const {
    Tensor out = zeros(shape(), dtype());
    dispatch(dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto src = data<T>();
        std::copy(src.begin(), src.end(), out.mutable_data<T>().begin());
    });
    return out;
}

Tensor Tensor::to(DType target) const {
    if (target == dtype()) return clone();
    return from_values(shape(), to_vector(), target);
}

Tensor& Tensor::set_requires_grad(bool flag) {
    if (impl_->node) throw TapeError("set_requires_grad is only valid on leaf tensors");
    impl_->requires_grad = flag;
    if (!flag) impl_->grad.reset();
    return *this;
}

Tensor Tensor::grad() const {
    if (!has_grad()) return {};
    auto g = std::make_shared<TensorImpl>();
    g->shape = impl_->shape;
    g->data = impl_->grad;
    return Tensor(std::move(g));
}

void Tensor::zero_grad() { impl_->grad.reset(); }

void Tensor::accumulate_grad(const Tensor& delta) {
    if (!requires_grad()) throw TapeError("accumulate_grad on a tensor that does not require grad");
    if (delta.shape() != shape() || delta.dtype() != dtype()) {
        throw ShapeError("gradient " + shape_string(delta.shape()) + " does not match tensor " + shape_string(shape()));
    }
    if (!impl_->grad) {
        impl_->grad = std::make_shared<Buffer>(dtype(), static_cast<std::size_t>(numel()), grad_meter());
    }
    dispatch(dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto g = impl_->grad->span<T>();
        auto d = delta.data<T>();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += d[i];
    });
}

void Tensor::scale_grad(double factor) {
    if (!impl_->grad) return;
    dispatch(dtype(), [&](auto tag) {
        using T = decltype(tag);
        for (auto& v : impl_->grad->span<T>()) v = static_cast<T>(v * factor);
    });
}

Tensor detach(const Tensor& t) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = t.shape();
    impl->data = t.impl()->data;
    return Tensor(std::move(impl));
}

namespace {

template <class V>
void put(std::vector<std::uint8_t>& out, V value) {
    std::uint8_t raw[sizeof(V)];
    std::memcpy(raw, &value, sizeof(V));
    out.insert(out.end(), raw, raw + sizeof(V));
}

template <class V>
V take(std::span<const std::uint8_t> bytes, std::size_t& offset) {
    if (offset + sizeof(V) > bytes.size()) throw TruncatedError("tensor blob truncated");
    V value;
    std::memcpy(&value, bytes.data() + offset, sizeof(V));
    offset += sizeof(V);
    return value;
}

} // namespace

std::vector<std::uint8_t> serialize_tensor(const Tensor& t) {
    std::vector<std::uint8_t> out{'V', 'X', 'T', '1'};
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (auto e : t.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(e));
    dispatch(t.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto d = t.data<T>();
        const auto* raw = reinterpret_cast<const std::uint8_t*>(d.data());
        out.insert(out.end(), raw, raw + d.size_bytes());
    });
    return out;
}

Tensor deserialize_tensor(std::span<const std::uint8_t> bytes, std::size_t& offset) {
    if (offset + 4 > bytes.size() || std::memcmp(bytes.data() + offset, "VXT1", 4) != 0) {
        throw BadMagicError("expected VXT1 tensor blob");
    }
    offset += 4;
    auto code = take<std::uint8_t>(bytes, offset);
    if (code > 1) throw UnsupportedDtypeError("VXT1 dtype code " + std::to_string(code));
    auto rank = take<std::uint8_t>(bytes, offset);
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<std::int64_t>(take<std::uint64_t>(bytes, offset));
    Tensor t = Tensor::zeros(shape, static_cast<DType>(code));
    dispatch(t.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto d = t.mutable_data<T>();
        if (offset + d.size_bytes() > bytes.size()) throw TruncatedError("VXT1 payload truncated");
        std::memcpy(d.data(), bytes.data() + offset, d.size_bytes());
        offset += d.size_bytes();
    });
    return t;
}

} // namespace voxbox
