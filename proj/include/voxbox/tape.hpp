#pragma once

#include <functional>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "voxbox/tensor.hpp"

namespace voxbox {

enum class OpKind {
    add,
    sub,
    mul,
    relu,
    sigmoid,
    scale,
    sum,
    mean,
    matmul,
    reshape,
    concat,
    slice,
    assemble,
    conv3d,
    conv_transpose3d,
    instance_norm3d,
    interp_trilinear,
    dice_ce_loss,
};

std::string_view op_name(OpKind kind) noexcept;

struct TapeNode;

/// Returns one gradient per input (undefined where the input gets none).
using BackwardFn = std::function<std::vector<Tensor>(const TapeNode& node, const Tensor& grad_out)>;

struct TapeNode {
    OpKind kind;
    std::vector<Tensor> inputs;
    Tensor output;
    std::vector<Tensor> saved;
    BackwardFn backward;
};

/// Reverse-mode record of a forward computation. Each thread owns one tape,
/// reachable through `Tape::current()`.
class Tape {
public:
    enum class Mode { recording, suspended };

    static Tape& current() noexcept;

    Mode mode() const noexcept { return mode_; }
    bool recording() const noexcept { return mode_ == Mode::recording; }
    void set_mode(Mode mode) noexcept { mode_ = mode; }

    /// True when an op with these inputs must be recorded.
    bool should_record(std::initializer_list<const Tensor*> inputs) const noexcept;
    bool should_record(const std::vector<Tensor>& inputs) const noexcept;

    /// Appends a node and wires `output` to it. Returns `output`.
    Tensor record(OpKind kind, std::vector<Tensor> inputs, Tensor output, BackwardFn backward,
                  std::vector<Tensor> saved = {});

    std::size_t size() const noexcept { return nodes_.size(); }
    const TapeNode& node(std::size_t index) const { return nodes_.at(index); }
    std::uint64_t generation() const noexcept { return generation_; }
    bool holds(const Tensor& t) const noexcept;

    /// Drops every node; tensors produced earlier can no longer seed backward.
    void clear();

    /// Bytes of distinct storage kept alive by recorded nodes.
    const MemoryMeter& meter() const noexcept { return meter_; }
    void reset_peak() noexcept { meter_.reset_peak(); }

private:
    void account(const Tensor& t);

    Mode mode_ = Mode::recording;
    std::vector<TapeNode> nodes_;
    std::uint64_t generation_ = 1;
    std::unordered_set<const Buffer*> counted_;
    MemoryMeter meter_;
};

/// Suspends recording on the current thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard() noexcept : previous_(Tape::current().mode()) { Tape::current().set_mode(Tape::Mode::suspended); }
    ~NoGradGuard() { Tape::current().set_mode(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    Tape::Mode previous_;
};

/// Accumulates d(root)/d(leaf) · seed into every trainable leaf reachable
/// from `root`. Gradients add onto whatever the leaves already hold.
void backward(const Tensor& root, const Tensor& seed);
/// Seeds with ones; `root` must be a scalar.
void backward(const Tensor& root);

} // namespace voxbox
