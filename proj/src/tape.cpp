#include "voxbox/tape.hpp"

#include <algorithm>

namespace voxbox {

std::string_view op_name(OpKind kind) noexcept {
    switch (kind) {
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::scale: return "scale";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::matmul: return "matmul";
    case OpKind::reshape: return "reshape";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::assemble: return "assemble";
    case OpKind::conv3d: return "conv3d";
    case OpKind::conv_transpose3d: return "conv_transpose3d";
    case OpKind::instance_norm3d: return "instance_norm3d";
    case OpKind::interp_trilinear: return "interp_trilinear";
    case OpKind::dice_ce_loss: return "dice_ce_loss";
    }
    return "unknown";
}

Tape& Tape::current() noexcept {
    thread_local Tape tape;
    return tape;
}

bool Tape::should_record(std::initializer_list<const Tensor*> inputs) const noexcept {
    if (!recording()) return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t && t->requires_grad(); });
}

bool Tape::should_record(const std::vector<Tensor>& inputs) const noexcept {
    if (!recording()) return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
}

void Tape::account(const Tensor& t) {
    if (!t.defined()) return;
    if (counted_.insert(t.storage()).second) meter_.allocate(t.bytes());
}

Tensor Tape::record(OpKind kind, std::vector<Tensor> inputs, Tensor output, BackwardFn backward,
                    std::vector<Tensor> saved) {
    auto impl = output.impl();
    impl->requires_grad = true;
    impl->node = NodeHandle{generation_, nodes_.size()};
    for (const auto& t : inputs) account(t);
    account(output);
    for (const auto& t : saved) account(t);
    nodes_.push_back(TapeNode{kind, std::move(inputs), output, std::move(saved), std::move(backward)});
    return output;
}

bool Tape::holds(const Tensor& t) const noexcept {
    if (!t.defined() || !t.node()) return false;
    const auto& h = *t.node();
    return h.generation == generation_ && h.index < nodes_.size();
}

void Tape::clear() {
    nodes_.clear();
    counted_.clear();
    meter_.release(meter_.live_bytes());
    ++generation_;
}

void backward(const Tensor& root, const Tensor& seed) {
    auto& tape = Tape::current();
    if (!root.defined() || !tape.holds(root)) throw TapeError("backward: root is not recorded on the current tape");
    if (seed.shape() != root.shape()) {
        throw TapeError("backward: seed shape " + shape_string(seed.shape()) + " does not match root " +
                        shape_string(root.shape()));
    }
    if (seed.dtype() != root.dtype()) throw TapeError("backward: seed dtype differs from root dtype");

    NoGradGuard guard;
    const std::size_t root_index = root.node()->index;
    std::vector<Tensor> pending(root_index + 1);
    pending[root_index] = seed;

    for (std::size_t i = root_index + 1; i-- > 0;) {
        if (!pending[i].defined()) continue;
        const TapeNode& node = tape.node(i);
        Tensor grad_out = std::move(pending[i]);
        pending[i] = Tensor();
        std::vector<Tensor> grads = node.backward(node, grad_out);
        for (std::size_t j = 0; j < node.inputs.size() && j < grads.size(); ++j) {
            const Tensor& input = node.inputs[j];
            if (!input.requires_grad() || !grads[j].defined()) continue;
            if (tape.holds(input)) {
                Tensor& slot = pending[input.node()->index];
                if (!slot.defined()) {
                    slot = grads[j];
                } else {
                    // sum into a fresh buffer; grads returned by ops may alias inputs
                    Tensor merged = slot.clone();
                    dispatch(merged.dtype(), [&](auto tag) {
                        using T = decltype(tag);
                        auto m = merged.mutable_data<T>();
                        auto g = grads[j].data<T>();
                        for (std::size_t k = 0; k < m.size(); ++k) m[k] += g[k];
                    });
                    slot = std::move(merged);
                }
            } else if (input.is_leaf()) {
                Tensor leaf = input;
                leaf.accumulate_grad(grads[j]);
            }
        }
    }
}

void backward(const Tensor& root) {
    if (root.numel() != 1) throw TapeError("backward without seed requires a scalar root");
    backward(root, Tensor::full(root.shape(), 1.0, root.dtype()));
}

} // namespace voxbox
