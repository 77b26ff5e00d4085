#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "voxbox/encoder.hpp"
#include "voxbox/nn.hpp"
#include "voxbox/tensor.hpp"

namespace voxbox {

/// Ordered collection of named trainable tensors. Iteration order is the
/// insertion order, which fixes accumulation and serialization order.
class ParameterSet {
public:
    Tensor& add(std::string name, Tensor value);
    bool contains(const std::string& name) const noexcept;
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;

    auto begin() noexcept { return entries_.begin(); }
    auto end() noexcept { return entries_.end(); }
    auto begin() const noexcept { return entries_.begin(); }
    auto end() const noexcept { return entries_.end(); }
    std::size_t size() const noexcept { return entries_.size(); }

    /// Total number of trainable scalars.
    std::int64_t parameter_count() const noexcept;
    void zero_grad();
    /// Deep copy (values only, no gradients).
    ParameterSet clone() const;

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

struct DecoderConfig {
    std::int64_t d_emb = 768;
    std::int64_t c_proj = 256;
    std::int64_t c_ref = 256;
    std::int64_t c_head = 256;
    /// false: only the deepest level feeds the head.
    bool multi_scale = true;

    void validate() const;
};

/// Adds proj{k}, refine{k} (k = 1..4), fuse, head1, head2 and logits
/// parameters. Weights are Kaiming-uniform, biases zero, norm scales one.
void init_decoder(ParameterSet& params, const DecoderConfig& cfg, std::mt19937_64& rng, DType dtype);

/// Pyramid -> voxel-wise logits (1,1,d,h,w) at the pyramid's source extents.
Tensor decode(const ParameterSet& params, const FeaturePyramid& pyramid, const DecoderConfig& cfg);

} // namespace voxbox
