#pragma once

#include <cstdint>
#include <memory>

#include "voxbox/decoder.hpp"
#include "voxbox/encoder.hpp"
#include "voxbox/io.hpp"

namespace voxbox {

struct ModelConfig {
    EncoderConfig encoder;
    /// d_emb is taken from the encoder.
    DecoderConfig decoder;
    bool depth_embedding = true;
    DType dtype = DType::f32;
    /// Seeds decoder initialization.
    std::uint64_t seed = 0;

    void validate() const;
};

enum class ForwardMode { tracked, suspended };

/// Frozen encoder + depth embedding + trainable decoder.
class SegmentationModel {
public:
    explicit SegmentationModel(ModelConfig cfg);

    const ModelConfig& config() const noexcept { return cfg_; }
    const FrozenEncoder& encoder() const noexcept { return *encoder_; }
    ParameterSet& params() noexcept { return params_; }
    const ParameterSet& params() const noexcept { return params_; }

    /// Frozen features of a (1,1,d,h,w) sub-volume, depth embedding added.
    FeaturePyramid features(const Tensor& x, const CubeContext& ctx) const;

    /// unbox -> encode -> box -> depth embedding -> decode. Suspended mode
    /// leaves the tape untouched; both modes compute identical values.
    Tensor forward_subcube(const Tensor& x, const CubeContext& ctx, ForwardMode mode) const;

    /// Replaces parameter values with those from `ckpt`; names and shapes
    /// must match exactly.
    void load_parameters(const Checkpoint& ckpt);
    Checkpoint to_checkpoint(const std::string& config_json) const;

private:
    ModelConfig cfg_;
    std::shared_ptr<const FrozenEncoder> encoder_;
    ParameterSet params_;
};

} // namespace voxbox
