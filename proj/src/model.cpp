#include "voxbox/model.hpp"

#include <random>

#include "voxbox/tape.hpp"

namespace voxbox {

void ModelConfig::validate() const {
    encoder.validate();
    DecoderConfig d = decoder;
    d.d_emb = encoder.d_emb;
    d.validate();
}

SegmentationModel::SegmentationModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.decoder.d_emb = cfg_.encoder.d_emb;
    cfg_.validate();
    encoder_ = make_encoder(cfg_.encoder);
    std::mt19937_64 rng(cfg_.seed);
    if (cfg_.depth_embedding) {
        params_.add("depth_embedding.table", Tensor::zeros({cfg_.encoder.d_emb, cfg_.encoder.design_depth}, cfg_.dtype));
    }
    init_decoder(params_, cfg_.decoder, rng, cfg_.dtype);
}

FeaturePyramid SegmentationModel::features(const Tensor& x, const CubeContext& ctx) const {
    FeaturePyramid pyr = encode_subvolume(*encoder_, x, ctx, cfg_.dtype);
    if (!cfg_.depth_embedding) return pyr;
    return add_depth_embedding(pyr, params_.at("depth_embedding.table"), true);
}

Tensor SegmentationModel::forward_subcube(const Tensor& x, const CubeContext& ctx, ForwardMode mode) const {
    if (mode == ForwardMode::suspended) {
        NoGradGuard guard;
        return decode(params_, features(x, ctx), cfg_.decoder);
    }
    return decode(params_, features(x, ctx), cfg_.decoder);
}

void SegmentationModel::load_parameters(const Checkpoint& ckpt) {
    if (ckpt.tensors.size() != params_.size()) {
        throw ConfigError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model has " +
                          std::to_string(params_.size()) + " parameters");
    }
    ParameterSet loaded;
    for (const auto& [name, p] : params_) {
        const auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end()) throw ConfigError("checkpoint lacks parameter '" + name + "'");
        if (it->second.shape() != p.shape()) {
            throw ConfigError("checkpoint parameter '" + name + "' has shape " + shape_string(it->second.shape()) +
                              ", model expects " + shape_string(p.shape()));
        }
        loaded.add(name, it->second.to(cfg_.dtype));
    }
    params_ = std::move(loaded);
}

Checkpoint SegmentationModel::to_checkpoint(const std::string& config_json) const {
    Checkpoint c;
    c.config_json = config_json;
    for (const auto& [name, p] : params_) c.tensors.emplace(name, detach(p).clone());
    return c;
}

} // namespace voxbox
