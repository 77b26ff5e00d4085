#include "voxbox/config.hpp"

#include <fstream>
#include <set>

namespace voxbox {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const char* section, std::initializer_list<const char*> known) {
    if (!j.is_object()) throw ConfigError(std::string("config section '") + section + "' must be an object");
    const std::set<std::string> allowed(known.begin(), known.end());
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) throw ConfigError(std::string("unknown key '") + key + "' in section '" + section + "'");
    }
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

json encoder_json(const EncoderConfig& e) {
    return json{{"backend", e.backend == EncoderBackend::toy ? "toy" : "imported"},
                {"native_size", e.native_size},
                {"patch_size", e.patch_size},
                {"d_emb", e.d_emb},
                {"tap_layers", e.tap_layers},
                {"design_depth", e.design_depth},
                {"token_grid", e.token_grid == TokenGrid::native ? "native" : "input"},
                {"toy_heads", e.toy_heads},
                {"toy_mlp_ratio", e.toy_mlp_ratio},
                {"toy_positional", e.toy_positional},
                {"toy_seed", e.toy_seed},
                {"feature_dir", e.feature_dir.string()}};
}

EncoderConfig encoder_from(const json& j) {
    reject_unknown(j, "model.encoder",
                   {"backend", "native_size", "patch_size", "d_emb", "tap_layers", "design_depth", "token_grid", "toy_heads",
                    "toy_mlp_ratio", "toy_positional", "toy_seed", "feature_dir"});
    EncoderConfig e;
    std::string backend = "toy";
    read(j, "backend", backend);
    if (backend == "toy") {
        e.backend = EncoderBackend::toy;
    } else if (backend == "imported") {
        e.backend = EncoderBackend::imported;
    } else {
        throw ConfigError("encoder backend must be 'toy' or 'imported', got '" + backend + "'");
    }
    read(j, "native_size", e.native_size);
    read(j, "patch_size", e.patch_size);
    read(j, "d_emb", e.d_emb);
    read(j, "tap_layers", e.tap_layers);
    read(j, "design_depth", e.design_depth);
    std::string grid = "input";
    read(j, "token_grid", grid);
    if (grid == "native") {
        e.token_grid = TokenGrid::native;
    } else if (grid != "input") {
        throw ConfigError("token_grid must be 'native' or 'input', got '" + grid + "'");
    }
    read(j, "toy_heads", e.toy_heads);
    read(j, "toy_mlp_ratio", e.toy_mlp_ratio);
    read(j, "toy_positional", e.toy_positional);
    read(j, "toy_seed", e.toy_seed);
    std::string dir;
    read(j, "feature_dir", dir);
    e.feature_dir = dir;
    return e;
}

json model_json(const ModelConfig& m) {
    return json{{"encoder", encoder_json(m.encoder)},
                {"decoder",
                 {{"c_proj", m.decoder.c_proj},
                  {"c_ref", m.decoder.c_ref},
                  {"c_head", m.decoder.c_head},
                  {"multi_scale", m.decoder.multi_scale}}},
                {"depth_embedding", m.depth_embedding},
                {"dtype", dtype_name(m.dtype)},
                {"seed", m.seed}};
}

ModelConfig model_from(const json& j) {
    reject_unknown(j, "model", {"encoder", "decoder", "depth_embedding", "dtype", "seed"});
    ModelConfig m;
    if (j.contains("encoder")) m.encoder = encoder_from(j.at("encoder"));
    if (j.contains("decoder")) {
        const json& d = j.at("decoder");
        reject_unknown(d, "model.decoder", {"c_proj", "c_ref", "c_head", "multi_scale"});
        read(d, "c_proj", m.decoder.c_proj);
        read(d, "c_ref", m.decoder.c_ref);
        read(d, "c_head", m.decoder.c_head);
        read(d, "multi_scale", m.decoder.multi_scale);
    }
    read(j, "depth_embedding", m.depth_embedding);
    std::string dtype = dtype_name(m.dtype);
    read(j, "dtype", dtype);
    if (dtype == "f32") {
        m.dtype = DType::f32;
    } else if (dtype == "f64") {
        m.dtype = DType::f64;
    } else {
        throw ConfigError("dtype must be 'f32' or 'f64', got '" + dtype + "'");
    }
    read(j, "seed", m.seed);
    m.decoder.d_emb = m.encoder.d_emb;
    return m;
}

json preprocess_json(const PreprocessConfig& p) {
    json j{{"clip_low_pct", p.clip_low_pct},   {"clip_high_pct", p.clip_high_pct},   {"crop_extent", p.crop_extent},
           {"fg_threshold", p.fg_threshold},   {"aug_flip_prob", p.aug_flip_prob},   {"aug_rot90_prob", p.aug_rot90_prob},
           {"seed", p.seed}};
    j["target_spacing"] = p.target_spacing ? json(*p.target_spacing) : json(nullptr);
    return j;
}

PreprocessConfig preprocess_from(const json& j) {
    reject_unknown(j, "preprocess",
                   {"target_spacing", "clip_low_pct", "clip_high_pct", "crop_extent", "fg_threshold", "aug_flip_prob",
                    "aug_rot90_prob", "seed"});
    PreprocessConfig p;
    if (j.contains("target_spacing") && !j.at("target_spacing").is_null()) {
        Vec3 s{};
        read(j, "target_spacing", s);
        p.target_spacing = s;
    }
    read(j, "clip_low_pct", p.clip_low_pct);
    read(j, "clip_high_pct", p.clip_high_pct);
    read(j, "crop_extent", p.crop_extent);
    read(j, "fg_threshold", p.fg_threshold);
    read(j, "aug_flip_prob", p.aug_flip_prob);
    read(j, "aug_rot90_prob", p.aug_rot90_prob);
    read(j, "seed", p.seed);
    return p;
}

json train_json(const TrainConfig& t) {
    return json{{"epochs", t.epochs},
                {"warmup_epochs", t.warmup_epochs},
                {"early_stop_patience", t.early_stop_patience},
                {"clip_max_norm", t.clip_max_norm},
                {"lr", t.optim.lr},
                {"weight_decay", t.optim.weight_decay},
                {"lambda_dice", t.loss.lambda_dice},
                {"lambda_ce", t.loss.lambda_ce},
                {"dice_smooth", t.loss.smooth},
                {"cubes", t.cubes},
                {"seed", t.seed},
                {"fold", t.fold},
                {"folds", t.folds},
                {"max_steps", t.max_steps},
                {"augment", t.augment}};
}

TrainConfig train_from(const json& j) {
    reject_unknown(j, "train",
                   {"epochs", "warmup_epochs", "early_stop_patience", "clip_max_norm", "lr", "weight_decay",
                    "lambda_dice", "lambda_ce", "dice_smooth", "cubes", "seed", "fold", "folds", "max_steps", "augment"});
    TrainConfig t;
    read(j, "epochs", t.epochs);
    read(j, "warmup_epochs", t.warmup_epochs);
    read(j, "early_stop_patience", t.early_stop_patience);
    read(j, "clip_max_norm", t.clip_max_norm);
    read(j, "lr", t.optim.lr);
    read(j, "weight_decay", t.optim.weight_decay);
    read(j, "lambda_dice", t.loss.lambda_dice);
    read(j, "lambda_ce", t.loss.lambda_ce);
    read(j, "dice_smooth", t.loss.smooth);
    read(j, "cubes", t.cubes);
    read(j, "seed", t.seed);
    read(j, "fold", t.fold);
    read(j, "folds", t.folds);
    read(j, "max_steps", t.max_steps);
    read(j, "augment", t.augment);
    return t;
}

} // namespace

void RunConfig::validate() const {
    model.validate();
    preprocess.validate();
    train.validate();
}

json to_json(const RunConfig& cfg) {
    return json{{"model", model_json(cfg.model)},
                {"preprocess", preprocess_json(cfg.preprocess)},
                {"train", train_json(cfg.train)}};
}

RunConfig run_config_from_json(const json& j) {
    reject_unknown(j, "<root>", {"model", "preprocess", "train"});
    RunConfig cfg;
    if (j.contains("model")) cfg.model = model_from(j.at("model"));
    if (j.contains("preprocess")) cfg.preprocess = preprocess_from(j.at("preprocess"));
    if (j.contains("train")) cfg.train = train_from(j.at("train"));
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

void save_run_config(const RunConfig& cfg, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << to_json(cfg).dump(2) << '\n';
}

ModelConfig model_config_from_checkpoint(const std::string& config_json) {
    json j;
    try {
        j = json::parse(config_json);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("checkpoint config is not valid JSON: ") + e.what());
    }
    if (!j.contains("model")) throw ConfigError("checkpoint config has no model section");
    return model_from(j.at("model"));
}

} // namespace voxbox
