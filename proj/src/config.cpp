#include "stmae/config.hpp"

#include <yaml-cpp/yaml.h>

#include <set>
#include <sstream>

namespace stmae {

void TrainConfig::validate() const {
    if (lr <= 0.0) throw ConfigError("training.lr must be positive");
    if (batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("training.epochs must be >= 1");
    if (optimizer != "adamw") throw ConfigError("training.optimizer: only 'adamw' is supported");
    if (weight_decay < 0.0) throw ConfigError("training.weight_decay must be nonnegative");
}

ModelConfig RunConfig::model_config() const {
    ModelConfig mc = ModelConfig::preset(parse_variant(variant));
    if (model_dim > 0) mc.dim = model_dim;
    if (enc_depth > 0) mc.enc_depth = enc_depth;
    if (dec_depth >= 0) mc.dec_depth = dec_depth;
    if (heads > 0) mc.heads = heads;
    if (ffb_mult > 0) mc.ffb_mult = ffb_mult;
    mc.patch_size = patch_size;
    mc.mode = training.mode;
    mc.siamese = siamese;
    mc.validate();
    return mc;
}

void RunConfig::validate() const {
    if (image_size <= 0) throw ConfigError("image.size must be positive");
    if (pfdf_size <= 0) throw ConfigError("pfdf.size must be positive");
    if (pfdf_size % patch_size != 0)
        throw ConfigError("pfdf.size must be divisible by fptd.patch_size");
    if (seed_policy != "fresh-per-step" && seed_policy != "fixed")
        throw ConfigError("fptd.seed_policy must be fresh-per-step or fixed");
    if (loss_lambda < 0.0) throw ConfigError("loss.lambda must be nonnegative");
    if (score_sigma <= 0.0) throw ConfigError("score.sigma must be positive");
    if (score_fusion != "multiply") throw ConfigError("score.fusion: only 'multiply' is supported");
    if (score_image_stat != "std") throw ConfigError("score.image_stat: only 'std' is supported");
    if (tta_rounds < 1) throw ConfigError("eval.tta_rounds must be >= 1");
    const std::set<std::string> layouts = {"mvtec", "folder", "frames", "synthetic"};
    if (!layouts.count(data.layout)) throw ConfigError("data.layout: unknown layout " + data.layout);
    training.validate();
    model_config();  // validates the architecture
}

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "backbone.name", "backbone.weights", "backbone.taps",
        "normalize.mean", "normalize.std",
        "image.size",
        "pfdf.size",
        "fptd.patch_size", "fptd.seed_policy",
        "model.variant", "model.siamese", "model.dim", "model.enc_depth", "model.dec_depth",
        "model.heads", "model.ffb_mult",
        "loss.lambda", "loss.modality",
        "score.sigma", "score.fusion", "score.image_stat",
        "training.lr", "training.batch_size", "training.epochs", "training.optimizer",
        "training.weight_decay", "training.seed", "training.mode",
        "eval.tta_rounds",
        "data.layout", "data.root", "data.category", "data.normal_class",
        "data.few_shot_k", "data.few_shot_seed",
        "synth.resolution", "synth.train_count", "synth.test_normal", "synth.test_anomalous",
        "synth.anomaly_types", "synth.texture_components", "synth.noise_level",
        "synth.blob_delta", "synth.seed",
    };
    return keys;
}

LossModality parse_modality(const std::string& s) {
    if (s == "intensity") return LossModality::intensity;
    if (s == "orientation") return LossModality::orientation;
    if (s == "both") return LossModality::both;
    throw ConfigError("loss.modality must be intensity|orientation|both, got " + s);
}

std::string modality_name(LossModality m) {
    switch (m) {
        case LossModality::intensity: return "intensity";
        case LossModality::orientation: return "orientation";
        case LossModality::both: return "both";
    }
    return {};
}

template <typename T>
T get_scalar(const YAML::Node& n, const std::string& key) {
    try {
        return n.as<T>();
    } catch (const YAML::Exception&) {
        throw ConfigError("config key '" + key + "' has an invalid value");
    }
}

void apply_node(RunConfig& cfg, const std::string& key, const YAML::Node& value) {
    if (!known_keys().count(key)) throw ConfigError("unknown config key: " + key);
    if (key == "backbone.name") cfg.backbone.name = get_scalar<std::string>(value, key);
    else if (key == "backbone.weights") cfg.backbone.weights = get_scalar<std::string>(value, key);
    else if (key == "backbone.taps") cfg.backbone.taps = get_scalar<std::vector<int>>(value, key);
    else if (key == "normalize.mean") {
        auto v = get_scalar<std::vector<double>>(value, key);
        if (v.size() != 3) throw ConfigError("normalize.mean needs 3 values");
        std::copy(v.begin(), v.end(), cfg.normalize.mean.begin());
    } else if (key == "normalize.std") {
        auto v = get_scalar<std::vector<double>>(value, key);
        if (v.size() != 3) throw ConfigError("normalize.std needs 3 values");
        std::copy(v.begin(), v.end(), cfg.normalize.stddev.begin());
    }
    else if (key == "image.size") cfg.image_size = get_scalar<int>(value, key);
    else if (key == "pfdf.size") cfg.pfdf_size = get_scalar<int>(value, key);
    else if (key == "fptd.patch_size") cfg.patch_size = get_scalar<int>(value, key);
    else if (key == "fptd.seed_policy") cfg.seed_policy = get_scalar<std::string>(value, key);
    else if (key == "model.variant") cfg.variant = get_scalar<std::string>(value, key);
    else if (key == "model.siamese") cfg.siamese = get_scalar<bool>(value, key);
    else if (key == "model.dim") cfg.model_dim = get_scalar<int>(value, key);
    else if (key == "model.enc_depth") cfg.enc_depth = get_scalar<int>(value, key);
    else if (key == "model.dec_depth") cfg.dec_depth = get_scalar<int>(value, key);
    else if (key == "model.heads") cfg.heads = get_scalar<int>(value, key);
    else if (key == "model.ffb_mult") cfg.ffb_mult = get_scalar<int>(value, key);
    else if (key == "loss.lambda") cfg.loss_lambda = get_scalar<double>(value, key);
    else if (key == "loss.modality") cfg.loss_modality = parse_modality(get_scalar<std::string>(value, key));
    else if (key == "score.sigma") cfg.score_sigma = get_scalar<double>(value, key);
    else if (key == "score.fusion") cfg.score_fusion = get_scalar<std::string>(value, key);
    else if (key == "score.image_stat") cfg.score_image_stat = get_scalar<std::string>(value, key);
    else if (key == "training.lr") cfg.training.lr = get_scalar<double>(value, key);
    else if (key == "training.batch_size") cfg.training.batch_size = get_scalar<int>(value, key);
    else if (key == "training.epochs") cfg.training.epochs = get_scalar<int>(value, key);
    else if (key == "training.optimizer") cfg.training.optimizer = get_scalar<std::string>(value, key);
    else if (key == "training.weight_decay") cfg.training.weight_decay = get_scalar<double>(value, key);
    else if (key == "training.seed") cfg.training.seed = get_scalar<std::uint64_t>(value, key);
    else if (key == "training.mode") cfg.training.mode = parse_mode(get_scalar<std::string>(value, key));
    else if (key == "eval.tta_rounds") cfg.tta_rounds = get_scalar<int>(value, key);
    else if (key == "data.layout") cfg.data.layout = get_scalar<std::string>(value, key);
    else if (key == "data.root") cfg.data.root = get_scalar<std::string>(value, key);
    else if (key == "data.category") cfg.data.category = get_scalar<std::string>(value, key);
    else if (key == "data.normal_class") cfg.data.normal_class = get_scalar<std::string>(value, key);
    else if (key == "data.few_shot_k") cfg.data.few_shot_k = get_scalar<int>(value, key);
    else if (key == "data.few_shot_seed") cfg.data.few_shot_seed = get_scalar<std::uint64_t>(value, key);
    else if (key == "synth.resolution") cfg.synth.resolution = get_scalar<int>(value, key);
    else if (key == "synth.train_count") cfg.synth.train_count = get_scalar<int>(value, key);
    else if (key == "synth.test_normal") cfg.synth.test_normal = get_scalar<int>(value, key);
    else if (key == "synth.test_anomalous") cfg.synth.test_anomalous = get_scalar<int>(value, key);
    else if (key == "synth.anomaly_types")
        cfg.synth.anomaly_types = get_scalar<std::vector<std::string>>(value, key);
    else if (key == "synth.texture_components") cfg.synth.texture_components = get_scalar<int>(value, key);
    else if (key == "synth.noise_level") cfg.synth.noise_level = get_scalar<double>(value, key);
    else if (key == "synth.blob_delta") cfg.synth.blob_delta = get_scalar<double>(value, key);
    else if (key == "synth.seed") cfg.synth.seed = get_scalar<std::uint64_t>(value, key);
}

void apply_tree(RunConfig& cfg, const YAML::Node& root) {
    if (!root.IsMap()) throw ConfigError("config root must be a mapping of sections");
    for (const auto& section : root) {
        const std::string sname = section.first.as<std::string>();
        if (!section.second.IsMap())
            throw ConfigError("config section '" + sname + "' must be a mapping");
        for (const auto& kv : section.second)
            apply_node(cfg, sname + "." + kv.first.as<std::string>(), kv.second);
    }
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
    for (const std::string& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override must look like section.key=value, got: " + ov);
        const std::string key = ov.substr(0, eq);
        const std::string val = ov.substr(eq + 1);
        apply_node(cfg, key, YAML::Load(val));
    }
}

}  // namespace

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    YAML::Node root;
    try {
        root = YAML::LoadFile(path);
    } catch (const YAML::BadFile&) {
        throw ConfigError("cannot open config file: " + path);
    } catch (const YAML::Exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    RunConfig cfg;
    apply_tree(cfg, root);
    apply_overrides(cfg, overrides);
    cfg.validate();
    return cfg;
}

RunConfig default_run_config(const std::vector<std::string>& overrides) {
    RunConfig cfg;
    apply_overrides(cfg, overrides);
    cfg.validate();
    return cfg;
}

std::string RunConfig::to_yaml() const {
    YAML::Emitter out;
    auto seq = [](const auto& v) {
        YAML::Node n(YAML::NodeType::Sequence);
        for (const auto& x : v) n.push_back(x);
        n.SetStyle(YAML::EmitterStyle::Flow);
        return n;
    };
    YAML::Node root;
    root["backbone"]["name"] = backbone.name;
    root["backbone"]["weights"] = backbone.weights;
    root["backbone"]["taps"] = seq(backbone.taps);
    root["normalize"]["mean"] = seq(normalize.mean);
    root["normalize"]["std"] = seq(normalize.stddev);
    root["image"]["size"] = image_size;
    root["pfdf"]["size"] = pfdf_size;
    root["fptd"]["patch_size"] = patch_size;
    root["fptd"]["seed_policy"] = seed_policy;
    root["model"]["variant"] = variant;
    root["model"]["siamese"] = siamese;
    const ModelConfig mc = model_config();
    root["model"]["dim"] = mc.dim;
    root["model"]["enc_depth"] = mc.enc_depth;
    root["model"]["dec_depth"] = mc.dec_depth;
    root["model"]["heads"] = mc.heads;
    root["model"]["ffb_mult"] = mc.ffb_mult;
    root["loss"]["lambda"] = loss_lambda;
    root["loss"]["modality"] = modality_name(loss_modality);
    root["score"]["sigma"] = score_sigma;
    root["score"]["fusion"] = score_fusion;
    root["score"]["image_stat"] = score_image_stat;
    root["training"]["lr"] = training.lr;
    root["training"]["batch_size"] = training.batch_size;
    root["training"]["epochs"] = training.epochs;
    root["training"]["optimizer"] = training.optimizer;
    root["training"]["weight_decay"] = training.weight_decay;
    root["training"]["seed"] = training.seed;
    root["training"]["mode"] = to_string(training.mode);
    root["eval"]["tta_rounds"] = tta_rounds;
    root["data"]["layout"] = data.layout;
    root["data"]["root"] = data.root;
    root["data"]["category"] = data.category;
    root["data"]["normal_class"] = data.normal_class;
    root["data"]["few_shot_k"] = data.few_shot_k;
    root["data"]["few_shot_seed"] = data.few_shot_seed;
    root["synth"]["resolution"] = synth.resolution;
    root["synth"]["train_count"] = synth.train_count;
    root["synth"]["test_normal"] = synth.test_normal;
    root["synth"]["test_anomalous"] = synth.test_anomalous;
    root["synth"]["anomaly_types"] = seq(synth.anomaly_types);
    root["synth"]["texture_components"] = synth.texture_components;
    root["synth"]["noise_level"] = synth.noise_level;
    root["synth"]["blob_delta"] = synth.blob_delta;
    root["synth"]["seed"] = synth.seed;
    out << root;
    std::ostringstream os;
    os << out.c_str() << "\n";
    return os.str();
}

}  // namespace stmae
