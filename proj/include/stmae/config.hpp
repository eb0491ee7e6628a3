#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stmae/data_io.hpp"
#include "stmae/lpsr.hpp"
#include "stmae/model.hpp"
#include "stmae/residuals.hpp"

namespace stmae {

struct TrainConfig {
    double lr = 1e-4;
    int batch_size = 8;
    int epochs = 400;
    std::string optimizer = "adamw";
    double weight_decay = 0.05;
    std::uint64_t seed = 0;
    Mode mode = Mode::stmae;

    void validate() const;
};

struct DataConfig {
    std::string layout = "mvtec";  // mvtec | folder | frames | synthetic
    std::string root;
    std::string category;       // mvtec
    std::string normal_class;   // folder
    int few_shot_k = 0;         // 0 -> full training set
    std::uint64_t few_shot_seed = 0;
};

// The fully merged run configuration: config file plus --set overrides.
struct RunConfig {
    BackboneConfig backbone;
    NormalizeStats normalize;
    int image_size = 256;
    int pfdf_size = 64;
    int patch_size = 4;                      // fptd.patch_size
    std::string seed_policy = "fresh-per-step";  // fptd.seed_policy
    std::string variant = "base";
    bool siamese = true;
    // Explicit architecture overrides; <= 0 means "use the variant preset".
    int model_dim = 0, enc_depth = 0, dec_depth = -1, heads = 0, ffb_mult = 0;
    double loss_lambda = 5.0;
    LossModality loss_modality = LossModality::both;
    double score_sigma = 4.0;
    std::string score_fusion = "multiply";
    std::string score_image_stat = "std";
    TrainConfig training;
    int tta_rounds = 1;
    DataConfig data;
    SynthSpec synth;

    ModelConfig model_config() const;
    void validate() const;
    std::string to_yaml() const;
};

// Parse the YAML config file, apply `section.key=value` overrides, validate
// every key against the schema. Unknown keys and malformed values raise
// ConfigError before any work starts.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

// Overrides applied to built-in defaults (no file).
RunConfig default_run_config(const std::vector<std::string>& overrides = {});

}  // namespace stmae
