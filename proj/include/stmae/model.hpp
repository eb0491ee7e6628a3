#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "stmae/fptd.hpp"
#include "stmae/nn.hpp"

namespace stmae {

// Ablation modes: full model, transition removed (identity placement), and
// decoupling removed entirely (plain feature-reconstruction transformer).
enum class Mode { stmae, smae, ae };

enum class Variant { nano, tiny, base, huge };

Mode parse_mode(const std::string& s);
Variant parse_variant(const std::string& s);
std::string to_string(Mode m);
std::string to_string(Variant v);

struct ModelConfig {
    Variant variant = Variant::base;
    int dim = 512;
    int enc_depth = 6;
    int dec_depth = 2;
    int heads = 8;
    int ffb_mult = 4;
    int patch_size = 4;
    Mode mode = Mode::stmae;
    bool siamese = true;  // off-default switch: independent encoder weights

    // Fills dim/depths/heads from the variant preset (decoder stays shallower
    // than the encoder in every preset).
    static ModelConfig preset(Variant v);
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Place each latent subset's tokens at the complementary subset's positions,
// order-preserving over the ascending index lists:
//   out[idx2[j]] = lat1.row(j),  out[idx1[j]] = lat2.row(j)
Mat transition_reassemble(const Mat& lat1, const std::vector<int>& idx1,
                          const Mat& lat2, const std::vector<int>& idx2);

// Identity placement (transition switched off): each subset returns to its
// own index list.
Mat identity_reassemble(const Mat& lat1, const std::vector<int>& idx1,
                        const Mat& lat2, const std::vector<int>& idx2);

// Siamese transition masked autoencoder over a fixed PFDF geometry.
// Weights are immutable during forward; forward is reentrant.
class StMaeModel {
  public:
    StMaeModel(const ModelConfig& config, int pfdf_h, int pfdf_w, int pfdf_c,
               std::uint64_t init_seed);

    struct Trace {
        PatchGrid patches;
        DecoupledPair pair;
        nn::TransformerStack::Cache enc1, enc2;
        nn::TransformerStack::Cache dec;
        nn::Linear::Cache head;
        bool decoupled = false;
    };

    // PFDF -> CARF. Deterministic given (weights, seed); the seed drives the
    // random decoupling only.
    Grid forward(const Grid& pfdf, std::uint64_t seed, Trace* trace = nullptr) const;

    // Backpropagate d(loss)/d(CARF) through the whole pipeline, accumulating
    // parameter gradients into `grads`.
    void backward(const Grid& dcarf, const Trace& trace, nn::GradStore& grads) const;

    nn::ParamRegistry& params() { return registry_; }
    const nn::ParamRegistry& params() const { return registry_; }
    const ModelConfig& config() const { return config_; }
    int token_count() const { return tokens_; }
    int patch_dim() const { return patch_dim_; }
    int pfdf_h() const { return pfdf_h_; }
    int pfdf_w() const { return pfdf_w_; }
    int pfdf_c() const { return pfdf_c_; }

    // Exposed for targeted tests.
    nn::Param& embed_projection() { return embed_proj_; }
    nn::Param& encoder_pos() { return enc_pos_; }
    nn::Param& decoder_pos() { return dec_pos_; }
    nn::TransformerStack& encoder() { return encoder_; }
    nn::TransformerStack& decoder() { return decoder_; }
    nn::Linear& head() { return head_; }

  private:
    ModelConfig config_;
    int pfdf_h_, pfdf_w_, pfdf_c_;
    int tokens_, patch_dim_;
    nn::Param embed_proj_;  // (K^2 C) x D
    nn::Param enc_pos_;     // N x D
    nn::Param dec_pos_;     // N x D
    nn::TransformerStack encoder_;
    std::optional<nn::TransformerStack> encoder2_;  // only when siamese == false
    nn::TransformerStack decoder_;
    nn::Linear head_;       // D -> K^2 C
    nn::ParamRegistry registry_;
};

}  // namespace stmae
