#include "stmae/model.hpp"

#include <cassert>

namespace stmae {

Mode parse_mode(const std::string& s) {
    if (s == "stmae") return Mode::stmae;
    if (s == "smae") return Mode::smae;
    if (s == "ae") return Mode::ae;
    throw ConfigError("unknown mode: " + s + " (expected stmae|smae|ae)");
}

Variant parse_variant(const std::string& s) {
    if (s == "nano") return Variant::nano;
    if (s == "tiny") return Variant::tiny;
    if (s == "base") return Variant::base;
    if (s == "huge") return Variant::huge;
    throw ConfigError("unknown variant: " + s + " (expected nano|tiny|base|huge)");
}

std::string to_string(Mode m) {
    switch (m) {
        case Mode::stmae: return "stmae";
        case Mode::smae: return "smae";
        case Mode::ae: return "ae";
    }
    return {};
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::nano: return "nano";
        case Variant::tiny: return "tiny";
        case Variant::base: return "base";
        case Variant::huge: return "huge";
    }
    return {};
}

ModelConfig ModelConfig::preset(Variant v) {
    ModelConfig c;
    c.variant = v;
    switch (v) {
        case Variant::nano: c.dim = 128; c.enc_depth = 2; c.dec_depth = 1; c.heads = 4; break;
        case Variant::tiny: c.dim = 256; c.enc_depth = 4; c.dec_depth = 1; c.heads = 8; break;
        case Variant::base: c.dim = 512; c.enc_depth = 6; c.dec_depth = 2; c.heads = 8; break;
        case Variant::huge: c.dim = 768; c.enc_depth = 12; c.dec_depth = 4; c.heads = 12; break;
    }
    return c;
}

void ModelConfig::validate() const {
    if (dim <= 0 || heads <= 0 || dim % heads != 0)
        throw ConfigError("model dim must be positive and divisible by heads");
    if (enc_depth < 0 || dec_depth < 0) throw ConfigError("negative stack depth");
    if (enc_depth > 0 && dec_depth >= enc_depth)
        throw ConfigError("decoder must be lighter than the encoder (dec_depth < enc_depth)");
    if (patch_size <= 0) throw ConfigError("patch size must be positive");
    if (ffb_mult <= 0) throw ConfigError("ffb_mult must be positive");
}

Mat transition_reassemble(const Mat& lat1, const std::vector<int>& idx1,
                          const Mat& lat2, const std::vector<int>& idx2) {
    const auto n = static_cast<Eigen::Index>(idx1.size() + idx2.size());
    if (lat1.rows() != static_cast<Eigen::Index>(idx1.size()) ||
        lat2.rows() != static_cast<Eigen::Index>(idx2.size()))
        throw InvalidInput("transition_reassemble: latent/index length mismatch");
    Mat out(n, lat1.cols());
    std::vector<char> filled(static_cast<std::size_t>(n), 0);
    for (std::size_t j = 0; j < idx2.size(); ++j) {
        out.row(idx2[j]) = lat1.row(static_cast<Eigen::Index>(j));
        filled[static_cast<std::size_t>(idx2[j])]++;
    }
    for (std::size_t j = 0; j < idx1.size(); ++j) {
        out.row(idx1[j]) = lat2.row(static_cast<Eigen::Index>(j));
        filled[static_cast<std::size_t>(idx1[j])]++;
    }
    for (char f : filled)
        if (f != 1) throw InvalidInput("transition_reassemble: index lists are not a partition");
    return out;
}

Mat identity_reassemble(const Mat& lat1, const std::vector<int>& idx1,
                        const Mat& lat2, const std::vector<int>& idx2) {
    // Same placement rule with the index lists swapped, which puts every
    // token back at its own subset's positions.
    return transition_reassemble(lat1, idx2, lat2, idx1);
}

StMaeModel::StMaeModel(const ModelConfig& config, int pfdf_h, int pfdf_w, int pfdf_c,
                       std::uint64_t init_seed)
    : config_(config), pfdf_h_(pfdf_h), pfdf_w_(pfdf_w), pfdf_c_(pfdf_c) {
    config_.validate();
    const int k = config_.patch_size;
    if (pfdf_h % k != 0 || pfdf_w % k != 0)
        throw ConfigError("PFDF size not divisible by patch size");
    tokens_ = (pfdf_h / k) * (pfdf_w / k);
    if (config_.mode != Mode::ae && tokens_ % 2 != 0)
        throw ConfigError("token count must be even for decoupling, got " + std::to_string(tokens_));
    patch_dim_ = k * k * pfdf_c;

    std::mt19937_64 rng(init_seed);
    embed_proj_.value = Mat(patch_dim_, config_.dim);
    nn::init_trunc_normal(embed_proj_.value, rng);
    enc_pos_.value = Mat(tokens_, config_.dim);
    nn::init_trunc_normal(enc_pos_.value, rng);
    dec_pos_.value = Mat(tokens_, config_.dim);
    nn::init_trunc_normal(dec_pos_.value, rng);
    encoder_.init(config_.dim, config_.enc_depth, config_.heads, config_.ffb_mult, rng);
    if (!config_.siamese) {
        encoder2_.emplace();
        encoder2_->init(config_.dim, config_.enc_depth, config_.heads, config_.ffb_mult, rng);
    }
    decoder_.init(config_.dim, config_.dec_depth, config_.heads, config_.ffb_mult, rng);
    head_.init(config_.dim, patch_dim_, rng);

    registry_.add(embed_proj_, "embed.proj", true);
    registry_.add(enc_pos_, "embed.pos", false);
    encoder_.register_params(registry_, "enc");
    if (encoder2_) encoder2_->register_params(registry_, "enc2");
    registry_.add(dec_pos_, "dec.pos", false);
    decoder_.register_params(registry_, "dec");
    head_.register_params(registry_, "head");
}

Grid StMaeModel::forward(const Grid& pfdf, std::uint64_t seed, Trace* trace) const {
    if (pfdf.h != pfdf_h_ || pfdf.w != pfdf_w_ || pfdf.c != pfdf_c_)
        throw InvalidInput("forward: PFDF shape does not match model geometry");
    Trace local;
    Trace& t = trace ? *trace : local;
    t.patches = partition_patches(pfdf, config_.patch_size);
    const TokenSequence seq = embed_tokens(t.patches, embed_proj_.value, enc_pos_.value);

    Mat full;
    if (config_.mode == Mode::ae) {
        t.decoupled = false;
        full = encoder_.forward(seq.tokens, trace ? &t.enc1 : nullptr);
    } else {
        t.decoupled = true;
        t.pair = decouple(tokens_, seed);
        const Mat sub1 = take_rows(seq.tokens, t.pair.indices1);
        const Mat sub2 = take_rows(seq.tokens, t.pair.indices2);
        const nn::TransformerStack& enc2 = encoder2_ ? *encoder2_ : encoder_;
        const Mat lat1 = encoder_.forward(sub1, trace ? &t.enc1 : nullptr);
        const Mat lat2 = enc2.forward(sub2, trace ? &t.enc2 : nullptr);
        if (config_.mode == Mode::stmae) {
            full = transition_reassemble(lat1, t.pair.indices1, lat2, t.pair.indices2);
#ifndef NDEBUG
            // Anti-shortcut core: no token may land at a position of its own
            // subset's index list.
            for (std::size_t j = 0; j < t.pair.indices2.size(); ++j)
                assert(!std::binary_search(t.pair.indices1.begin(), t.pair.indices1.end(),
                                           t.pair.indices2[j]) &&
                       "subset lists overlap");
#endif
        } else {
            full = identity_reassemble(lat1, t.pair.indices1, lat2, t.pair.indices2);
        }
    }

    full += dec_pos_.value;
    const Mat decoded = decoder_.forward(full, trace ? &t.dec : nullptr);
    const Mat projected = head_.forward(decoded, trace ? &t.head : nullptr);
    return fold_patches(projected, config_.patch_size, pfdf_c_, pfdf_h_, pfdf_w_);
}

void StMaeModel::backward(const Grid& dcarf, const Trace& t, nn::GradStore& grads) const {
    const PatchGrid dpatches = partition_patches(dcarf, config_.patch_size);
    const Mat ddecoded = head_.backward(dpatches.patches, t.head, grads);
    Mat dfull = decoder_.backward(ddecoded, t.dec, grads);
    grads[dec_pos_.index] += dfull;

    Mat dtokens;
    if (!t.decoupled) {
        dtokens = encoder_.backward(dfull, t.enc1, grads);
    } else {
        const auto& idx1 = t.pair.indices1;
        const auto& idx2 = t.pair.indices2;
        const bool transition = (config_.mode == Mode::stmae);
        const Mat dlat1 = take_rows(dfull, transition ? idx2 : idx1);
        const Mat dlat2 = take_rows(dfull, transition ? idx1 : idx2);
        const nn::TransformerStack& enc2 = encoder2_ ? *encoder2_ : encoder_;
        const Mat dsub1 = encoder_.backward(dlat1, t.enc1, grads);
        const Mat dsub2 = enc2.backward(dlat2, t.enc2, grads);
        dtokens = Mat::Zero(tokens_, config_.dim);
        for (std::size_t j = 0; j < idx1.size(); ++j)
            dtokens.row(idx1[j]) = dsub1.row(static_cast<Eigen::Index>(j));
        for (std::size_t j = 0; j < idx2.size(); ++j)
            dtokens.row(idx2[j]) = dsub2.row(static_cast<Eigen::Index>(j));
    }
    grads[enc_pos_.index] += dtokens;
    grads[embed_proj_.index].noalias() += t.patches.patches.transpose() * dtokens;
}

}  // namespace stmae
