#include "stmae/pipeline.hpp"

#include <atomic>
#include <mutex>
#include <numeric>
#include <thread>

namespace stmae {

Pipeline::Pipeline(const RunConfig& cfg) : cfg_(cfg), backbone_(cfg.backbone) {
    cfg_.validate();
    pfdf_channels_ = std::accumulate(backbone_.tap_channels().begin(),
                                     backbone_.tap_channels().end(), 0);
    model_ = std::make_unique<StMaeModel>(cfg_.model_config(), cfg_.pfdf_size, cfg_.pfdf_size,
                                          pfdf_channels_, derive_seed(cfg_.training.seed, 0xF00D));
}

Grid Pipeline::pfdf_from_raw(const Grid& raw, const std::string& id) const {
    const ImageTensor img = normalize_image(raw, cfg_.normalize, id);
    const HierarchicalFeatures feats = backbone_.extract(img);
    Grid pfdf = fuse_pfdf(feats, cfg_.pfdf_size, cfg_.pfdf_size);
    if (pfdf.c != pfdf_channels_)
        throw InvalidInput("PFDF channel count does not match the selected hierarchy levels");
    return pfdf;
}

Grid Pipeline::pfdf_from_image(const std::string& path) const {
    return pfdf_from_raw(load_image_rgb(path, cfg_.image_size, cfg_.image_size), path);
}

AnomalyMap Pipeline::score_pfdf(const Grid& pfdf, std::uint64_t seed, int tta_rounds) const {
    if (tta_rounds < 1) throw ConfigError("tta_rounds must be >= 1");
    Grid fused_acc, aint_acc, aori_acc;
    for (int round = 0; round < tta_rounds; ++round) {
        const Grid carf = model_->forward(pfdf, derive_seed(seed, static_cast<std::uint64_t>(round)));
        auto [a_int, a_ori] = residual_maps(carf, pfdf);
        Grid fused = fuse_maps(a_int, a_ori);
        if (round == 0) {
            fused_acc = std::move(fused);
            aint_acc = std::move(a_int);
            aori_acc = std::move(a_ori);
        } else {
            for (std::size_t i = 0; i < fused_acc.data.size(); ++i) {
                fused_acc.data[i] += fused.data[i];
                aint_acc.data[i] += a_int.data[i];
                aori_acc.data[i] += a_ori.data[i];
            }
        }
    }
    if (tta_rounds > 1)
        for (std::size_t i = 0; i < fused_acc.data.size(); ++i) {
            fused_acc.data[i] /= tta_rounds;
            aint_acc.data[i] /= tta_rounds;
            aori_acc.data[i] /= tta_rounds;
        }
    return postprocess(fused_acc, aint_acc, aori_acc, cfg_.image_size, cfg_.image_size,
                       cfg_.score_sigma);
}

AnomalyMap Pipeline::score_image(const std::string& path, std::uint64_t seed, int tta_rounds) const {
    return score_pfdf(pfdf_from_image(path), seed, tta_rounds);
}

std::vector<Grid> extract_pfdfs(const Pipeline& pipe, const std::vector<std::string>& paths) {
    std::vector<Grid> out(paths.size());
    const unsigned workers =
        std::min<unsigned>(std::max(1u, std::thread::hardware_concurrency()),
                           static_cast<unsigned>(paths.size()));
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < workers; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < paths.size(); i = next.fetch_add(1)) {
                try {
                    out[i] = pipe.pfdf_from_image(paths[i]);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    for (std::thread& t : pool) t.join();
    if (error) std::rethrow_exception(error);
    return out;
}

Dataset load_dataset(const RunConfig& cfg) {
    Dataset d;
    if (cfg.data.layout == "mvtec" || cfg.data.layout == "synthetic") {
        const std::string category =
            cfg.data.category.empty() && cfg.data.layout == "synthetic" ? "synthetic"
                                                                        : cfg.data.category;
        if (cfg.data.root.empty() || category.empty())
            throw ConfigError("data.root and data.category are required for layout " +
                              cfg.data.layout);
        d = load_mvtec_layout(cfg.data.root, category);
        d.layout = cfg.data.layout;
    } else if (cfg.data.layout == "folder") {
        if (cfg.data.root.empty() || cfg.data.normal_class.empty())
            throw ConfigError("data.root and data.normal_class are required for folder layout");
        d = load_folder_dataset(cfg.data.root, cfg.data.normal_class);
    } else if (cfg.data.layout == "frames") {
        if (cfg.data.root.empty()) throw ConfigError("data.root is required for frames layout");
        d = load_frames_dataset(cfg.data.root);
    } else {
        throw ConfigError("unknown data layout: " + cfg.data.layout);
    }
    if (cfg.data.few_shot_k > 0)
        d = few_shot_subset(d, cfg.data.few_shot_k, cfg.data.few_shot_seed);
    return d;
}

}  // namespace stmae
