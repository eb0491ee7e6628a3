#pragma once

#include <memory>
#include <vector>

#include "stmae/config.hpp"
#include "stmae/data_io.hpp"
#include "stmae/model.hpp"
#include "stmae/residuals.hpp"

namespace stmae {

// Wires LPSR -> ST-MAE -> SDFR for one configuration. The backbone and model
// weights are immutable during inference; scoring is reentrant.
class Pipeline {
  public:
    explicit Pipeline(const RunConfig& cfg);

    const RunConfig& cfg() const { return cfg_; }
    const Backbone& backbone() const { return backbone_; }
    StMaeModel& model() { return *model_; }
    const StMaeModel& model() const { return *model_; }
    int pfdf_channels() const { return pfdf_channels_; }

    // load -> normalize -> extract -> fuse
    Grid pfdf_from_image(const std::string& path) const;
    Grid pfdf_from_raw(const Grid& raw, const std::string& id = {}) const;

    // Forward + SDFR for one already-extracted PFDF. With tta_rounds > 1 the
    // fused residual maps of several decoupling seeds are averaged before
    // post-processing.
    AnomalyMap score_pfdf(const Grid& pfdf, std::uint64_t seed, int tta_rounds = 1) const;
    AnomalyMap score_image(const std::string& path, std::uint64_t seed, int tta_rounds = 1) const;

  private:
    RunConfig cfg_;
    Backbone backbone_;
    int pfdf_channels_;
    std::unique_ptr<StMaeModel> model_;
};

// Extract PFDFs for many images in parallel (the backbone is frozen shared
// state, so extraction is embarrassingly parallel).
std::vector<Grid> extract_pfdfs(const Pipeline& pipe, const std::vector<std::string>& paths);

// Load the dataset named by cfg.data. For the synthetic layout the benchmark
// must already exist under data.root (see synth_generate).
Dataset load_dataset(const RunConfig& cfg);

}  // namespace stmae
