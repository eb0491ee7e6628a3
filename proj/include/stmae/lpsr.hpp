#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "stmae/tensor.hpp"

namespace stmae {

// Normalized network input: H x W x 3, channel-wise affine-normalized.
struct ImageTensor {
    Grid data;
    std::string id;
};

struct NormalizeStats {
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> stddev{0.229, 0.224, 0.225};
};

// raw: H x W x 3 grid with values in [0, 255] (already resized to the
// configured resolution). Applies (x/255 - mean) / std per channel.
ImageTensor normalize_image(const Grid& raw, const NormalizeStats& stats,
                            const std::string& id = {});

struct HierarchicalFeatures {
    std::vector<Grid> levels;   // ordered shallow -> deep, only the selected taps
    std::vector<int> tap_ids;   // 1-based tap indices the levels correspond to
};

struct BackboneConfig {
    std::string name = "vgg19";      // vgg19 | resnet34 | resnet50 | mobilenetv2 | pixel
    std::string weights = "random";  // weights file path, or "random[:seed]"
    std::vector<int> taps = {1, 2, 3, 4};  // 1-based hierarchy levels to fuse
};

// Frozen feature extractor: a flat instruction program over grid ops
// (conv / affine / relu / pool / residual add) built per architecture and
// executed up to the deepest requested tap. Weights are immutable after
// construction; extraction is a pure function of the input.
class Backbone {
  public:
    explicit Backbone(const BackboneConfig& config);
    ~Backbone();
    Backbone(Backbone&&) noexcept;
    Backbone& operator=(Backbone&&) noexcept;

    HierarchicalFeatures extract(const ImageTensor& image) const;

    const std::string& name() const { return name_; }
    bool frozen() const { return true; }
    // Channel width of each selected tap, shallow -> deep.
    const std::vector<int>& tap_channels() const { return tap_channels_; }
    // FNV-1a digest over all weight bytes; used to assert the backbone
    // never changes during training.
    std::uint64_t weights_digest() const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::string name_;
    std::vector<int> tap_channels_;
};

// Interpolate every level to (target_h, target_w) and concatenate channel-wise.
Grid fuse_pfdf(const HierarchicalFeatures& features, int target_h, int target_w);

}  // namespace stmae
