#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stmae/tensor.hpp"

namespace stmae {

struct TestItem {
    std::string image_path;
    int label = 0;              // 0 normal, 1 anomalous
    std::string mask_path;      // empty -> implicit all-zero mask
    std::string clip;           // frames layout only
    int frame_index = -1;       // frames layout only
};

struct Dataset {
    std::vector<std::string> train_items;  // normal-only image paths
    std::vector<TestItem> test_items;
    std::string category;
    std::string layout;  // mvtec | folder | frames | synthetic
};

// <root>/<category>/{train/good, test/<defect>, ground_truth/<defect>}
Dataset load_mvtec_layout(const std::string& root, const std::string& category);

// Class-per-subfolder layout; `normal_class` trains and tests as normal,
// every other class becomes anomalous test data. No masks.
Dataset load_folder_dataset(const std::string& root, const std::string& normal_class);

// <root>/{train,test}/<clip>/<frame>.png plus <root>/labels.csv with rows
// `clip,frame_index,label` for the test frames.
Dataset load_frames_dataset(const std::string& root);

// Uniformly sampled k-image training subset; the test set is untouched.
Dataset few_shot_subset(const Dataset& dataset, int k, std::uint64_t seed);

struct SynthSpec {
    int resolution = 64;
    int train_count = 200;
    int test_normal = 50;
    int test_anomalous = 50;
    std::vector<std::string> anomaly_types = {"blob-intensity", "patch-swap", "semantic-swap"};
    int texture_components = 4;
    double noise_level = 0.04;
    double blob_delta = 0.5;
    std::uint64_t seed = 0;
};

// Renders a reproducible MVTec-layout benchmark under <out_root>/synthetic:
// seeded smooth textures as normals, generator-applied defects with exact
// masks as anomalies. Returns the loaded dataset.
Dataset synth_generate(const SynthSpec& spec, const std::string& out_root);

// --- image helpers (OpenCV-backed) ---

// 8-bit image -> H x W x 3 grid with values in [0,255], resized to the target
// resolution (bilinear). Grayscale inputs are replicated to 3 channels.
Grid load_image_rgb(const std::string& path, int target_h, int target_w);

// (height, width) of an image file without loading pixel data into a Grid.
std::pair<int, int> image_dims(const std::string& path);

// Binary mask resized (nearest) to the target resolution, values in {0,1}.
Grid load_mask(const std::string& path, int target_h, int target_w);

// Min-max normalized 8-bit grayscale PNG; returns the raw (min, max) so the
// scores stay recoverable.
std::pair<double, double> save_gray_png(const std::string& path, const Grid& map);

}  // namespace stmae
