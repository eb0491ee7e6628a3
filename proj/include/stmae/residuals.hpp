#pragma once

#include <utility>

#include "stmae/tensor.hpp"

namespace stmae {

struct LossReport {
    double l_int = 0.0;
    double l_ori = 0.0;
    double total = 0.0;
    double lambda = 5.0;
};

// Which residual modality drives training and scoring (loss-modality ablation).
enum class LossModality { intensity, orientation, both };

inline constexpr double kCosineEps = 1e-8;

// Sum over all patches of squared L2 between flattened patches.
double intensity_loss(const Grid& carf, const Grid& pfdf, int patch_size);

// Sum over all patches of 1 - cosine similarity between flattened patches.
// Zero-norm patches are guarded by kCosineEps in the denominator.
double orientation_loss(const Grid& carf, const Grid& pfdf, int patch_size);

LossReport total_loss(const Grid& carf, const Grid& pfdf, int patch_size, double lambda,
                      LossModality modality = LossModality::both);

// total_loss plus its analytic gradient with respect to CARF.
std::pair<LossReport, Grid> total_loss_grad(const Grid& carf, const Grid& pfdf, int patch_size,
                                            double lambda,
                                            LossModality modality = LossModality::both);

// Per-location intensity (squared L2) and orientation (1 - cosine) residuals
// over the channel dimension.
std::pair<Grid, Grid> residual_maps(const Grid& carf, const Grid& pfdf);

// Element-wise product of the two residual maps.
Grid fuse_maps(const Grid& a_int, const Grid& a_ori);

struct AnomalyMap {
    Grid map;            // image resolution, smoothed
    double image_score = 0.0;
    Grid a_int, a_ori;   // PFDF-resolution intermediates
};

// Bilinear upsample to (image_h, image_w), then Gaussian smooth (sigma,
// radius = 4 sigma, reflect boundary). Fills image_score with the population
// standard deviation of the smoothed map.
AnomalyMap postprocess(const Grid& fused, const Grid& a_int, const Grid& a_ori,
                       int image_h, int image_w, double sigma = 4.0);

// Population standard deviation over all pixels.
double image_score(const Grid& map);

}  // namespace stmae
