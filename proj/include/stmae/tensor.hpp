#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

#include "stmae/common.hpp"

namespace stmae {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

// Dense H x W x C grid, row-major with channels fastest (HWC).
// Used for images, hierarchical feature maps, PFDF/CARF and anomaly maps.
struct Grid {
    int h = 0, w = 0, c = 0;
    std::vector<double> data;

    Grid() = default;
    Grid(int h_, int w_, int c_, double fill = 0.0)
        : h(h_), w(w_), c(c_), data(static_cast<std::size_t>(h_) * w_ * c_, fill) {}

    double& at(int y, int x, int ch) {
        return data[(static_cast<std::size_t>(y) * w + x) * c + ch];
    }
    double at(int y, int x, int ch) const {
        return data[(static_cast<std::size_t>(y) * w + x) * c + ch];
    }
    std::size_t size() const { return data.size(); }
    bool same_shape(const Grid& o) const { return h == o.h && w == o.w && c == o.c; }
};

// Bilinear resize, align-corners disabled (half-pixel centers, edge clamp).
// Identity when the target size equals the source size.
Grid resize_bilinear(const Grid& src, int out_h, int out_w);

// Channel-wise concatenation of grids that share spatial dims.
Grid concat_channels(const std::vector<Grid>& levels);

// Separable Gaussian blur applied per channel. The kernel is truncated at
// `radius` taps each side and renormalized; boundaries are handled by
// reflection (edge duplicated), so constants are preserved exactly.
Grid gaussian_blur(const Grid& src, double sigma, int radius);

// The normalized 1-D kernel used by gaussian_blur, exposed for tests.
std::vector<double> gaussian_kernel(double sigma, int radius);

}  // namespace stmae
