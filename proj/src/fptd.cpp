#include "stmae/fptd.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace stmae {

PatchGrid partition_patches(const Grid& pfdf, int patch_size) {
    if (patch_size <= 0) throw ConfigError("patch size must be positive");
    if (pfdf.h % patch_size != 0 || pfdf.w % patch_size != 0)
        throw ConfigError("PFDF dims " + std::to_string(pfdf.h) + "x" + std::to_string(pfdf.w) +
                          " not divisible by patch size " + std::to_string(patch_size));
    if (pfdf.h != pfdf.w) throw ConfigError("partition_patches expects a square PFDF");

    PatchGrid out;
    out.patch_size = patch_size;
    out.channels = pfdf.c;
    out.side = pfdf.h / patch_size;
    const int dim = patch_size * patch_size * pfdf.c;
    out.patches = Mat(out.count(), dim);
    for (int pi = 0; pi < out.side; ++pi)
        for (int pj = 0; pj < out.side; ++pj) {
            double* row = out.patches.row(pi * out.side + pj).data();
            for (int dy = 0; dy < patch_size; ++dy)
                for (int dx = 0; dx < patch_size; ++dx) {
                    const int y = pi * patch_size + dy;
                    const int x = pj * patch_size + dx;
                    const double* src = &pfdf.data[(static_cast<std::size_t>(y) * pfdf.w + x) * pfdf.c];
                    std::copy(src, src + pfdf.c, row + (dy * patch_size + dx) * pfdf.c);
                }
        }
    return out;
}

Grid fold_patches(const Mat& patches, int patch_size, int channels, int grid_h, int grid_w) {
    const int side_h = grid_h / patch_size, side_w = grid_w / patch_size;
    if (grid_h % patch_size != 0 || grid_w % patch_size != 0 ||
        patches.rows() != side_h * side_w ||
        patches.cols() != patch_size * patch_size * channels)
        throw ConfigError("fold_patches: shape mismatch");
    Grid out(grid_h, grid_w, channels);
    for (int pi = 0; pi < side_h; ++pi)
        for (int pj = 0; pj < side_w; ++pj) {
            const double* row = patches.row(pi * side_w + pj).data();
            for (int dy = 0; dy < patch_size; ++dy)
                for (int dx = 0; dx < patch_size; ++dx) {
                    const int y = pi * patch_size + dy;
                    const int x = pj * patch_size + dx;
                    const double* src = row + (dy * patch_size + dx) * channels;
                    std::copy(src, src + channels,
                              &out.data[(static_cast<std::size_t>(y) * grid_w + x) * channels]);
                }
        }
    return out;
}

TokenSequence embed_tokens(const PatchGrid& grid, const Mat& projection, const Mat& pos_embed) {
    if (projection.rows() != grid.patches.cols())
        throw ConfigError("embed_tokens: projection rows do not match patch dim");
    if (pos_embed.rows() != grid.patches.rows() || pos_embed.cols() != projection.cols())
        throw ConfigError("embed_tokens: position table shape mismatch");
    TokenSequence seq;
    seq.tokens = grid.patches * projection + pos_embed;
    seq.positions.resize(grid.count());
    std::iota(seq.positions.begin(), seq.positions.end(), 0);
    return seq;
}

DecoupledPair decouple(int token_count, std::uint64_t seed) {
    if (token_count <= 0 || token_count % 2 != 0)
        throw ConfigError("decouple requires an even, positive token count, got " +
                          std::to_string(token_count));
    std::vector<int> perm(token_count);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(seed);
    // Fisher-Yates; the first N/2 entries are an exact uniform N/2-subset.
    for (int i = token_count - 1; i > 0; --i) {
        std::uniform_int_distribution<int> dist(0, i);
        std::swap(perm[i], perm[dist(rng)]);
    }
    DecoupledPair pair;
    pair.seed = seed;
    const int half = token_count / 2;
    pair.indices1.assign(perm.begin(), perm.begin() + half);
    pair.indices2.assign(perm.begin() + half, perm.end());
    std::sort(pair.indices1.begin(), pair.indices1.end());
    std::sort(pair.indices2.begin(), pair.indices2.end());
    return pair;
}

Mat take_rows(const Mat& tokens, const std::vector<int>& indices) {
    Mat out(static_cast<Eigen::Index>(indices.size()), tokens.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = tokens.row(indices[i]);
    return out;
}

}  // namespace stmae
