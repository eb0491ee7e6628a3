#pragma once

#include <cstdint>
#include <vector>

#include "stmae/tensor.hpp"

namespace stmae {

// Non-overlapping K x K feature patches of a PFDF, flattened row-major over
// spatial positions with channels fastest. Row n of `patches` is patch
// (n / side, n % side).
struct PatchGrid {
    Mat patches;  // N x (K*K*C)
    int patch_size = 0;   // K
    int channels = 0;     // C
    int side = 0;         // sqrt(N) = H/K (and W/K)
    int count() const { return side * side; }
};

PatchGrid partition_patches(const Grid& pfdf, int patch_size);

// Exact inverse of partition_patches.
Grid fold_patches(const Mat& patches, int patch_size, int channels, int grid_h, int grid_w);

struct TokenSequence {
    Mat tokens;                   // N x D
    std::vector<int> positions;   // identity list 0..N-1 at creation
};

// token_n = patches.row(n) * projection + pos_embed.row(n)
TokenSequence embed_tokens(const PatchGrid& grid, const Mat& projection, const Mat& pos_embed);

struct DecoupledPair {
    std::vector<int> indices1, indices2;  // sorted ascending, disjoint, union = 0..N-1
    std::uint64_t seed = 0;
};

// Uniformly random N/2-subset (Fisher-Yates permutation prefix), complement
// forms the second subset. Deterministic given the seed; N must be even.
DecoupledPair decouple(int token_count, std::uint64_t seed);

// Gather rows of `tokens` at `indices`.
Mat take_rows(const Mat& tokens, const std::vector<int>& indices);

}  // namespace stmae
