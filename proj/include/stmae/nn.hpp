#pragma once

#include <random>
#include <string>
#include <vector>

#include "stmae/tensor.hpp"

namespace stmae::nn {

// A trainable tensor. Gradients live outside the parameter (in a GradStore
// aligned with the registry), so forward/backward stay const and reentrant.
struct Param {
    std::string name;
    Mat value;
    bool decay = true;  // participates in decoupled weight decay
    int index = -1;     // slot in the owning registry
};

struct ParamRegistry {
    std::vector<Param*> items;
    void add(Param& p, std::string name, bool decay) {
        p.name = std::move(name);
        p.decay = decay;
        p.index = static_cast<int>(items.size());
        items.push_back(&p);
    }
};

// Per-parameter gradient accumulators, one matrix per registered parameter.
using GradStore = std::vector<Mat>;
GradStore make_grad_store(const ParamRegistry& reg);
void zero_grads(GradStore& grads);

// Truncated normal init (sigma 0.02, resampled beyond 2 sigma).
void init_trunc_normal(Mat& m, std::mt19937_64& rng, double sigma = 0.02);

struct Linear {
    Param w;  // in x out
    Param b;  // 1 x out
    struct Cache {
        Mat x;
    };
    void init(int in, int out, std::mt19937_64& rng);
    void register_params(ParamRegistry& reg, const std::string& prefix);
    Mat forward(const Mat& x, Cache* cache = nullptr) const;
    Mat backward(const Mat& dy, const Cache& cache, GradStore& grads) const;
};

struct LayerNorm {
    Param gain;  // 1 x dim
    Param bias;  // 1 x dim
    static constexpr double kEps = 1e-5;
    struct Cache {
        Mat xhat;
        Vec inv_std;
    };
    void init(int dim);
    void register_params(ParamRegistry& reg, const std::string& prefix);
    Mat forward(const Mat& x, Cache* cache = nullptr) const;
    Mat backward(const Mat& dy, const Cache& cache, GradStore& grads) const;
};

Mat gelu(const Mat& x);
Mat gelu_backward(const Mat& dy, const Mat& x);

struct MultiHeadAttention {
    int heads = 0, dim = 0, head_dim = 0;
    Linear wq, wk, wv, wo;
    struct Cache {
        Linear::Cache cq, ck, cv, co;
        Mat q, k, v;
        std::vector<Mat> probs;  // per-head softmax rows
        Mat concat;
    };
    void init(int dim_, int heads_, std::mt19937_64& rng);
    void register_params(ParamRegistry& reg, const std::string& prefix);
    Mat forward(const Mat& x, Cache* cache = nullptr) const;
    Mat backward(const Mat& dy, const Cache& cache, GradStore& grads) const;
};

// Pre-norm transformer block: x + MAB(LN(x)), then x + FFB(LN(x)) with GELU.
struct TransformerBlock {
    LayerNorm ln1, ln2;
    MultiHeadAttention attn;
    Linear fc1, fc2;
    struct Cache {
        LayerNorm::Cache cln1, cln2;
        MultiHeadAttention::Cache cattn;
        Linear::Cache cfc1, cfc2;
        Mat hidden_pre_act;
        Mat mid;  // input to the FFB half
    };
    void init(int dim, int heads, int ffb_mult, std::mt19937_64& rng);
    void register_params(ParamRegistry& reg, const std::string& prefix);
    Mat forward(const Mat& x, Cache* cache = nullptr) const;
    Mat backward(const Mat& dy, const Cache& cache, GradStore& grads) const;
};

// Entry LayerNorm applied once, then the block stack.
struct TransformerStack {
    LayerNorm entry;
    std::vector<TransformerBlock> blocks;
    struct Cache {
        LayerNorm::Cache centry;
        std::vector<TransformerBlock::Cache> cblocks;
    };
    void init(int dim, int depth, int heads, int ffb_mult, std::mt19937_64& rng);
    void register_params(ParamRegistry& reg, const std::string& prefix);
    Mat forward(const Mat& x, Cache* cache = nullptr) const;
    Mat backward(const Mat& dy, const Cache& cache, GradStore& grads) const;
};

}  // namespace stmae::nn
