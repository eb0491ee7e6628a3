#include "stmae/nn.hpp"

#include <cmath>

namespace stmae::nn {

GradStore make_grad_store(const ParamRegistry& reg) {
    GradStore grads;
    grads.reserve(reg.items.size());
    for (const Param* p : reg.items) grads.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    return grads;
}

void zero_grads(GradStore& grads) {
    for (Mat& g : grads) g.setZero();
}

void init_trunc_normal(Mat& m, std::mt19937_64& rng, double sigma) {
    std::normal_distribution<double> dist(0.0, sigma);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        double v;
        do {
            v = dist(rng);
        } while (std::abs(v) > 2.0 * sigma);
        m.data()[i] = v;
    }
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

void Linear::init(int in, int out, std::mt19937_64& rng) {
    w.value = Mat(in, out);
    init_trunc_normal(w.value, rng);
    b.value = Mat::Zero(1, out);
}

void Linear::register_params(ParamRegistry& reg, const std::string& prefix) {
    reg.add(w, prefix + ".w", /*decay=*/true);
    reg.add(b, prefix + ".b", /*decay=*/false);
}

Mat Linear::forward(const Mat& x, Cache* cache) const {
    if (x.cols() != w.value.rows()) throw ConfigError("Linear: input dim mismatch at " + w.name);
    if (cache) cache->x = x;
    Mat y = x * w.value;
    y.rowwise() += b.value.row(0);
    return y;
}

Mat Linear::backward(const Mat& dy, const Cache& cache, GradStore& grads) const {
    grads[w.index].noalias() += cache.x.transpose() * dy;
    grads[b.index].row(0) += dy.colwise().sum();
    return dy * w.value.transpose();
}

// ---------------------------------------------------------------------------
// LayerNorm
// ---------------------------------------------------------------------------

void LayerNorm::init(int dim) {
    gain.value = Mat::Ones(1, dim);
    bias.value = Mat::Zero(1, dim);
}

void LayerNorm::register_params(ParamRegistry& reg, const std::string& prefix) {
    reg.add(gain, prefix + ".g", /*decay=*/false);
    reg.add(bias, prefix + ".b", /*decay=*/false);
}

Mat LayerNorm::forward(const Mat& x, Cache* cache) const {
    const auto dim = x.cols();
    Mat xhat(x.rows(), dim);
    Vec inv_std(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mu = x.row(r).mean();
        const double var = (x.row(r).array() - mu).square().mean();
        const double is = 1.0 / std::sqrt(var + kEps);
        xhat.row(r) = (x.row(r).array() - mu) * is;
        inv_std[r] = is;
    }
    if (cache) {
        cache->xhat = xhat;
        cache->inv_std = inv_std;
    }
    Mat y = xhat.array().rowwise() * gain.value.row(0).array();
    y.rowwise() += bias.value.row(0);
    return y;
}

Mat LayerNorm::backward(const Mat& dy, const Cache& cache, GradStore& grads) const {
    grads[gain.index].row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    grads[bias.index].row(0) += dy.colwise().sum();
    Mat dxhat = dy.array().rowwise() * gain.value.row(0).array();
    Mat dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const double m1 = dxhat.row(r).mean();
        const double m2 = (dxhat.row(r).array() * cache.xhat.row(r).array()).mean();
        dx.row(r) = cache.inv_std[r] *
                    (dxhat.row(r).array() - m1 - cache.xhat.row(r).array() * m2);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// GELU (exact, erf form)
// ---------------------------------------------------------------------------

Mat gelu(const Mat& x) {
    return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); });
}

Mat gelu_backward(const Mat& dy, const Mat& x) {
    constexpr double kInvSqrt2Pi = 0.3989422804014327;
    Mat deriv = x.unaryExpr([](double v) {
        return 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
    });
    deriv.array() += x.array() * (-0.5 * x.array().square()).exp() * kInvSqrt2Pi;
    return dy.array() * deriv.array();
}

// ---------------------------------------------------------------------------
// MultiHeadAttention
// ---------------------------------------------------------------------------

void MultiHeadAttention::init(int dim_, int heads_, std::mt19937_64& rng) {
    if (dim_ % heads_ != 0) throw ConfigError("attention dim must be divisible by heads");
    dim = dim_;
    heads = heads_;
    head_dim = dim_ / heads_;
    wq.init(dim, dim, rng);
    wk.init(dim, dim, rng);
    wv.init(dim, dim, rng);
    wo.init(dim, dim, rng);
}

void MultiHeadAttention::register_params(ParamRegistry& reg, const std::string& prefix) {
    wq.register_params(reg, prefix + ".q");
    wk.register_params(reg, prefix + ".k");
    wv.register_params(reg, prefix + ".v");
    wo.register_params(reg, prefix + ".o");
}

namespace {
Mat softmax_rows(const Mat& s) {
    Mat p(s.rows(), s.cols());
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double mx = s.row(r).maxCoeff();
        p.row(r) = (s.row(r).array() - mx).exp();
        p.row(r) /= p.row(r).sum();
    }
    return p;
}
}  // namespace

Mat MultiHeadAttention::forward(const Mat& x, Cache* cache) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    c.q = wq.forward(x, cache ? &c.cq : nullptr);
    c.k = wk.forward(x, cache ? &c.ck : nullptr);
    c.v = wv.forward(x, cache ? &c.cv : nullptr);
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    c.concat = Mat(x.rows(), dim);
    c.probs.resize(heads);
    for (int h = 0; h < heads; ++h) {
        const auto qh = c.q.middleCols(h * head_dim, head_dim);
        const auto kh = c.k.middleCols(h * head_dim, head_dim);
        const auto vh = c.v.middleCols(h * head_dim, head_dim);
        Mat scores = (qh * kh.transpose()) * scale;
        c.probs[h] = softmax_rows(scores);
        c.concat.middleCols(h * head_dim, head_dim) = c.probs[h] * vh;
    }
    return wo.forward(c.concat, cache ? &c.co : nullptr);
}

Mat MultiHeadAttention::backward(const Mat& dy, const Cache& c, GradStore& grads) const {
    const Mat dconcat = wo.backward(dy, c.co, grads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    Mat dq(dy.rows(), dim), dk(dy.rows(), dim), dv(dy.rows(), dim);
    for (int h = 0; h < heads; ++h) {
        const auto qh = c.q.middleCols(h * head_dim, head_dim);
        const auto kh = c.k.middleCols(h * head_dim, head_dim);
        const auto vh = c.v.middleCols(h * head_dim, head_dim);
        const Mat& p = c.probs[h];
        const auto doh = dconcat.middleCols(h * head_dim, head_dim);
        Mat dp = doh * vh.transpose();
        dv.middleCols(h * head_dim, head_dim) = p.transpose() * doh;
        // softmax backward per row
        Mat ds(p.rows(), p.cols());
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
            const double dot = dp.row(r).dot(p.row(r));
            ds.row(r) = (dp.row(r).array() - dot) * p.row(r).array();
        }
        dq.middleCols(h * head_dim, head_dim) = (ds * kh) * scale;
        dk.middleCols(h * head_dim, head_dim) = (ds.transpose() * qh) * scale;
    }
    Mat dx = wq.backward(dq, c.cq, grads);
    dx += wk.backward(dk, c.ck, grads);
    dx += wv.backward(dv, c.cv, grads);
    return dx;
}

// ---------------------------------------------------------------------------
// TransformerBlock
// ---------------------------------------------------------------------------

void TransformerBlock::init(int dim, int heads, int ffb_mult, std::mt19937_64& rng) {
    ln1.init(dim);
    ln2.init(dim);
    attn.init(dim, heads, rng);
    fc1.init(dim, dim * ffb_mult, rng);
    fc2.init(dim * ffb_mult, dim, rng);
}

void TransformerBlock::register_params(ParamRegistry& reg, const std::string& prefix) {
    ln1.register_params(reg, prefix + ".ln1");
    attn.register_params(reg, prefix + ".attn");
    ln2.register_params(reg, prefix + ".ln2");
    fc1.register_params(reg, prefix + ".fc1");
    fc2.register_params(reg, prefix + ".fc2");
}

Mat TransformerBlock::forward(const Mat& x, Cache* cache) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    const Mat a = ln1.forward(x, cache ? &c.cln1 : nullptr);
    Mat mid = x + attn.forward(a, cache ? &c.cattn : nullptr);
    const Mat f = ln2.forward(mid, cache ? &c.cln2 : nullptr);
    c.hidden_pre_act = fc1.forward(f, cache ? &c.cfc1 : nullptr);
    Mat y = mid + fc2.forward(gelu(c.hidden_pre_act), cache ? &c.cfc2 : nullptr);
    if (cache) c.mid = std::move(mid);
    return y;
}

Mat TransformerBlock::backward(const Mat& dy, const Cache& c, GradStore& grads) const {
    Mat dmid = dy;
    Mat dhid = gelu_backward(fc2.backward(dy, c.cfc2, grads), c.hidden_pre_act);
    dmid += ln2.backward(fc1.backward(dhid, c.cfc1, grads), c.cln2, grads);
    Mat dx = dmid;
    dx += ln1.backward(attn.backward(dmid, c.cattn, grads), c.cln1, grads);
    return dx;
}

// ---------------------------------------------------------------------------
// TransformerStack
// ---------------------------------------------------------------------------

void TransformerStack::init(int dim, int depth, int heads, int ffb_mult, std::mt19937_64& rng) {
    entry.init(dim);
    blocks.resize(depth);
    for (TransformerBlock& b : blocks) b.init(dim, heads, ffb_mult, rng);
}

void TransformerStack::register_params(ParamRegistry& reg, const std::string& prefix) {
    entry.register_params(reg, prefix + ".ln0");
    for (std::size_t i = 0; i < blocks.size(); ++i)
        blocks[i].register_params(reg, prefix + ".b" + std::to_string(i));
}

Mat TransformerStack::forward(const Mat& x, Cache* cache) const {
    if (cache) cache->cblocks.resize(blocks.size());
    Mat z = entry.forward(x, cache ? &cache->centry : nullptr);
    for (std::size_t i = 0; i < blocks.size(); ++i)
        z = blocks[i].forward(z, cache ? &cache->cblocks[i] : nullptr);
    return z;
}

Mat TransformerStack::backward(const Mat& dy, const Cache& cache, GradStore& grads) const {
    Mat d = dy;
    for (std::size_t i = blocks.size(); i-- > 0;)
        d = blocks[i].backward(d, cache.cblocks[i], grads);
    return entry.backward(d, cache.centry, grads);
}

}  // namespace stmae::nn
