#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "stmae/model.hpp"
#include "stmae/residuals.hpp"

using namespace stmae;

namespace {
Grid random_pfdf(int h, int w, int c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<> dist(-1, 1);
    Grid g(h, w, c);
    for (double& v : g.data) v = dist(rng);
    return g;
}

ModelConfig small_config(Mode mode = Mode::stmae) {
    ModelConfig mc = ModelConfig::preset(Variant::nano);
    mc.dim = 16;
    mc.enc_depth = 2;
    mc.dec_depth = 1;
    mc.heads = 4;
    mc.ffb_mult = 2;
    mc.patch_size = 2;
    mc.mode = mode;
    return mc;
}

std::size_t param_scalar_count(const StMaeModel& model) {
    std::size_t n = 0;
    for (const nn::Param* p : model.params().items) n += p->value.size();
    return n;
}
}  // namespace

TEST_CASE("transition placement follows the complementary index lists") {
    Mat lat1(1, 1), lat2(1, 1);
    lat1 << 10.0;  // "a"
    lat2 << 20.0;  // "b"
    const Mat f2 = transition_reassemble(lat1, {0}, lat2, {1});
    CHECK(f2(0, 0) == 20.0);  // F = [b, a]
    CHECK(f2(1, 0) == 10.0);

    Mat a(2, 1), b(2, 1);
    a << 1.0, 2.0;   // a, a'
    b << -1.0, -2.0; // b, b'
    const Mat f4 = transition_reassemble(a, {0, 3}, b, {1, 2});
    CHECK(f4(0, 0) == -1.0);  // F = [b, a, a', b']
    CHECK(f4(1, 0) == 1.0);
    CHECK(f4(2, 0) == 2.0);
    CHECK(f4(3, 0) == -2.0);
}

TEST_CASE("identity placement returns each subset to its own positions") {
    Mat a(2, 1), b(2, 1);
    a << 1.0, 2.0;
    b << -1.0, -2.0;
    const Mat f = identity_reassemble(a, {0, 3}, b, {1, 2});
    CHECK(f(0, 0) == 1.0);
    CHECK(f(1, 0) == -1.0);
    CHECK(f(2, 0) == -2.0);
    CHECK(f(3, 0) == 2.0);
}

TEST_CASE("transition induces a fixed-point-free involution on subset membership") {
    // Brute force every partition for N up to 12: every token must land at a
    // position owned by the complementary subset.
    for (int n = 2; n <= 12; n += 2) {
        for (std::uint64_t mask = 0; mask < (1ULL << n); ++mask) {
            if (__builtin_popcountll(mask) != n / 2) continue;
            std::vector<int> idx1, idx2;
            for (int i = 0; i < n; ++i) (mask >> i & 1 ? idx1 : idx2).push_back(i);
            Mat lat1(n / 2, 1), lat2(n / 2, 1);
            for (int j = 0; j < n / 2; ++j) {
                lat1(j, 0) = idx1[j];          // token remembers its origin
                lat2(j, 0) = 1000 + idx2[j];
            }
            const Mat f = transition_reassemble(lat1, idx1, lat2, idx2);
            for (int pos = 0; pos < n; ++pos) {
                const double v = f(pos, 0);
                const bool from_subset1 = v < 1000;
                const bool pos_in_subset1 = (mask >> pos & 1) != 0;
                REQUIRE(from_subset1 != pos_in_subset1);  // complementary placement
            }
            if (n > 8) break;  // full enumeration only for small N
        }
    }
}

TEST_CASE("reassembly rejects index lists that are not a partition") {
    Mat a(1, 1), b(1, 1);
    a << 1.0;
    b << 2.0;
    CHECK_THROWS_AS(transition_reassemble(a, {0}, b, {0}), InvalidInput);
}

TEST_CASE("a transformer block with zero output projections is the identity") {
    std::mt19937_64 rng(5);
    nn::TransformerBlock block;
    block.init(8, 2, 2, rng);
    block.attn.wo.w.value.setZero();
    block.attn.wo.b.value.setZero();
    block.fc2.w.value.setZero();
    block.fc2.b.value.setZero();
    Mat x(5, 8);
    x.setRandom();
    const Mat y = block.forward(x);
    CHECK((y - x).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("a transformer block is permutation-equivariant") {
    std::mt19937_64 rng(6);
    nn::TransformerBlock block;
    block.init(8, 2, 2, rng);
    Mat x(6, 8);
    x.setRandom();
    const std::vector<int> perm = {3, 0, 5, 1, 4, 2};
    Mat xp(6, 8);
    for (int i = 0; i < 6; ++i) xp.row(i) = x.row(perm[i]);
    const Mat y = block.forward(x);
    const Mat yp = block.forward(xp);
    for (int i = 0; i < 6; ++i)
        CHECK((yp.row(i) - y.row(perm[i])).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("single-token attention reduces to the value path") {
    std::mt19937_64 rng(7);
    nn::MultiHeadAttention attn;
    attn.init(8, 2, rng);
    Mat x(1, 8);
    x.setRandom();
    // softmax over one key is 1, so output = wo(wv(x))
    const Mat expected = attn.wo.forward(attn.wv.forward(x));
    const Mat got = attn.forward(x);
    CHECK((got - expected).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("an empty stack applies only the entry normalization") {
    std::mt19937_64 rng(8);
    nn::TransformerStack stack;
    stack.init(8, 0, 2, 2, rng);
    Mat x(3, 8);
    x.setRandom();
    const Mat y = stack.forward(x);
    const Mat expected = stack.entry.forward(x);
    CHECK((y - expected).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward is deterministic given (weights, seed) and preserves shape") {
    StMaeModel model(small_config(), 8, 8, 6, 31);
    const Grid pfdf = random_pfdf(8, 8, 6, 1);
    const Grid a = model.forward(pfdf, 99);
    const Grid b = model.forward(pfdf, 99);
    CHECK(a.data == b.data);
    CHECK(a.h == 8);
    CHECK(a.w == 8);
    CHECK(a.c == 6);
    const Grid c = model.forward(pfdf, 100);
    CHECK(a.data != c.data);  // the seed drives the decoupling
}

TEST_CASE("untrained reconstruction has strictly positive loss") {
    StMaeModel model(small_config(), 8, 8, 6, 31);
    const Grid pfdf = random_pfdf(8, 8, 6, 2);
    const Grid carf = model.forward(pfdf, 1);
    CHECK(total_loss(carf, pfdf, 2, 5.0).total > 0.0);
}

TEST_CASE("every trainable parameter receives a gradient") {
    StMaeModel model(small_config(), 8, 8, 6, 31);
    const Grid pfdf = random_pfdf(8, 8, 6, 3);
    StMaeModel::Trace trace;
    const Grid carf = model.forward(pfdf, 5, &trace);
    const auto [report, dcarf] = total_loss_grad(carf, pfdf, 2, 5.0);
    nn::GradStore grads = nn::make_grad_store(model.params());
    model.backward(dcarf, trace, grads);
    for (const nn::Param* p : model.params().items) {
        INFO("parameter ", p->name);
        CHECK(grads[p->index].cwiseAbs().maxCoeff() > 0.0);
    }
}

TEST_CASE("the three modes share one parameter budget") {
    const std::size_t stmae_n = param_scalar_count(StMaeModel(small_config(Mode::stmae), 8, 8, 6, 1));
    const std::size_t smae_n = param_scalar_count(StMaeModel(small_config(Mode::smae), 8, 8, 6, 1));
    const std::size_t ae_n = param_scalar_count(StMaeModel(small_config(Mode::ae), 8, 8, 6, 1));
    CHECK(stmae_n == smae_n);
    CHECK(stmae_n == ae_n);
}

TEST_CASE("smae and ae modes run and differ from stmae output") {
    const Grid pfdf = random_pfdf(8, 8, 6, 4);
    StMaeModel stmae_m(small_config(Mode::stmae), 8, 8, 6, 31);
    StMaeModel smae_m(small_config(Mode::smae), 8, 8, 6, 31);
    StMaeModel ae_m(small_config(Mode::ae), 8, 8, 6, 31);
    const Grid a = stmae_m.forward(pfdf, 9);
    const Grid b = smae_m.forward(pfdf, 9);
    const Grid c = ae_m.forward(pfdf, 9);
    CHECK(a.data != b.data);
    CHECK(b.data != c.data);
    // ae ignores the decoupling seed entirely
    CHECK(ae_m.forward(pfdf, 10).data == c.data);
}

TEST_CASE("decoder position table feeds position information into the output") {
    StMaeModel model(small_config(), 8, 8, 6, 31);
    const Grid pfdf = random_pfdf(8, 8, 6, 5);
    const Grid before = model.forward(pfdf, 7);
    Mat& pos = model.decoder_pos().value;
    pos.row(0).swap(pos.row(1));
    const Grid after = model.forward(pfdf, 7);
    CHECK(before.data != after.data);
}

TEST_CASE("variant presets keep the decoder lighter than the encoder") {
    for (Variant v : {Variant::nano, Variant::tiny, Variant::base, Variant::huge}) {
        const ModelConfig mc = ModelConfig::preset(v);
        CHECK(mc.dec_depth < mc.enc_depth);
        CHECK(mc.dim % mc.heads == 0);
    }
    CHECK(parse_variant("nano") == Variant::nano);
    CHECK(to_string(Mode::smae) == "smae");
    CHECK_THROWS_AS(parse_variant("giant"), ConfigError);
    CHECK_THROWS_AS(parse_mode("vae"), ConfigError);
}
