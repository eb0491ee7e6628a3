// Acceptance gate: one pass/fail line per criterion, nonzero exit on any
// failure. The full-scale pretrained-backbone reproduction (criterion 8) is
// exercised outside CI and reported as skipped here.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <vector>

#include "stmae/evaluation.hpp"
#include "stmae/fptd.hpp"
#include "stmae/model.hpp"
#include "stmae/pipeline.hpp"
#include "stmae/residuals.hpp"
#include "stmae/training.hpp"

using namespace stmae;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
    std::printf("criterion %d: %s — %s\n", criterion, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

Grid random_grid(int h, int w, int c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<> dist(-1.5, 1.5);
    Grid g(h, w, c);
    for (double& v : g.data) v = dist(rng);
    return g;
}

// --- criterion 1: partition / transition invariants --------------------------

void criterion_partition() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(1);
    int violations = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 2 * (1 + static_cast<int>(rng() % 32));  // even, 2..64
        const DecoupledPair pair = decouple(n, rng());
        // exact disjoint equal halves
        std::vector<int> owner(n, -1);
        for (int idx : pair.indices1) owner[idx] = 1;
        for (int idx : pair.indices2) {
            if (owner[idx] != -1) ++violations;
            owner[idx] = 2;
        }
        for (int v : owner)
            if (v == -1) ++violations;
        if (pair.indices1.size() != pair.indices2.size()) ++violations;

        // transition fills every position once, always complementary
        Mat lat1(n / 2, 1), lat2(n / 2, 1);
        for (int j = 0; j < n / 2; ++j) {
            lat1(j, 0) = pair.indices1[j];
            lat2(j, 0) = 1000 + pair.indices2[j];
        }
        const Mat full = transition_reassemble(lat1, pair.indices1, lat2, pair.indices2);
        for (int posn = 0; posn < n; ++posn) {
            const bool token_from_1 = full(posn, 0) < 1000;
            const bool pos_in_1 = owner[posn] == 1;
            if (token_from_1 == pos_in_1) ++violations;  // must be complementary
        }
    }
    const double dt = seconds_since(t0);
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "1000 random (N, seed) partitions/transitions, %d violations, %.2fs", violations,
                  dt);
    report(1, violations == 0 && dt < 10.0, buf);
}

// --- criterion 2: loss identities --------------------------------------------

void criterion_loss_identities() {
    const auto t0 = Clock::now();
    bool ok = true;
    std::mt19937_64 rng(2);
    for (int i = 0; i < 100; ++i) {
        const Grid g = random_grid(6, 6, 4, rng());
        if (!(total_loss(g, g, 2, 5.0).total < 1e-6)) ok = false;
    }
    for (int i = 0; i < 50; ++i) {
        const Grid a = random_grid(6, 6, 4, rng()), b = random_grid(6, 6, 4, rng());
        const auto [a_int, a_ori] = residual_maps(a, b);
        for (double v : a_ori.data)
            if (v < 0.0 || v > 2.0) ok = false;
        double sum = 0.0;
        for (double v : a_int.data) sum += v;
        if (std::abs(intensity_loss(a, b, 1) - sum) > 1e-6) ok = false;
    }
    const double dt = seconds_since(t0);
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "identity loss < 1e-6, orientation residual in [0,2], K=1 "
                  "intensity/residual agreement, %.2fs",
                  dt);
    report(2, ok && dt < 10.0, buf);
}

// --- criterion 3: gradient check ---------------------------------------------

void criterion_gradcheck() {
    const auto t0 = Clock::now();
    double worst = 0.0;

    // (a) loss gradient with respect to the CARF
    {
        Grid carf = random_grid(4, 4, 4, 31);
        const Grid pfdf = random_grid(4, 4, 4, 32);
        const auto [rep, grad] = total_loss_grad(carf, pfdf, 2, 5.0);
        const double eps = 1e-6;
        for (std::size_t i = 0; i < carf.data.size(); ++i) {
            const double saved = carf.data[i];
            carf.data[i] = saved + eps;
            const double up = total_loss(carf, pfdf, 2, 5.0).total;
            carf.data[i] = saved - eps;
            const double down = total_loss(carf, pfdf, 2, 5.0).total;
            carf.data[i] = saved;
            const double fd = (up - down) / (2.0 * eps);
            worst = std::max(worst, std::abs(fd - grad.data[i]) /
                                        std::max({std::abs(fd), std::abs(grad.data[i]), 1e-3}));
        }
    }

    // (b) the same loss through one transformer block (N=4 tokens, D=16)
    {
        std::mt19937_64 rng(33);
        nn::TransformerBlock block;
        block.init(16, 4, 2, rng);
        Mat x(4, 16);
        x.setRandom();
        const Grid pfdf = random_grid(4, 4, 4, 34);  // 16 = K^2 C with K=2, C=4

        auto loss_of = [&](const Mat& input) {
            const Mat y = block.forward(input);
            const Grid carf = fold_patches(y, 2, 4, 4, 4);
            return total_loss(carf, pfdf, 2, 5.0).total;
        };

        nn::ParamRegistry reg;
        block.register_params(reg, "blk");
        nn::GradStore grads = nn::make_grad_store(reg);
        nn::TransformerBlock::Cache cache;
        const Mat y = block.forward(x, &cache);
        const Grid carf = fold_patches(y, 2, 4, 4, 4);
        const auto [rep, dcarf] = total_loss_grad(carf, pfdf, 2, 5.0);
        const Mat dy = partition_patches(dcarf, 2).patches;
        const Mat dx = block.backward(dy, cache, grads);

        const double eps = 1e-6;
        for (int r = 0; r < x.rows(); ++r)
            for (int c = 0; c < x.cols(); ++c) {
                const double saved = x(r, c);
                x(r, c) = saved + eps;
                const double up = loss_of(x);
                x(r, c) = saved - eps;
                const double down = loss_of(x);
                x(r, c) = saved;
                const double fd = (up - down) / (2.0 * eps);
                worst = std::max(worst, std::abs(fd - dx(r, c)) /
                                            std::max({std::abs(fd), std::abs(dx(r, c)), 1e-3}));
            }
    }

    const double dt = seconds_since(t0);
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "analytic vs central differences, worst relative error %.2e, %.1fs", worst, dt);
    report(3, worst < 1e-4 && dt < 60.0, buf);
}

// --- criterion 4: metric oracles ---------------------------------------------

double auroc_oracle(const std::vector<double>& s, const std::vector<int>& l) {
    double num = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (l[i] == 1 && l[j] == 0) {
                ++pairs;
                num += (s[i] > s[j]) ? 1.0 : (s[i] == s[j]) ? 0.5 : 0.0;
            }
    return num / static_cast<double>(pairs);
}

double ap_oracle(const std::vector<double>& s, const std::vector<int>& l) {
    std::vector<std::size_t> order(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    double ap = 0.0;
    int tp = 0, pos = 0;
    for (int v : l) pos += (v == 1);
    for (std::size_t r = 0; r < order.size(); ++r)
        if (l[order[r]] == 1) ap += static_cast<double>(++tp) / static_cast<double>(r + 1);
    return ap / pos;
}

void criterion_metric_oracles() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(4);
    int mismatches = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 199);
        std::vector<double> s(n);
        std::vector<int> l(n);
        for (int i = 0; i < n; ++i) s[i] = static_cast<double>(rng() % 10) / 4.0;  // many ties
        int pos = 0;
        for (int i = 0; i < n; ++i) pos += (l[i] = static_cast<int>(rng() % 2));
        if (pos == 0) l[0] = 1;
        if (pos == n) l[0] = 0;
        if (auroc(s, l) != auroc_oracle(s, l)) ++mismatches;
        if (average_precision(s, l) != ap_oracle(s, l)) ++mismatches;
    }
    const double dt = seconds_since(t0);
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "200 tied instances vs O(n^2) oracles, %d mismatches, %.2fs", mismatches, dt);
    report(4, mismatches == 0 && dt < 30.0, buf);
}

// --- criterion 5: bitwise round-trips ----------------------------------------

void criterion_roundtrips() {
    bool ok = true;

    // partition / fold
    for (int k : {1, 2, 4}) {
        const Grid g = random_grid(8, 8, 5, 50 + k);
        const PatchGrid p = partition_patches(g, k);
        if (fold_patches(p.patches, k, 5, 8, 8).data != g.data) ok = false;
    }

    // checkpoint save / load / forward
    ModelConfig mc = ModelConfig::preset(Variant::nano);
    mc.dim = 32;
    mc.heads = 4;
    mc.patch_size = 2;
    StMaeModel model(mc, 8, 8, 6, 77);
    const Grid pfdf = random_grid(8, 8, 6, 55);
    const Grid before = model.forward(pfdf, 9);

    TrainConfig tc;
    tc.seed = 7;
    const fs::path path = fs::temp_directory_path() / "stmae_acceptance.ckpt";
    save_checkpoint(snapshot_checkpoint(model, nullptr, tc, "fixed", 0), path.string());
    const Checkpoint loaded = load_checkpoint(path.string());
    fs::remove(path);
    StMaeModel fresh(mc, 8, 8, 6, 123);
    restore_model(fresh, loaded);
    for (std::size_t i = 0; i < model.params().items.size(); ++i)
        if (fresh.params().items[i]->value != model.params().items[i]->value) ok = false;
    if (fresh.forward(pfdf, 9).data != before.data) ok = false;

    report(5, ok, "partition/fold and checkpoint save/load reproduce data and forwards bitwise");
}

// --- criteria 6 & 7: desk-scale benchmark ------------------------------------

RunConfig synth_cfg(std::uint64_t train_seed, Mode mode, int epochs, const std::string& root) {
    RunConfig cfg = default_run_config(
        {"backbone.name=vgg19", "backbone.weights=random:1", "backbone.taps=[1,2]",
         "image.size=64", "pfdf.size=16", "fptd.patch_size=2", "model.variant=nano",
         "training.lr=1e-3", "score.sigma=2.0", "synth.noise_level=0.015",
         "data.layout=synthetic", "data.category=synthetic"});
    cfg.training.epochs = epochs;
    cfg.training.seed = train_seed;
    cfg.training.mode = mode;
    cfg.data.root = root;
    return cfg;
}

struct BenchResult {
    double image_auroc = 0.0, pixel_auroc = 0.0;
    double train_seconds = 0.0;
};

// Train on pre-extracted features, then score the cached test features
// directly (avoids re-running the frozen backbone per ablation arm).
BenchResult run_bench(const RunConfig& cfg, const std::vector<Grid>& train_pfdfs,
                      const std::vector<Grid>& test_pfdfs, const Dataset& dataset) {
    Pipeline pipe(cfg);
    const auto t0 = Clock::now();
    train(pipe.model(), train_pfdfs, cfg.training, cfg.seed_policy, cfg.loss_lambda,
          cfg.loss_modality);
    BenchResult result;
    result.train_seconds = seconds_since(t0);

    std::vector<double> image_scores, pixel_scores;
    std::vector<int> image_labels, pixel_labels;
    const std::uint64_t eval_seed = derive_seed(cfg.training.seed, 0xE7A1);
    for (std::size_t i = 0; i < dataset.test_items.size(); ++i) {
        const TestItem& item = dataset.test_items[i];
        // average a few decoupling draws per image: cheap, and removes the
        // masking-draw noise from the scored maps (a no-op for the ae mode)
        const AnomalyMap m = pipe.score_pfdf(test_pfdfs[i], derive_seed(eval_seed, i), 4);
        image_scores.push_back(m.image_score);
        image_labels.push_back(item.label);
        Grid mask(cfg.image_size, cfg.image_size, 1, 0.0);
        if (!item.mask_path.empty()) mask = load_mask(item.mask_path, cfg.image_size, cfg.image_size);
        for (std::size_t p = 0; p < m.map.data.size(); ++p) {
            pixel_scores.push_back(m.map.data[p]);
            pixel_labels.push_back(mask.data[p] > 0.5 ? 1 : 0);
        }
    }
    result.image_auroc = auroc(image_scores, image_labels);
    result.pixel_auroc = auroc(pixel_scores, pixel_labels);
    return result;
}

void criteria_desk_scale() {
    const fs::path root = fs::temp_directory_path() / "stmae_acceptance_synth";
    fs::remove_all(root);

    RunConfig cfg = synth_cfg(7, Mode::stmae, 80, root.string());
    const Dataset dataset = synth_generate(cfg.synth, cfg.data.root);
    Pipeline extractor(cfg);
    std::vector<std::string> test_paths;
    for (const TestItem& t : dataset.test_items) test_paths.push_back(t.image_path);
    const std::vector<Grid> train_pfdfs = extract_pfdfs(extractor, dataset.train_items);
    const std::vector<Grid> test_pfdfs = extract_pfdfs(extractor, test_paths);

    // criterion 6: full benchmark with the nano variant
    {
        const BenchResult r = run_bench(cfg, train_pfdfs, test_pfdfs, dataset);
        char buf[200];
        std::snprintf(buf, sizeof buf,
                      "synthetic benchmark (nano, 64x64, 200/50+50): image AUROC %.3f, pixel "
                      "AUROC %.3f, training %.0fs",
                      r.image_auroc, r.pixel_auroc, r.train_seconds);
        report(6, r.image_auroc >= 0.90 && r.pixel_auroc >= 0.90 && r.train_seconds <= 600.0, buf);
    }

    // criterion 7: transition ablation direction over 3 seeds at convergence
    // (the plain autoencoder converges earlier; the gap appears once the
    // masked model has fit the per-image texture phases)
    {
        double stmae_mean = 0.0, ae_mean = 0.0;
        for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
            stmae_mean += run_bench(synth_cfg(seed, Mode::stmae, 100, root.string()), train_pfdfs,
                                    test_pfdfs, dataset)
                              .pixel_auroc / 3.0;
            ae_mean += run_bench(synth_cfg(seed, Mode::ae, 100, root.string()), train_pfdfs,
                                 test_pfdfs, dataset)
                           .pixel_auroc / 3.0;
        }
        char buf[200];
        std::snprintf(buf, sizeof buf,
                      "transition ablation, 3-seed mean pixel AUROC: stmae %.3f vs ae %.3f "
                      "(gap %+.3f, need >= 0.02)",
                      stmae_mean, ae_mean, stmae_mean - ae_mean);
        report(7, stmae_mean >= ae_mean + 0.02, buf);
    }

    fs::remove_all(root);
}

}  // namespace

int main() {
    criterion_partition();
    criterion_loss_identities();
    criterion_gradcheck();
    criterion_metric_oracles();
    criterion_roundtrips();
    criteria_desk_scale();
    std::printf("criterion 8: SKIP — full-scale pretrained-backbone reproduction runs outside CI\n");
    if (g_failures) std::printf("%d criteria FAILED\n", g_failures);
    else std::printf("all binding criteria passed\n");
    return g_failures == 0 ? 0 : 1;
}
