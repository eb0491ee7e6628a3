#include "stmae/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "stmae/training.hpp"

namespace stmae {

namespace {
void check_two_classes(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw InvalidInput("metric: scores/labels size mismatch or empty");
    const int first = labels.front();
    if (std::all_of(labels.begin(), labels.end(), [&](int l) { return l == first; }))
        throw InvalidInput("undefined metric: labels contain a single class");
}
}  // namespace

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_two_classes(scores, labels);
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // average ranks over tie groups; rank-sum form of Mann-Whitney U
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double rank_sum_pos = 0.0;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < n; ++k)
        if (labels[k] == 1) {
            rank_sum_pos += rank[k];
            ++pos;
        }
    const std::size_t neg = n - pos;
    return (rank_sum_pos - 0.5 * static_cast<double>(pos) * (pos + 1)) /
           (static_cast<double>(pos) * static_cast<double>(neg));
}

double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_two_classes(scores, labels);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double ap = 0.0;
    std::size_t tp = 0, total_pos = 0;
    for (int l : labels) total_pos += (l == 1);
    for (std::size_t r = 0; r < order.size(); ++r)
        if (labels[order[r]] == 1) {
            ++tp;
            ap += static_cast<double>(tp) / static_cast<double>(r + 1);
        }
    return ap / static_cast<double>(total_pos);
}

F1Result f1_accuracy(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_two_classes(scores, labels);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::size_t total_pos = 0;
    for (int l : labels) total_pos += (l == 1);
    const std::size_t n = scores.size();

    F1Result best;
    best.f1 = -1.0;
    std::size_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) (labels[order[k]] == 1 ? tp : fp)++;
        // threshold = this score: everything with score >= it predicts positive
        const std::size_t fn = total_pos - tp;
        const double f1 = (2.0 * tp) / static_cast<double>(2 * tp + fp + fn);
        if (f1 > best.f1) {
            best.f1 = f1;
            best.threshold = scores[order[i]];
            const std::size_t tn = (n - total_pos) - fp;
            best.accuracy = static_cast<double>(tp + tn) / static_cast<double>(n);
        }
        i = j + 1;
    }
    return best;
}

std::string MetricsReport::csv_header() const {
    return "image_auroc,pixel_auroc,image_ap,pixel_ap,f1,accuracy,threshold,image_count,"
           "pixel_count,config_fingerprint";
}

std::string MetricsReport::csv_row() const {
    std::ostringstream os;
    os << image_auroc << ',' << (has_pixel ? std::to_string(pixel_auroc) : "") << ','
       << image_ap << ',' << (has_pixel ? std::to_string(pixel_ap) : "") << ',' << f1 << ','
       << accuracy << ',' << threshold << ',' << image_count << ',' << pixel_count << ','
       << config_fingerprint;
    return os.str();
}

std::string MetricsReport::summary() const {
    std::ostringstream os;
    os << "image AUROC " << image_auroc << "  AP " << image_ap << "  F1 " << f1 << "  acc "
       << accuracy << " (threshold " << threshold << ")";
    if (has_pixel) os << "\npixel AUROC " << pixel_auroc << "  AP " << pixel_ap;
    os << "\nimages " << image_count;
    if (has_pixel) os << "  pixels " << pixel_count;
    return os.str();
}

EvalOutputs evaluate_category(const Pipeline& pipe, const Dataset& dataset,
                              std::uint64_t eval_seed, int tta_rounds, const MapSink& sink) {
    if (dataset.test_items.empty()) throw InvalidInput("evaluate_category: empty test set");
    const std::size_t n = dataset.test_items.size();
    const int img_size = pipe.cfg().image_size;

    std::vector<double> image_scores(n);
    std::vector<int> image_labels(n);
    std::vector<std::vector<float>> pixel_scores(n);
    const bool any_mask = std::any_of(dataset.test_items.begin(), dataset.test_items.end(),
                                      [](const TestItem& t) { return !t.mask_path.empty(); });

    std::vector<AnomalyMap> maps(sink ? n : 0);
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    const unsigned workers = std::min<unsigned>(std::max(1u, std::thread::hardware_concurrency()),
                                                static_cast<unsigned>(n));
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                try {
                    const TestItem& item = dataset.test_items[i];
                    const AnomalyMap result =
                        pipe.score_pfdf(pipe.pfdf_from_image(item.image_path),
                                        derive_seed(eval_seed, i), tta_rounds);
                    image_scores[i] = result.image_score;
                    image_labels[i] = item.label;
                    if (any_mask) {
                        pixel_scores[i].reserve(result.map.data.size());
                        for (double v : result.map.data)
                            pixel_scores[i].push_back(static_cast<float>(v));
                    }
                    if (sink) maps[i] = result;
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    for (std::thread& t : pool) t.join();
    if (error) std::rethrow_exception(error);
    if (sink)
        for (std::size_t i = 0; i < n; ++i) sink(i, dataset.test_items[i], maps[i]);

    EvalOutputs out;
    out.report.image_count = static_cast<int>(n);
    out.report.image_auroc = auroc(image_scores, image_labels);
    out.report.image_ap = average_precision(image_scores, image_labels);
    const F1Result f1 = f1_accuracy(image_scores, image_labels);
    out.report.f1 = f1.f1;
    out.report.accuracy = f1.accuracy;
    out.report.threshold = f1.threshold;

    if (any_mask) {
        // Pool every pixel of every test image into one ranking.
        std::vector<double> pooled;
        std::vector<int> pooled_labels;
        for (std::size_t i = 0; i < n; ++i) {
            const TestItem& item = dataset.test_items[i];
            Grid mask(img_size, img_size, 1, 0.0);
            if (!item.mask_path.empty()) mask = load_mask(item.mask_path, img_size, img_size);
            for (std::size_t p = 0; p < pixel_scores[i].size(); ++p) {
                pooled.push_back(pixel_scores[i][p]);
                pooled_labels.push_back(mask.data[p] > 0.5 ? 1 : 0);
            }
        }
        out.report.has_pixel = true;
        out.report.pixel_count = pooled.size();
        out.report.pixel_auroc = auroc(pooled, pooled_labels);
        out.report.pixel_ap = average_precision(pooled, pooled_labels);
    } else {
        std::cerr << "warning: no ground-truth masks; pixel metrics skipped\n";
    }

    for (std::size_t i = 0; i < n; ++i) {
        const TestItem& item = dataset.test_items[i];
        out.image_scores.push_back(
            {item.image_path, item.label, image_scores[i], item.clip, item.frame_index});
    }
    return out;
}

std::vector<std::string> ablation_axis_values(const std::string& axis) {
    if (axis == "mode") return {"ae", "smae", "stmae"};
    if (axis == "K") return {"2", "4", "8", "16"};
    if (axis == "hierarchy") return {"pixel", "s_feature", "d_feature", "pfdf"};
    if (axis == "backbone") return {"vgg19", "resnet34", "resnet50", "mobilenetv2"};
    if (axis == "variant") return {"nano", "tiny", "base", "huge"};
    if (axis == "loss_modality") return {"intensity", "orientation", "both"};
    throw ConfigError("unknown ablation axis: " + axis +
                      " (expected mode|K|hierarchy|backbone|variant|loss_modality)");
}

namespace {
RunConfig apply_axis(RunConfig cfg, const std::string& axis, const std::string& value) {
    if (axis == "mode") {
        cfg.training.mode = parse_mode(value);
    } else if (axis == "K") {
        cfg.patch_size = std::stoi(value);
    } else if (axis == "hierarchy") {
        if (value == "pixel") {
            cfg.backbone.name = "pixel";
            cfg.backbone.taps = {1};
        } else if (value == "s_feature") {
            cfg.backbone.taps = {1, 2};
        } else if (value == "d_feature") {
            cfg.backbone.taps = {3, 4};
        } else {
            cfg.backbone.taps = {1, 2, 3, 4};
        }
    } else if (axis == "backbone") {
        cfg.backbone.name = value;
    } else if (axis == "variant") {
        cfg.variant = value;
        cfg.model_dim = 0;
        cfg.enc_depth = 0;
        cfg.dec_depth = -1;
        cfg.heads = 0;
        cfg.ffb_mult = 0;
    } else if (axis == "loss_modality") {
        if (value == "intensity") cfg.loss_modality = LossModality::intensity;
        else if (value == "orientation") cfg.loss_modality = LossModality::orientation;
        else cfg.loss_modality = LossModality::both;
    }
    cfg.validate();
    return cfg;
}
}  // namespace

std::vector<AblationRow> ablation_run(const RunConfig& base_cfg, const std::string& axis,
                                      std::uint64_t eval_seed) {
    std::vector<AblationRow> rows;
    for (const std::string& value : ablation_axis_values(axis)) {
        const RunConfig cfg = apply_axis(base_cfg, axis, value);
        Pipeline pipe(cfg);
        const Dataset dataset = load_dataset(cfg);
        const std::vector<Grid> train_pfdfs = extract_pfdfs(pipe, dataset.train_items);
        train(pipe.model(), train_pfdfs, cfg.training, cfg.seed_policy, cfg.loss_lambda,
              cfg.loss_modality);
        const EvalOutputs eval = evaluate_category(pipe, dataset, eval_seed, cfg.tta_rounds);
        rows.push_back({axis, value, eval.report});
        std::cerr << "[ablate] " << axis << "=" << value << ": " << eval.report.summary() << "\n";
    }
    return rows;
}

}  // namespace stmae
