// Command-line front end: train / eval / infer / ablate / synth-bench.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stmae/common.hpp"
#include "stmae/config.hpp"
#include "stmae/data_io.hpp"
#include "stmae/evaluation.hpp"
#include "stmae/pipeline.hpp"
#include "stmae/training.hpp"

namespace fs = std::filesystem;
using namespace stmae;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::int64_t seed = -1;  // -1 -> keep the config's seed
    std::string out;
    int tta_rounds = 0;  // 0 -> keep the config's value
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "YAML configuration file");
    cmd->add_option("--set", args.overrides, "section.key=value override (repeatable)");
    cmd->add_option("--seed", args.seed, "base seed (overrides training.seed)");
    cmd->add_option("--out", args.out, "run output directory");
    cmd->add_option("--tta-rounds", args.tta_rounds, "decoupling seeds averaged per image");
}

RunConfig resolve_config(const CommonArgs& args) {
    RunConfig cfg = args.config_path.empty() ? default_run_config(args.overrides)
                                             : load_run_config(args.config_path, args.overrides);
    if (args.seed >= 0) cfg.training.seed = static_cast<std::uint64_t>(args.seed);
    if (args.tta_rounds > 0) cfg.tta_rounds = args.tta_rounds;
    cfg.validate();
    return cfg;
}

fs::path resolve_out(const CommonArgs& args, const std::string& command) {
    if (!args.out.empty()) return fs::path(args.out);
    const char* root = std::getenv("STMAE_OUT_ROOT");
    return fs::path(root && *root ? root : "runs") / command;
}

std::string fingerprint(const RunConfig& cfg) {
    const std::string yaml = cfg.to_yaml();
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : yaml) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Resolved config + seed record + version string: the reproducibility stub
// every run directory carries.
void write_run_record(const fs::path& dir, const RunConfig& cfg, const std::string& command) {
    fs::create_directories(dir);
    std::ofstream(dir / "config.yaml") << cfg.to_yaml();
    std::ofstream run(dir / "run.txt");
    run << kVersionString << "\ncommand: " << command << "\nseed: " << cfg.training.seed
        << "\nconfig_fingerprint: " << fingerprint(cfg) << "\n";
}

std::uint64_t eval_seed_of(const RunConfig& cfg) { return derive_seed(cfg.training.seed, 0xE7A1); }

void write_eval_outputs(const fs::path& dir, const RunConfig& cfg, const EvalOutputs& out) {
    MetricsReport report = out.report;
    report.config_fingerprint = fingerprint(cfg);
    std::ofstream metrics(dir / "metrics.csv");
    metrics << report.csv_header() << "\n" << report.csv_row() << "\n";
    std::ofstream scores(dir / "image_scores.csv");
    scores << "image_path,label,score,clip,frame_index\n";
    for (const PerImageScore& s : out.image_scores)
        scores << s.image_path << ',' << s.label << ',' << s.score << ',' << s.clip << ','
               << s.frame_index << '\n';
    std::cout << report.summary() << "\n";
}

MapSink heatmap_sink(const fs::path& dir, std::ofstream& minmax_csv) {
    fs::create_directories(dir);
    minmax_csv.open(dir / "minmax.csv");
    minmax_csv << "file,raw_min,raw_max,image_score\n";
    return [&minmax_csv, dir](std::size_t index, const TestItem& item, const AnomalyMap& map) {
        const std::string name =
            std::to_string(index) + "_" + fs::path(item.image_path).stem().string() + ".png";
        const auto [lo, hi] = save_gray_png((dir / name).string(), map.map);
        minmax_csv << name << ',' << lo << ',' << hi << ',' << map.image_score << '\n';
    };
}

Checkpoint run_training(const RunConfig& cfg, const fs::path& dir, const Dataset& dataset) {
    Pipeline pipe(cfg);
    std::cerr << "extracting " << dataset.train_items.size() << " training PFDFs...\n";
    const std::vector<Grid> pfdfs = extract_pfdfs(pipe, dataset.train_items);
    std::ofstream loss_csv(dir / "loss.csv");
    TrainResult result = train(pipe.model(), pfdfs, cfg.training, cfg.seed_policy, cfg.loss_lambda,
                               cfg.loss_modality, &loss_csv);
    save_checkpoint(result.checkpoint, (dir / "model.ckpt").string());
    if (!result.log.empty())
        std::cerr << "final loss " << result.log.back().total << " after " << result.log.size()
                  << " steps\n";
    return result.checkpoint;
}

int cmd_train(const CommonArgs& args) {
    const RunConfig cfg = resolve_config(args);
    const fs::path dir = resolve_out(args, "train");
    write_run_record(dir, cfg, "train");
    run_training(cfg, dir, load_dataset(cfg));
    std::cout << "checkpoint written to " << (dir / "model.ckpt").string() << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint_path, bool no_heatmaps) {
    const RunConfig cfg = resolve_config(args);
    const fs::path dir = resolve_out(args, "eval");
    write_run_record(dir, cfg, "eval");
    Pipeline pipe(cfg);
    restore_model(pipe.model(), load_checkpoint(checkpoint_path));
    const Dataset dataset = load_dataset(cfg);
    std::ofstream minmax_csv;
    const MapSink sink = no_heatmaps ? MapSink{} : heatmap_sink(dir / "heatmaps", minmax_csv);
    write_eval_outputs(dir, cfg,
                       evaluate_category(pipe, dataset, eval_seed_of(cfg), cfg.tta_rounds, sink));
    return 0;
}

int cmd_infer(const CommonArgs& args, const std::string& checkpoint_path,
              const std::vector<std::string>& images, bool no_heatmaps) {
    const RunConfig cfg = resolve_config(args);
    const fs::path dir = resolve_out(args, "infer");
    write_run_record(dir, cfg, "infer");
    Pipeline pipe(cfg);
    restore_model(pipe.model(), load_checkpoint(checkpoint_path));
    std::ofstream scores(dir / "image_scores.csv");
    scores << "image_path,score\n";
    std::ofstream minmax_csv;
    if (!no_heatmaps) {
        fs::create_directories(dir / "heatmaps");
        minmax_csv.open(dir / "heatmaps" / "minmax.csv");
        minmax_csv << "file,raw_min,raw_max,image_score\n";
    }
    const std::uint64_t seed = eval_seed_of(cfg);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const AnomalyMap map = pipe.score_image(images[i], derive_seed(seed, i), cfg.tta_rounds);
        scores << images[i] << ',' << map.image_score << '\n';
        std::cout << images[i] << "  score " << map.image_score << "\n";
        if (!no_heatmaps) {
            const std::string name =
                std::to_string(i) + "_" + fs::path(images[i]).stem().string() + ".png";
            const auto [lo, hi] = save_gray_png((dir / "heatmaps" / name).string(), map.map);
            minmax_csv << name << ',' << lo << ',' << hi << ',' << map.image_score << '\n';
        }
    }
    return 0;
}

int cmd_ablate(const CommonArgs& args, const std::string& axis) {
    const RunConfig cfg = resolve_config(args);
    const fs::path dir = resolve_out(args, "ablate");
    write_run_record(dir, cfg, "ablate");
    const std::vector<AblationRow> rows = ablation_run(cfg, axis, eval_seed_of(cfg));
    std::ofstream table(dir / "ablation.csv");
    table << "axis,value," << rows.front().report.csv_header() << "\n";
    for (const AblationRow& row : rows) {
        MetricsReport report = row.report;
        report.config_fingerprint = fingerprint(cfg);
        table << row.axis << ',' << row.value << ',' << report.csv_row() << "\n";
        std::cout << row.axis << "=" << row.value << "  image AUROC " << report.image_auroc
                  << (report.has_pixel ? "  pixel AUROC " + std::to_string(report.pixel_auroc)
                                       : std::string{})
                  << "\n";
    }
    return 0;
}

int cmd_synth_bench(const CommonArgs& args, bool no_heatmaps) {
    RunConfig cfg = resolve_config(args);
    const fs::path dir = resolve_out(args, "synth-bench");
    if (args.seed >= 0) cfg.synth.seed = static_cast<std::uint64_t>(args.seed);
    cfg.data.layout = "synthetic";
    cfg.data.root = (dir / "data").string();
    cfg.data.category = "synthetic";
    write_run_record(dir, cfg, "synth-bench");
    std::cerr << "generating synthetic benchmark under " << cfg.data.root << "...\n";
    const Dataset dataset = synth_generate(cfg.synth, cfg.data.root);
    run_training(cfg, dir, dataset);
    Pipeline pipe(cfg);
    restore_model(pipe.model(), load_checkpoint((dir / "model.ckpt").string()));
    std::ofstream minmax_csv;
    const MapSink sink = no_heatmaps ? MapSink{} : heatmap_sink(dir / "heatmaps", minmax_csv);
    write_eval_outputs(dir, cfg,
                       evaluate_category(pipe, dataset, eval_seed_of(cfg), cfg.tta_rounds, sink));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Siamese transition masked autoencoder anomaly detection"};
    app.set_version_flag("--version", kVersionString);
    app.require_subcommand(1);

    CommonArgs train_args, eval_args, infer_args, ablate_args, synth_args;
    std::string eval_ckpt, infer_ckpt, ablate_axis;
    std::vector<std::string> infer_images;
    bool eval_no_heatmaps = false, infer_no_heatmaps = false, synth_no_heatmaps = false;

    CLI::App* train = app.add_subcommand("train", "Fit the model on the configured dataset");
    add_common(train, train_args);

    CLI::App* eval = app.add_subcommand("eval", "Score a test set against a checkpoint");
    add_common(eval, eval_args);
    eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
    eval->add_flag("--no-heatmaps", eval_no_heatmaps, "suppress heatmap PNG output");

    CLI::App* infer = app.add_subcommand("infer", "Score individual images");
    add_common(infer, infer_args);
    infer->add_option("--checkpoint", infer_ckpt, "trained checkpoint")->required();
    infer->add_option("--input", infer_images, "image file (repeatable)")->required();
    infer->add_flag("--no-heatmaps", infer_no_heatmaps, "suppress heatmap PNG output");

    CLI::App* ablate = app.add_subcommand("ablate", "Train/evaluate along one ablation axis");
    add_common(ablate, ablate_args);
    ablate->add_option("--axis", ablate_axis,
                       "mode | K | hierarchy | backbone | variant | loss_modality")
        ->required();

    CLI::App* synth = app.add_subcommand("synth-bench",
                                         "Generate a synthetic benchmark, train, and evaluate");
    add_common(synth, synth_args);
    synth->add_flag("--no-heatmaps", synth_no_heatmaps, "suppress heatmap PNG output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (train->parsed()) return cmd_train(train_args);
        if (eval->parsed()) return cmd_eval(eval_args, eval_ckpt, eval_no_heatmaps);
        if (infer->parsed()) return cmd_infer(infer_args, infer_ckpt, infer_images,
                                              infer_no_heatmaps);
        if (ablate->parsed()) return cmd_ablate(ablate_args, ablate_axis);
        if (synth->parsed()) return cmd_synth_bench(synth_args, synth_no_heatmaps);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
