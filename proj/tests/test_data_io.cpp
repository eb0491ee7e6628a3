#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "stmae/data_io.hpp"

using namespace stmae;
namespace fs = std::filesystem;

namespace {
struct TempDir {
    fs::path path;
    explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

SynthSpec tiny_spec(std::uint64_t seed = 3) {
    SynthSpec spec;
    spec.resolution = 32;
    spec.train_count = 6;
    spec.test_normal = 3;
    spec.test_anomalous = 3;
    spec.seed = seed;
    return spec;
}

std::vector<unsigned char> file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}
}  // namespace

TEST_CASE("synthetic generation is reproducible bit for bit") {
    TempDir a("stmae_synth_a"), b("stmae_synth_b");
    const Dataset da = synth_generate(tiny_spec(), a.path.string());
    const Dataset db = synth_generate(tiny_spec(), b.path.string());
    REQUIRE(da.train_items.size() == 6);
    REQUIRE(da.test_items.size() == 6);
    for (std::size_t i = 0; i < da.train_items.size(); ++i)
        CHECK(file_bytes(da.train_items[i]) == file_bytes(db.train_items[i]));
    for (std::size_t i = 0; i < da.test_items.size(); ++i) {
        CHECK(file_bytes(da.test_items[i].image_path) == file_bytes(db.test_items[i].image_path));
        if (!da.test_items[i].mask_path.empty())
            CHECK(file_bytes(da.test_items[i].mask_path) == file_bytes(db.test_items[i].mask_path));
    }
}

TEST_CASE("synthetic anomalies carry exact nonempty masks; normals carry none") {
    TempDir dir("stmae_synth_masks");
    const Dataset d = synth_generate(tiny_spec(5), dir.path.string());
    for (const TestItem& item : d.test_items) {
        if (item.label == 1) {
            REQUIRE_FALSE(item.mask_path.empty());
            const Grid mask = load_mask(item.mask_path, 32, 32);
            double sum = 0.0;
            for (double v : mask.data) sum += v;
            CHECK(sum > 0.0);  // the defect support is non-empty
            const auto [mh, mw] = image_dims(item.mask_path);
            const auto [ih, iw] = image_dims(item.image_path);
            CHECK(mh == ih);
            CHECK(mw == iw);
        } else {
            CHECK(item.mask_path.empty());
        }
    }
}

TEST_CASE("a spec without anomalies produces an all-normal test set") {
    TempDir dir("stmae_synth_nodefect");
    SynthSpec spec = tiny_spec();
    spec.test_anomalous = 0;
    const Dataset d = synth_generate(spec, dir.path.string());
    for (const TestItem& item : d.test_items) CHECK(item.label == 0);
}

TEST_CASE("the generated layout loads back through the standard loader") {
    TempDir dir("stmae_synth_reload");
    synth_generate(tiny_spec(), dir.path.string());
    const Dataset d = load_mvtec_layout(dir.path.string(), "synthetic");
    CHECK(d.train_items.size() == 6);
    CHECK(d.test_items.size() == 6);
    int anomalous = 0;
    for (const TestItem& t : d.test_items) anomalous += t.label;
    CHECK(anomalous == 3);
    CHECK(std::is_sorted(d.train_items.begin(), d.train_items.end()));  // deterministic order
}

TEST_CASE("a defect folder without ground truth is rejected by name") {
    TempDir dir("stmae_synth_nogt");
    synth_generate(tiny_spec(), dir.path.string());
    fs::remove_all(dir.path / "synthetic" / "ground_truth" / "anomaly");
    CHECK_THROWS_WITH_AS(load_mvtec_layout(dir.path.string(), "synthetic"),
                         doctest::Contains("anomaly"), IoError);
}

TEST_CASE("a mask whose dimensions disagree with its image is rejected") {
    TempDir dir("stmae_synth_badmask");
    const Dataset d = synth_generate(tiny_spec(), dir.path.string());
    std::string mask_path;
    for (const TestItem& t : d.test_items)
        if (!t.mask_path.empty()) mask_path = t.mask_path;
    REQUIRE_FALSE(mask_path.empty());
    Grid wrong(8, 8, 1, 1.0);  // 8x8 instead of 32x32
    save_gray_png(mask_path, wrong);
    CHECK_THROWS_AS(load_mvtec_layout(dir.path.string(), "synthetic"), InvalidInput);
}

TEST_CASE("train-only categories load with an empty test set") {
    TempDir dir("stmae_synth_trainonly");
    synth_generate(tiny_spec(), dir.path.string());
    fs::remove_all(dir.path / "synthetic" / "test");
    fs::remove_all(dir.path / "synthetic" / "ground_truth");
    const Dataset d = load_mvtec_layout(dir.path.string(), "synthetic");
    CHECK(d.train_items.size() == 6);
    CHECK(d.test_items.empty());
}

TEST_CASE("few-shot subsetting is seeded, stable, and leaves the test set alone") {
    TempDir dir("stmae_synth_fewshot");
    const Dataset d = synth_generate(tiny_spec(), dir.path.string());
    const Dataset a = few_shot_subset(d, 2, 9);
    const Dataset b = few_shot_subset(d, 2, 9);
    CHECK(a.train_items == b.train_items);
    CHECK(a.train_items.size() == 2);
    CHECK(a.test_items.size() == d.test_items.size());
    const Dataset full = few_shot_subset(d, 6, 1);
    CHECK(full.train_items == d.train_items);  // k = |train| is the identity
    CHECK_THROWS_AS(few_shot_subset(d, 7, 1), InvalidInput);
    CHECK(few_shot_subset(d, 2, 10).train_items != a.train_items);
}

TEST_CASE("folder layout: the normal class trains, every other class is anomalous") {
    TempDir synth("stmae_folder_src");
    const Dataset src = synth_generate(tiny_spec(), synth.path.string());

    TempDir dir("stmae_folder");
    for (const char* cls : {"zero", "one", "two"}) fs::create_directories(dir.path / cls);
    int i = 0;
    for (const std::string& img : src.train_items) {
        const char* cls = (i % 3 == 0) ? "zero" : (i % 3 == 1) ? "one" : "two";
        fs::copy_file(img, dir.path / cls / (std::to_string(i) + ".png"));
        ++i;
    }
    const Dataset d = load_folder_dataset(dir.path.string(), "one");
    CHECK(d.train_items.size() == 2);
    int anomalous = 0, normal = 0;
    for (const TestItem& t : d.test_items) (t.label ? anomalous : normal)++;
    CHECK(normal == 2);
    CHECK(anomalous == 4);
    for (const TestItem& t : d.test_items) CHECK(t.mask_path.empty());
    CHECK_THROWS_AS(load_folder_dataset(dir.path.string(), "nine"), IoError);
}

TEST_CASE("frames layout: clips enumerate naturally and labels come from the CSV") {
    TempDir synth("stmae_frames_src");
    const Dataset src = synth_generate(tiny_spec(), synth.path.string());

    TempDir dir("stmae_frames");
    fs::create_directories(dir.path / "train" / "clip01");
    fs::create_directories(dir.path / "test" / "clip01");
    // out-of-order names to exercise the natural numeric sort
    fs::copy_file(src.train_items[0], dir.path / "train" / "clip01" / "10.png");
    fs::copy_file(src.train_items[1], dir.path / "train" / "clip01" / "2.png");
    fs::copy_file(src.train_items[2], dir.path / "test" / "clip01" / "10.png");
    fs::copy_file(src.train_items[3], dir.path / "test" / "clip01" / "2.png");
    std::ofstream(dir.path / "labels.csv") << "clip,frame_index,label\nclip01,0,0\nclip01,1,1\n";

    const Dataset d = load_frames_dataset(dir.path.string());
    REQUIRE(d.test_items.size() == 2);
    CHECK(d.test_items[0].frame_index == 0);
    CHECK(d.test_items[0].image_path.ends_with("2.png"));  // 2 before 10
    CHECK(d.test_items[0].label == 0);
    CHECK(d.test_items[1].label == 1);

    fs::remove(dir.path / "labels.csv");
    CHECK_THROWS_AS(load_frames_dataset(dir.path.string()), IoError);
}

TEST_CASE("image helpers: RGB load with resize, mask binarization, score export") {
    TempDir dir("stmae_imghelpers");
    const Dataset d = synth_generate(tiny_spec(), dir.path.string());
    const Grid img = load_image_rgb(d.train_items[0], 16, 16);
    CHECK(img.h == 16);
    CHECK(img.c == 3);
    for (double v : img.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 255.0);
    }
    CHECK_THROWS_AS(load_image_rgb("/no/such/image.png", 16, 16), IoError);

    Grid map(8, 8, 1, 0.0);
    map.at(3, 3, 0) = 7.0;
    map.at(0, 0, 0) = -1.0;
    const auto [lo, hi] = save_gray_png((dir.path / "map.png").string(), map);
    CHECK(lo == -1.0);
    CHECK(hi == 7.0);
    const Grid back = load_mask((dir.path / "map.png").string(), 8, 8);
    CHECK(back.at(3, 3, 0) == 1.0);  // the maximum maps to white
}
