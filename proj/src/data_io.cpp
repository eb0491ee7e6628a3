#include "stmae/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace stmae {

namespace {

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" ||
           ext == ".tiff";
}

// Natural sort key: filename with embedded numbers compared numerically.
std::vector<std::pair<std::string, long long>> natural_key(const std::string& s) {
    std::vector<std::pair<std::string, long long>> key;
    std::string text;
    for (std::size_t i = 0; i < s.size();) {
        if (std::isdigit(static_cast<unsigned char>(s[i]))) {
            std::size_t j = i;
            while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
            key.emplace_back(text, std::stoll(s.substr(i, j - i)));
            text.clear();
            i = j;
        } else {
            text += s[i++];
        }
    }
    if (!text.empty()) key.emplace_back(text, -1);
    return key;
}

std::vector<std::string> list_images_sorted(const fs::path& dir) {
    std::vector<std::string> out;
    if (!fs::exists(dir)) return out;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && is_image_file(entry.path()))
            out.push_back(entry.path().string());
    std::sort(out.begin(), out.end(), [](const std::string& a, const std::string& b) {
        return natural_key(fs::path(a).filename().string()) <
               natural_key(fs::path(b).filename().string());
    });
    return out;
}

std::vector<std::string> list_subdirs_sorted(const fs::path& dir) {
    std::vector<std::string> out;
    if (!fs::exists(dir)) return out;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_directory()) out.push_back(entry.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
}

void check_train_normal_only(const Dataset& d) {
    // Loaders only put normal items into train_items; keep the invariant
    // explicit anyway.
    if (d.train_items.empty()) return;
}

}  // namespace

Dataset load_mvtec_layout(const std::string& root, const std::string& category) {
    const fs::path cat = fs::path(root) / category;
    if (!fs::exists(cat / "train" / "good"))
        throw IoError("not an MVTec-style category root: " + cat.string());

    Dataset d;
    d.category = category;
    d.layout = "mvtec";
    d.train_items = list_images_sorted(cat / "train" / "good");

    const fs::path test_dir = cat / "test";
    for (const std::string& defect : list_subdirs_sorted(test_dir)) {
        const bool good = (defect == "good");
        const fs::path gt_dir = cat / "ground_truth" / defect;
        if (!good && !fs::exists(gt_dir))
            throw IoError("missing ground_truth directory for defect type: " + gt_dir.string());
        for (const std::string& img : list_images_sorted(test_dir / defect)) {
            TestItem item;
            item.image_path = img;
            item.label = good ? 0 : 1;
            if (!good) {
                const std::string stem = fs::path(img).stem().string();
                const fs::path mask = gt_dir / (stem + "_mask.png");
                if (!fs::exists(mask))
                    throw IoError("missing ground-truth mask: " + mask.string());
                if (image_dims(mask.string()) != image_dims(img))
                    throw InvalidInput("mask dimensions do not match the image: " + mask.string());
                item.mask_path = mask.string();
            }
            d.test_items.push_back(std::move(item));
        }
    }
    if (d.test_items.empty())
        std::cerr << "warning: category '" << category << "' has no test images\n";
    check_train_normal_only(d);
    return d;
}

Dataset load_folder_dataset(const std::string& root, const std::string& normal_class) {
    const std::vector<std::string> classes = list_subdirs_sorted(root);
    if (std::find(classes.begin(), classes.end(), normal_class) == classes.end())
        throw IoError("normal class '" + normal_class + "' not found under " + root);

    Dataset d;
    d.category = normal_class;
    d.layout = "folder";
    for (const std::string& cls : classes) {
        const fs::path cls_dir = fs::path(root) / cls;
        const std::vector<std::string> images = list_images_sorted(cls_dir);
        if (cls == normal_class) {
            // Split: if train/test subfolders exist use them, otherwise all
            // images train and also serve as the normal test pool.
            if (fs::exists(cls_dir / "train")) {
                d.train_items = list_images_sorted(cls_dir / "train");
                for (const std::string& img : list_images_sorted(cls_dir / "test"))
                    d.test_items.push_back({img, 0, "", "", -1});
            } else {
                d.train_items = images;
                for (const std::string& img : images) d.test_items.push_back({img, 0, "", "", -1});
            }
        } else {
            for (const std::string& img : fs::exists(cls_dir / "test")
                                              ? list_images_sorted(cls_dir / "test")
                                              : images)
                d.test_items.push_back({img, 1, "", "", -1});
        }
    }
    check_train_normal_only(d);
    return d;
}

Dataset load_frames_dataset(const std::string& root) {
    const fs::path labels_path = fs::path(root) / "labels.csv";
    std::ifstream labels_file(labels_path);
    if (!labels_file) throw IoError("missing frame label file: " + labels_path.string());

    std::map<std::pair<std::string, int>, int> labels;
    std::string line;
    while (std::getline(labels_file, line)) {
        if (line.empty() || line.rfind("clip,", 0) == 0) continue;
        std::stringstream ss(line);
        std::string clip, idx, label;
        if (!std::getline(ss, clip, ',') || !std::getline(ss, idx, ',') || !std::getline(ss, label))
            throw IoError("malformed label row: " + line);
        labels[{clip, std::stoi(idx)}] = std::stoi(label);
    }

    Dataset d;
    d.category = fs::path(root).filename().string();
    d.layout = "frames";
    for (const std::string& clip : list_subdirs_sorted(fs::path(root) / "train"))
        for (const std::string& img : list_images_sorted(fs::path(root) / "train" / clip))
            d.train_items.push_back(img);
    for (const std::string& clip : list_subdirs_sorted(fs::path(root) / "test")) {
        int frame_index = 0;
        for (const std::string& img : list_images_sorted(fs::path(root) / "test" / clip)) {
            auto it = labels.find({clip, frame_index});
            if (it == labels.end())
                throw IoError("no label for test frame " + clip + "/" + std::to_string(frame_index));
            d.test_items.push_back({img, it->second, "", clip, frame_index});
            ++frame_index;
        }
    }
    check_train_normal_only(d);
    return d;
}

Dataset few_shot_subset(const Dataset& dataset, int k, std::uint64_t seed) {
    if (k <= 0 || k > static_cast<int>(dataset.train_items.size()))
        throw InvalidInput("few_shot_subset: k=" + std::to_string(k) + " out of range (train size " +
                           std::to_string(dataset.train_items.size()) + ")");
    std::vector<int> order(dataset.train_items.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
        std::uniform_int_distribution<int> dist(0, i);
        std::swap(order[i], order[dist(rng)]);
    }
    order.resize(k);
    std::sort(order.begin(), order.end());
    Dataset out = dataset;
    out.train_items.clear();
    for (int idx : order) out.train_items.push_back(dataset.train_items[idx]);
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic desk-scale benchmark
// ---------------------------------------------------------------------------

namespace {

struct TextureFamily {
    struct Component {
        double fx, fy, amp;
        std::array<double, 3> color;
    };
    std::vector<Component> components;
    std::array<double, 3> base;
};

TextureFamily make_family(std::uint64_t seed, int components) {
    std::mt19937_64 rng(seed);
    // Wavelengths of roughly 5-20 px at the default 64 px resolution: local
    // patches then carry real orientation/phase structure instead of looking
    // like flat gradients, which keeps the swap-type defects detectable.
    std::uniform_real_distribution<double> freq(3.0, 12.0);
    std::uniform_real_distribution<double> amp(0.08, 0.20);
    std::uniform_real_distribution<double> col(0.3, 1.0);
    std::uniform_real_distribution<double> base(0.35, 0.65);
    TextureFamily fam;
    for (int i = 0; i < components; ++i)
        fam.components.push_back({freq(rng), freq(rng), amp(rng), {col(rng), col(rng), col(rng)}});
    fam.base = {base(rng), base(rng), base(rng)};
    return fam;
}

// One rendered normal texture: family-fixed frequencies, per-image phases,
// plus lightly smoothed seeded noise.
Grid render_texture(const TextureFamily& fam, int res, double noise_level, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> phase(0.0, 1.0);
    std::vector<double> phases;
    for (std::size_t i = 0; i < fam.components.size(); ++i) phases.push_back(phase(rng));

    Grid img(res, res, 3);
    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                double v = fam.base[ch];
                for (std::size_t i = 0; i < fam.components.size(); ++i) {
                    const auto& cmp = fam.components[i];
                    v += cmp.amp * cmp.color[ch] *
                         std::sin(2.0 * M_PI * (cmp.fx * x / res + cmp.fy * y / res + phases[i]));
                }
                img.at(y, x, ch) = v;
            }
    if (noise_level > 0.0) {
        std::normal_distribution<double> noise(0.0, noise_level);
        Grid n(res, res, 3);
        for (double& v : n.data) v = noise(rng);
        n = gaussian_blur(n, 1.0, 3);
        for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] += n.data[i];
    }
    for (double& v : img.data) v = std::clamp(v, 0.0, 1.0) * 255.0;
    return img;
}

void write_rgb_png(const std::string& path, const Grid& img) {
    cv::Mat m(img.h, img.w, CV_8UC3);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            auto& px = m.at<cv::Vec3b>(y, x);
            // OpenCV stores BGR
            px[2] = static_cast<unsigned char>(std::lround(img.at(y, x, 0)));
            px[1] = static_cast<unsigned char>(std::lround(img.at(y, x, 1)));
            px[0] = static_cast<unsigned char>(std::lround(img.at(y, x, 2)));
        }
    if (!cv::imwrite(path, m)) throw IoError("failed to write " + path);
}

void write_mask_png(const std::string& path, const Grid& mask) {
    cv::Mat m(mask.h, mask.w, CV_8UC1);
    for (int y = 0; y < mask.h; ++y)
        for (int x = 0; x < mask.w; ++x)
            m.at<unsigned char>(y, x) = mask.at(y, x, 0) > 0.5 ? 255 : 0;
    if (!cv::imwrite(path, m)) throw IoError("failed to write " + path);
}

struct Defect {
    Grid image;
    Grid mask;
};

Defect apply_anomaly(const Grid& normal, const std::string& type, const TextureFamily& fam,
                     const SynthSpec& spec, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int res = normal.h;
    Defect out{normal, Grid(res, res, 1, 0.0)};
    if (type == "blob-intensity") {
        std::uniform_int_distribution<int> center(res / 5, res - res / 5 - 1);
        std::uniform_int_distribution<int> radius(res / 12, res / 8);
        std::uniform_int_distribution<int> sign(0, 1);
        const int cx = center(rng), cy = center(rng), r = radius(rng);
        const double delta = (sign(rng) ? 1.0 : -1.0) * spec.blob_delta * 255.0;
        for (int y = 0; y < res; ++y)
            for (int x = 0; x < res; ++x)
                if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) {
                    out.mask.at(y, x, 0) = 1.0;
                    for (int ch = 0; ch < 3; ++ch)
                        out.image.at(y, x, ch) =
                            std::clamp(out.image.at(y, x, ch) + delta, 0.0, 255.0);
                }
    } else if (type == "patch-swap") {
        // Swapped content comes from a re-render of the same family with fresh
        // phases: identical texture statistics, locally flawless, but the phase
        // disagrees with the surrounding context. Only context-conditioned
        // reconstruction can flag it; a plain feature autoencoder reproduces it.
        const Grid shifted = render_texture(fam, res, spec.noise_level, derive_seed(seed, 0xC41));
        const int size = 2 * res / 5;
        std::uniform_int_distribution<int> pos(0, res - size - 1);
        int ax, ay, bx, by;
        do {
            ax = pos(rng); ay = pos(rng); bx = pos(rng); by = pos(rng);
        } while (std::abs(ax - bx) < size && std::abs(ay - by) < size);
        for (int dy = 0; dy < size; ++dy)
            for (int dx = 0; dx < size; ++dx) {
                for (int ch = 0; ch < 3; ++ch) {
                    out.image.at(ay + dy, ax + dx, ch) = shifted.at(by + dy, bx + dx, ch);
                    out.image.at(by + dy, bx + dx, ch) = shifted.at(ay + dy, ax + dx, ch);
                }
                out.mask.at(ay + dy, ax + dx, 0) = 1.0;
                out.mask.at(by + dy, bx + dx, 0) = 1.0;
            }
    } else if (type == "semantic-swap") {
        // Region re-rendered from a different texture family.
        const TextureFamily other = make_family(derive_seed(seed, 0xA17), spec.texture_components);
        const Grid foreign = render_texture(other, res, spec.noise_level, derive_seed(seed, 0xB29));
        const int size = res / 4;
        std::uniform_int_distribution<int> pos(0, res - size - 1);
        const int ox = pos(rng), oy = pos(rng);
        for (int dy = 0; dy < size; ++dy)
            for (int dx = 0; dx < size; ++dx) {
                for (int ch = 0; ch < 3; ++ch)
                    out.image.at(oy + dy, ox + dx, ch) = foreign.at(oy + dy, ox + dx, ch);
                out.mask.at(oy + dy, ox + dx, 0) = 1.0;
            }
    } else {
        throw ConfigError("unknown anomaly type: " + type);
    }
    return out;
}

}  // namespace

Dataset synth_generate(const SynthSpec& spec, const std::string& out_root) {
    if (spec.resolution <= 0 || spec.train_count <= 0)
        throw ConfigError("synth spec: resolution and train_count must be positive");
    const fs::path cat = fs::path(out_root) / "synthetic";
    fs::create_directories(cat / "train" / "good");
    fs::create_directories(cat / "test" / "good");
    if (spec.test_anomalous > 0) {
        fs::create_directories(cat / "test" / "anomaly");
        fs::create_directories(cat / "ground_truth" / "anomaly");
    }

    const TextureFamily fam = make_family(derive_seed(spec.seed, 1), spec.texture_components);
    char name[32];
    for (int i = 0; i < spec.train_count; ++i) {
        const Grid img = render_texture(fam, spec.resolution, spec.noise_level,
                                        derive_seed(spec.seed, 1000 + i));
        std::snprintf(name, sizeof(name), "%03d.png", i);
        write_rgb_png((cat / "train" / "good" / name).string(), img);
    }
    for (int i = 0; i < spec.test_normal; ++i) {
        const Grid img = render_texture(fam, spec.resolution, spec.noise_level,
                                        derive_seed(spec.seed, 2000 + i));
        std::snprintf(name, sizeof(name), "%03d.png", i);
        write_rgb_png((cat / "test" / "good" / name).string(), img);
    }
    for (int i = 0; i < spec.test_anomalous; ++i) {
        const Grid img = render_texture(fam, spec.resolution, spec.noise_level,
                                        derive_seed(spec.seed, 3000 + i));
        const std::string& type = spec.anomaly_types[i % spec.anomaly_types.size()];
        const Defect defect = apply_anomaly(img, type, fam, spec, derive_seed(spec.seed, 4000 + i));
        std::snprintf(name, sizeof(name), "%03d.png", i);
        write_rgb_png((cat / "test" / "anomaly" / name).string(), defect.image);
        std::snprintf(name, sizeof(name), "%03d_mask.png", i);
        write_mask_png((cat / "ground_truth" / "anomaly" / name).string(), defect.mask);
    }

    Dataset d = load_mvtec_layout(out_root, "synthetic");
    d.layout = "synthetic";
    return d;
}

// ---------------------------------------------------------------------------
// Image helpers
// ---------------------------------------------------------------------------

Grid load_image_rgb(const std::string& path, int target_h, int target_w) {
    cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);  // grayscale replicated to 3 channels
    if (m.empty()) throw IoError("cannot read image: " + path);
    if (m.rows != target_h || m.cols != target_w)
        cv::resize(m, m, cv::Size(target_w, target_h), 0, 0, cv::INTER_LINEAR);
    Grid out(target_h, target_w, 3);
    for (int y = 0; y < target_h; ++y)
        for (int x = 0; x < target_w; ++x) {
            const auto& px = m.at<cv::Vec3b>(y, x);
            out.at(y, x, 0) = px[2];
            out.at(y, x, 1) = px[1];
            out.at(y, x, 2) = px[0];
        }
    return out;
}

std::pair<int, int> image_dims(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (m.empty()) throw IoError("cannot read image: " + path);
    return {m.rows, m.cols};
}

Grid load_mask(const std::string& path, int target_h, int target_w) {
    cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw IoError("cannot read mask: " + path);
    if (m.rows != target_h || m.cols != target_w)
        cv::resize(m, m, cv::Size(target_w, target_h), 0, 0, cv::INTER_NEAREST);
    Grid out(target_h, target_w, 1);
    for (int y = 0; y < target_h; ++y)
        for (int x = 0; x < target_w; ++x) out.at(y, x, 0) = m.at<unsigned char>(y, x) > 127 ? 1.0 : 0.0;
    return out;
}

std::pair<double, double> save_gray_png(const std::string& path, const Grid& map) {
    double lo = map.data.empty() ? 0.0 : map.data[0], hi = lo;
    for (double v : map.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = (hi > lo) ? (hi - lo) : 1.0;
    cv::Mat m(map.h, map.w, CV_8UC1);
    for (int y = 0; y < map.h; ++y)
        for (int x = 0; x < map.w; ++x)
            m.at<unsigned char>(y, x) =
                static_cast<unsigned char>(std::lround((map.at(y, x, 0) - lo) / span * 255.0));
    if (!cv::imwrite(path, m)) throw IoError("failed to write " + path);
    return {lo, hi};
}

}  // namespace stmae
