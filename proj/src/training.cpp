#include "stmae/training.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

namespace stmae {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

AdamW::AdamW(nn::ParamRegistry& params, double lr, double weight_decay, double beta1, double beta2,
             double eps)
    : params_(&params), lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const nn::Param* p : params.items) {
        m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
}

void AdamW::step(const nn::GradStore& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_->items.size(); ++i) {
        nn::Param& p = *params_->items[i];
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
        v_[i] = beta2_ * v_[i].array() + (1.0 - beta2_) * grads[i].array().square();
        const Mat mhat = m_[i] / bc1;
        const Mat vhat = v_[i] / bc2;
        if (p.decay && wd_ > 0.0) p.value *= (1.0 - lr_ * wd_);
        p.value.array() -= lr_ * mhat.array() / (vhat.array().sqrt() + eps_);
    }
}

// ---------------------------------------------------------------------------
// Checkpoint archive
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'T', 'M', 'A', 'E', 'C', 'K', '1'};

json model_config_json(const ModelConfig& mc) {
    return {{"variant", to_string(mc.variant)}, {"dim", mc.dim},
            {"enc_depth", mc.enc_depth},        {"dec_depth", mc.dec_depth},
            {"heads", mc.heads},                {"ffb_mult", mc.ffb_mult},
            {"patch_size", mc.patch_size},      {"mode", to_string(mc.mode)},
            {"siamese", mc.siamese}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig mc;
    mc.variant = parse_variant(j.at("variant"));
    mc.dim = j.at("dim");
    mc.enc_depth = j.at("enc_depth");
    mc.dec_depth = j.at("dec_depth");
    mc.heads = j.at("heads");
    mc.ffb_mult = j.at("ffb_mult");
    mc.patch_size = j.at("patch_size");
    mc.mode = parse_mode(j.at("mode"));
    mc.siamese = j.at("siamese");
    return mc;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    json header;
    header["version"] = ckpt.version;
    header["model_config"] = model_config_json(ckpt.model_config);
    header["pfdf"] = {{"h", ckpt.pfdf_h}, {"w", ckpt.pfdf_w}, {"c", ckpt.pfdf_c}};
    header["train_config"] = {{"lr", ckpt.train_config.lr},
                              {"batch_size", ckpt.train_config.batch_size},
                              {"epochs", ckpt.train_config.epochs},
                              {"optimizer", ckpt.train_config.optimizer},
                              {"weight_decay", ckpt.train_config.weight_decay},
                              {"seed", ckpt.train_config.seed},
                              {"mode", to_string(ckpt.train_config.mode)}};
    header["seed_policy"] = ckpt.seed_policy;
    header["step"] = ckpt.step;
    json dir = json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, tensor] : ckpt.tensors) {
        dir.push_back({{"name", name},
                       {"rows", tensor.rows()},
                       {"cols", tensor.cols()},
                       {"offset", offset}});
        offset += static_cast<std::uint64_t>(tensor.size()) * sizeof(double);
    }
    header["tensors"] = dir;
    const std::string header_str = header.dump();

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write checkpoint: " + path);
        out.write(kMagic, sizeof(kMagic));
        const std::uint64_t hlen = header_str.size();
        out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
        out.write(header_str.data(), static_cast<std::streamsize>(hlen));
        for (const auto& [name, tensor] : ckpt.tensors)
            out.write(reinterpret_cast<const char*>(tensor.data()),
                      static_cast<std::streamsize>(tensor.size() * sizeof(double)));
        if (!out) throw IoError("short write while saving checkpoint: " + path);
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, 7) != 0)
        throw IoError("not a checkpoint archive: " + path);
    if (magic[7] != kMagic[7])
        throw IoError("checkpoint format version mismatch in " + path +
                      " (expected '" + std::string(kMagic, 8) + "')");
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string header_str(hlen, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw IoError("truncated checkpoint header: " + path);
    json header;
    try {
        header = json::parse(header_str);
    } catch (const json::exception& e) {
        throw IoError("corrupt checkpoint header in " + path + ": " + e.what());
    }

    Checkpoint ckpt;
    ckpt.version = header.at("version");
    if (ckpt.version != 1)
        throw IoError("unsupported checkpoint version " + std::to_string(ckpt.version));
    ckpt.model_config = model_config_from_json(header.at("model_config"));
    ckpt.pfdf_h = header.at("pfdf").at("h");
    ckpt.pfdf_w = header.at("pfdf").at("w");
    ckpt.pfdf_c = header.at("pfdf").at("c");
    const json& tc = header.at("train_config");
    ckpt.train_config.lr = tc.at("lr");
    ckpt.train_config.batch_size = tc.at("batch_size");
    ckpt.train_config.epochs = tc.at("epochs");
    ckpt.train_config.optimizer = tc.at("optimizer");
    ckpt.train_config.weight_decay = tc.at("weight_decay");
    ckpt.train_config.seed = tc.at("seed");
    ckpt.train_config.mode = parse_mode(tc.at("mode"));
    ckpt.seed_policy = header.at("seed_policy");
    ckpt.step = header.at("step");
    for (const json& entry : header.at("tensors")) {
        Mat tensor(entry.at("rows").get<Eigen::Index>(), entry.at("cols").get<Eigen::Index>());
        in.read(reinterpret_cast<char*>(tensor.data()),
                static_cast<std::streamsize>(tensor.size() * sizeof(double)));
        if (!in) throw IoError("truncated checkpoint tensor data: " + path);
        ckpt.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(tensor));
    }
    return ckpt;
}

Checkpoint snapshot_checkpoint(const StMaeModel& model, const AdamW* optimizer,
                               const TrainConfig& train_config, const std::string& seed_policy,
                               std::int64_t step) {
    Checkpoint ckpt;
    ckpt.model_config = model.config();
    ckpt.pfdf_h = model.pfdf_h();
    ckpt.pfdf_w = model.pfdf_w();
    ckpt.pfdf_c = model.pfdf_c();
    ckpt.train_config = train_config;
    ckpt.seed_policy = seed_policy;
    ckpt.step = step;
    for (const nn::Param* p : model.params().items) ckpt.tensors.emplace_back(p->name, p->value);
    if (optimizer) {
        AdamW& opt = *const_cast<AdamW*>(optimizer);
        for (std::size_t i = 0; i < model.params().items.size(); ++i) {
            ckpt.tensors.emplace_back("opt.m." + model.params().items[i]->name, opt.moment1()[i]);
            ckpt.tensors.emplace_back("opt.v." + model.params().items[i]->name, opt.moment2()[i]);
        }
    }
    return ckpt;
}

void restore_model(StMaeModel& model, const Checkpoint& ckpt, AdamW* optimizer) {
    if (!(model.config() == ckpt.model_config) || model.pfdf_h() != ckpt.pfdf_h ||
        model.pfdf_w() != ckpt.pfdf_w || model.pfdf_c() != ckpt.pfdf_c)
        throw ConfigError("checkpoint does not match the model configuration");
    auto find = [&](const std::string& name) -> const Mat* {
        for (const auto& [n, t] : ckpt.tensors)
            if (n == name) return &t;
        return nullptr;
    };
    for (std::size_t i = 0; i < model.params().items.size(); ++i) {
        nn::Param& p = *model.params().items[i];
        const Mat* t = find(p.name);
        if (!t) throw IoError("checkpoint is missing tensor: " + p.name);
        if (t->rows() != p.value.rows() || t->cols() != p.value.cols())
            throw ConfigError("checkpoint tensor shape mismatch: " + p.name);
        p.value = *t;
        if (optimizer) {
            if (const Mat* m = find("opt.m." + p.name)) optimizer->moment1()[i] = *m;
            if (const Mat* v = find("opt.v." + p.name)) optimizer->moment2()[i] = *v;
        }
    }
    if (optimizer) optimizer->set_steps_taken(ckpt.step);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

LossRow training_step(StMaeModel& model, const std::vector<const Grid*>& batch, AdamW& optimizer,
                      nn::GradStore& grads, std::uint64_t step_seed, double lambda,
                      LossModality modality) {
    if (batch.empty()) throw InvalidInput("training_step: empty batch");
    nn::zero_grads(grads);
    const double inv_n = 1.0 / static_cast<double>(batch.size());

    struct SampleResult {
        LossReport report;
        nn::GradStore grads;
    };
    std::vector<SampleResult> results(batch.size());
    const unsigned workers = std::min<unsigned>(
        std::max(1u, std::thread::hardware_concurrency()), static_cast<unsigned>(batch.size()));
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < batch.size(); i = next.fetch_add(1)) {
                try {
                    StMaeModel::Trace trace;
                    const Grid carf =
                        model.forward(*batch[i], derive_seed(step_seed, i), &trace);
                    auto [report, dcarf] =
                        total_loss_grad(carf, *batch[i], model.config().patch_size, lambda, modality);
                    results[i].grads = nn::make_grad_store(model.params());
                    model.backward(dcarf, trace, results[i].grads);
                    results[i].report = report;
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    for (std::thread& t : pool) t.join();
    if (error) std::rethrow_exception(error);

    LossRow row;
    for (const SampleResult& r : results) {
        row.l_int += r.report.l_int * inv_n;
        row.l_ori += r.report.l_ori * inv_n;
        row.total += r.report.total * inv_n;
        for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += r.grads[i] * inv_n;
    }
    if (!std::isfinite(row.total))
        throw InvalidInput("training aborted: non-finite loss (total=" + std::to_string(row.total) +
                           ", l_int=" + std::to_string(row.l_int) +
                           ", l_ori=" + std::to_string(row.l_ori) + ")");
    optimizer.step(grads);
    return row;
}

TrainResult train(StMaeModel& model, const std::vector<Grid>& train_pfdfs,
                  const TrainConfig& train_config, const std::string& seed_policy,
                  double lambda, LossModality modality, std::ostream* loss_csv) {
    if (train_pfdfs.empty()) throw InvalidInput("train: empty dataset");
    train_config.validate();

    AdamW optimizer(model.params(), train_config.lr, train_config.weight_decay);
    nn::GradStore grads = nn::make_grad_store(model.params());
    if (loss_csv) *loss_csv << "step,epoch,l_int,l_ori,total\n";

    TrainResult result;
    std::vector<int> order(train_pfdfs.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(derive_seed(train_config.seed, 0x511FF1E));

    int step = 0;
    for (int epoch = 0; epoch < train_config.epochs; ++epoch) {
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
            std::uniform_int_distribution<int> dist(0, i);
            std::swap(order[i], order[dist(shuffle_rng)]);
        }
        for (std::size_t start = 0; start < order.size(); start += train_config.batch_size) {
            std::vector<const Grid*> batch;
            for (std::size_t i = start;
                 i < std::min(order.size(), start + train_config.batch_size); ++i)
                batch.push_back(&train_pfdfs[order[i]]);
            // Task resampling: a fresh decoupling seed per step (unless the
            // fixed policy is configured).
            const std::uint64_t step_seed =
                seed_policy == "fixed" ? train_config.seed
                                       : derive_seed(train_config.seed, static_cast<std::uint64_t>(step));
            LossRow row = training_step(model, batch, optimizer, grads, step_seed, lambda, modality);
            row.step = step;
            row.epoch = epoch;
            if (loss_csv)
                *loss_csv << row.step << ',' << row.epoch << ',' << row.l_int << ',' << row.l_ori
                          << ',' << row.total << '\n';
            result.log.push_back(row);
            ++step;
        }
    }
    result.checkpoint =
        snapshot_checkpoint(model, &optimizer, train_config, seed_policy, step);
    return result;
}

}  // namespace stmae
