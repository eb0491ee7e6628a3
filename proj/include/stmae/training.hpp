#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "stmae/config.hpp"
#include "stmae/model.hpp"
#include "stmae/pipeline.hpp"

namespace stmae {

// Decoupled weight decay Adam. Holds first/second moment state per parameter
// in registry order; state round-trips through checkpoints bitwise.
class AdamW {
  public:
    AdamW(nn::ParamRegistry& params, double lr, double weight_decay,
          double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step(const nn::GradStore& grads);

    std::int64_t steps_taken() const { return t_; }
    std::vector<Mat>& moment1() { return m_; }
    std::vector<Mat>& moment2() { return v_; }
    void set_steps_taken(std::int64_t t) { t_ = t; }

  private:
    nn::ParamRegistry* params_;
    double lr_, wd_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<Mat> m_, v_;
};

struct Checkpoint {
    std::uint32_t version = 1;
    ModelConfig model_config;
    int pfdf_h = 0, pfdf_w = 0, pfdf_c = 0;
    TrainConfig train_config;
    std::string seed_policy = "fresh-per-step";
    std::int64_t step = 0;
    std::vector<std::pair<std::string, Mat>> tensors;  // params + optimizer state
};

// Atomic (write-temp-then-rename) binary archive; load(save(x)) reproduces
// every tensor bitwise.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint snapshot_checkpoint(const StMaeModel& model, const AdamW* optimizer,
                               const TrainConfig& train_config, const std::string& seed_policy,
                               std::int64_t step);

// Copies parameter tensors (and optimizer state, when present) into a model
// whose configuration must match the checkpoint's.
void restore_model(StMaeModel& model, const Checkpoint& ckpt, AdamW* optimizer = nullptr);

struct LossRow {
    int step = 0;
    int epoch = 0;
    double l_int = 0.0, l_ori = 0.0, total = 0.0;
};

// One gradient update on the batch. Per-sample decoupling seeds derive from
// step_seed; the loss reported is evaluated at the pre-update weights.
LossRow training_step(StMaeModel& model, const std::vector<const Grid*>& batch, AdamW& optimizer,
                      nn::GradStore& grads, std::uint64_t step_seed, double lambda,
                      LossModality modality);

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<LossRow> log;
};

// Full optimization loop over pre-extracted PFDFs. Writes `step,epoch,
// l_int,l_ori,total` rows to loss_csv when given. Aborts on non-finite loss.
TrainResult train(StMaeModel& model, const std::vector<Grid>& train_pfdfs,
                  const TrainConfig& train_config, const std::string& seed_policy,
                  double lambda, LossModality modality, std::ostream* loss_csv = nullptr);

}  // namespace stmae
