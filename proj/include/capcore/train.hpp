#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "capcore/data.hpp"
#include "capcore/model.hpp"
#include "capcore/rng.hpp"
#include "capcore/tensor.hpp"

namespace capcore {

struct TrainConfig {
    int64_t epochs = 75;
    int64_t batch_size = 32;
    double learning_rate = 1e-5;
    double weight_decay = 0.01;
    int64_t accumulation_steps = 1; // k micro-batches per optimizer update
    double clip_norm = 1.0;
    double lambda = 1e-4; // coefficient on the squared-weight penalty
    double loss_scale = 1024.0;
    bool mean_loss = true; // divide summed NLL by the non-pad token count
    uint64_t seed = 1234;

    void validate() const;
};

struct OptimizerState {
    std::vector<Tensor> m; // first moments, parallel to ModelParams::named()
    std::vector<Tensor> v; // second moments
    int64_t t = 0;         // applied updates, not micro-batches

    static OptimizerState init(const ModelParams& params);
};

// Parameters entering the L2 penalty: everything except norm gains and biases.
std::vector<Tensor> penalized_params(const ModelParams& params);

// Teacher-forced logits for every example in the batch, one [T x V] per row.
std::vector<Tensor> forward_batch(const Batch& batch, const ModelParams& params);

// Negative log-likelihood over unmasked positions (mean per token by default,
// plain sum when mean_loss is false) plus lambda * sum of squared weights.
Tensor compute_loss(const std::vector<Tensor>& logits, const Batch& batch,
                    const ModelParams& params, double lambda, bool mean_loss = true);

Tensor model_loss(const Batch& batch, const ModelParams& params, double lambda,
                  bool mean_loss = true);

// Scales every gradient by clip_norm / norm when the global L2 norm exceeds
// clip_norm; returns the pre-clip norm.
double clip_gradients(std::vector<Tensor>& grads, double clip_norm);

bool all_finite(const std::vector<Tensor>& grads);

// Decoupled weight decay: theta -= lr*m_hat/sqrt(v_hat + eps) + lr*wd*theta,
// beta1 0.9, beta2 0.999, eps 1e-8, bias-corrected by the update counter.
void adamw_step(const std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                OptimizerState& state, const TrainConfig& cfg);

struct StepLog {
    int64_t step = 0;  // applied updates so far
    int64_t epoch = 0;
    double loss = 0.0; // unscaled, averaged over the micro-batch group
    double grad_norm = 0.0;
    double loss_scale = 0.0;
    double wall_ms = 0.0;
    bool skipped = false;
};

struct TrainHooks {
    // Runs after unscaling, before the finite check. Lets tests inject faults
    // and lets callers observe raw gradients.
    std::function<void(std::vector<Tensor>&)> mangle_grads;
    std::function<void(const StepLog&)> on_step;
};

struct EpochStats {
    double mean_loss = 0.0;      // over micro-batches
    double mean_grad_norm = 0.0; // over applied updates, pre-clip
    double max_grad_norm = 0.0;
    int64_t updates = 0;
    int64_t skipped = 0;
};

struct TrainState {
    OptimizerState opt;
    double loss_scale = 1024.0;
    int64_t epoch = 0;       // completed epochs
    int64_t global_step = 0; // applied updates across epochs
    Rng rng;                 // drives the per-epoch batch order

    static TrainState init(const ModelParams& params, const TrainConfig& cfg);
};

// One pass over the batches in an order drawn from state.rng. Every group of
// accumulation_steps micro-batches accumulates gradients of
// loss * loss_scale / k, then unscales, clips, and applies one AdamW update.
// A non-finite gradient after unscaling skips the update and halves the loss
// scale once.
EpochStats train_epoch(ModelParams& params, const std::vector<Batch>& batches,
                       const TrainConfig& cfg, TrainState& state,
                       const TrainHooks& hooks = {});

struct Checkpoint {
    ModelConfig config;
    std::vector<std::string> vocab;
    std::vector<std::pair<std::string, Tensor>> tensors;
    bool has_optimizer = false;
    int64_t opt_step = 0;
    std::vector<std::pair<std::string, Tensor>> opt_tensors; // "m:name" / "v:name"
    int64_t epoch = 0;
    int64_t global_step = 0;
    double loss_scale = 1024.0;
    std::string rng_state;
};

Checkpoint make_checkpoint(const ModelParams& params, const Vocabulary& vocab,
                           const TrainState& state);

ModelParams params_from_checkpoint(const Checkpoint& ck);
Vocabulary vocab_from_checkpoint(const Checkpoint& ck);
TrainState state_from_checkpoint(const Checkpoint& ck, const ModelParams& params);

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

} // namespace capcore
