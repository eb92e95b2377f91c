#pragma once

#include "sqa/data.hpp"
#include "sqa/loss.hpp"
#include "sqa/metrics.hpp"
#include "sqa/model.hpp"
#include "sqa/optim.hpp"

namespace sqa {

struct TrainConfig {
    int epochs = 10;
    int batch_size = 8;
    float lr = 1e-3f;
    std::uint64_t seed = 0;
    bool eval_each_epoch = false;
    int eval_threads = 0;  // 0: hardware concurrency
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    bool has_metrics = false;
    MetricsReport metrics;
};

struct TrainResult {
    std::vector<EpochLog> epochs;
    std::string log_json;  // serialized per-epoch trajectory
};

// In-memory batch of stacked triplets.
struct Batch {
    FTensor image;   // [B,3,H,W]
    FTensor mask;    // [B,1,H,W]
    FTensor labels;  // [B,H,W] in {0,1,2}
    FTensor gt_mask_labels;  // [B,H,W] in {0,1}, targets for mask-supervised aux
};

Batch stack_triplets(const std::vector<const SqaTriplet*>& items);

// One optimizer step over a batch; returns the combined loss value. A
// non-finite loss aborts with a diagnostic naming the first offending op.
float train_step(SqaModel& model, Adam& opt, const Batch& batch, const LossConfig& loss_cfg);

// Deterministic given (config seed, dataset): frozen parameters never update
// and the per-epoch loss trajectory serializes to JSON.
TrainResult train(SqaModel& model, const std::vector<SqaTriplet>& train_set,
                  const std::vector<SqaTriplet>* eval_set, const LossConfig& loss_cfg,
                  const TrainConfig& cfg);

// Micro-aggregated metrics: confusion counts pool over every pixel of every
// image before the formulas apply once. Images shard across threads; integer
// count merging keeps the result order-independent.
MetricsReport evaluate(const SqaModel& model, const std::vector<SqaTriplet>& items,
                       int threads = 0);

// The degenerate all-background predictor (error-class F1 is 0 by
// construction); used as a baseline and by the dummy-predictor CLI path.
MetricsReport evaluate_all_background(const std::vector<SqaTriplet>& items);

std::vector<SqaTriplet> load_all(const Dataset& ds);

}  // namespace sqa
