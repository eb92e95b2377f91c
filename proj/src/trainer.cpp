#include "sqa/trainer.hpp"

#include <cmath>
#include <numeric>
#include <thread>

#include <json.hpp>

namespace sqa {

Batch stack_triplets(const std::vector<const SqaTriplet*>& items) {
    if (items.empty()) throw UsageError("cannot stack an empty batch");
    const std::int64_t b = std::int64_t(items.size());
    const std::int64_t h = items[0]->image->dim(1), w = items[0]->image->dim(2);
    Batch out;
    out.image = make_tensor<float>({b, 3, h, w});
    out.mask = make_tensor<float>({b, 1, h, w});
    out.labels = make_tensor<float>({b, h, w});
    out.gt_mask_labels = make_tensor<float>({b, h, w});
    for (std::int64_t i = 0; i < b; ++i) {
        const auto& t = *items[std::size_t(i)];
        if (t.image->dim(1) != h || t.image->dim(2) != w)
            throw ShapeError("batch items must share extents");
        std::copy(t.image->data.begin(), t.image->data.end(),
                  out.image->data.begin() + i * 3 * h * w);
        std::copy(t.seg_mask->data.begin(), t.seg_mask->data.end(),
                  out.mask->data.begin() + i * h * w);
        std::copy(t.qa_labels->data.begin(), t.qa_labels->data.end(),
                  out.labels->data.begin() + i * h * w);
        if (t.gt_mask)
            std::copy(t.gt_mask->data.begin(), t.gt_mask->data.end(),
                      out.gt_mask_labels->data.begin() + i * h * w);
    }
    return out;
}

namespace {

float run_loss_step(SqaModel& model, Adam& opt, const Batch& batch,
                    const LossConfig& loss_cfg, bool check_finite) {
    FTape tape;
    tape.set_check_finite(check_finite);
    const auto out = model.forward(&tape, batch.image, batch.mask, /*training=*/true);
    auto parts = combined_loss(&tape, out.logits, batch.labels, loss_cfg);
    FTensor aux_total;
    if (out.aux_logits) {
        const auto& aux_labels =
            model.cfg.aux_target == "gt_mask" ? batch.gt_mask_labels : batch.labels;
        aux_total = combined_loss(&tape, out.aux_logits, aux_labels, loss_cfg).total;
    }
    auto total = with_aux_loss(&tape, parts.total, aux_total, loss_cfg.lambda_aux);
    const float loss_value = total->data[0];
    if (!std::isfinite(loss_value))
        return loss_value;  // caller re-runs in checked mode for the diagnostic
    opt.zero_grad();
    tape.backward(total);
    opt.step();
    return loss_value;
}

}  // namespace

float train_step(SqaModel& model, Adam& opt, const Batch& batch,
                 const LossConfig& loss_cfg) {
    const float loss_value = run_loss_step(model, opt, batch, loss_cfg, false);
    if (!std::isfinite(loss_value)) {
        // replay with per-op finite checking to name the first offender
        run_loss_step(model, opt, batch, loss_cfg, true);
        throw NumericsError("training loss is non-finite but no op failed the finite check");
    }
    return loss_value;
}

TrainResult train(SqaModel& model, const std::vector<SqaTriplet>& train_set,
                  const std::vector<SqaTriplet>* eval_set, const LossConfig& loss_cfg,
                  const TrainConfig& cfg) {
    if (train_set.empty()) throw UsageError("training set is empty");
    if (cfg.epochs < 1 || cfg.batch_size < 1)
        throw ConfigError("epochs and batch size must be positive");
    loss_cfg.validate();

    AdamConfig acfg;
    acfg.lr = cfg.lr;
    Adam opt(model.trainable_params(), acfg);

    TrainResult result;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t(0));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng = Rng::for_stream(cfg.seed, 0xe90c + std::uint64_t(epoch));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::int64_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
            std::vector<const SqaTriplet*> items;
            const std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
            for (std::size_t i = start; i < end; ++i) items.push_back(&train_set[order[i]]);
            loss_sum += double(train_step(model, opt, stack_triplets(items), loss_cfg));
            ++batches;
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = loss_sum / double(batches);
        if (cfg.eval_each_epoch && eval_set) {
            log.metrics = evaluate(model, *eval_set, cfg.eval_threads);
            log.has_metrics = true;
        }
        result.epochs.push_back(std::move(log));
    }

    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : result.epochs) {
        nlohmann::json je{{"epoch", e.epoch}, {"train_loss", e.train_loss}};
        if (e.has_metrics) je["metrics"] = nlohmann::json::parse(e.metrics.to_json());
        j.push_back(std::move(je));
    }
    result.log_json = j.dump(2);
    return result;
}

namespace {

std::array<ConfusionCounts, 3> count_range(const SqaModel* model,
                                           const std::vector<SqaTriplet>& items,
                                           std::size_t begin, std::size_t end) {
    std::array<ConfusionCounts, 3> acc{};
    for (std::size_t i = begin; i < end; ++i) {
        const auto& t = items[i];
        const auto gt = labels_to_bytes(t.qa_labels);
        std::vector<std::uint8_t> pred;
        if (model) {
            Batch b = stack_triplets({&t});
            const auto out = model->forward(nullptr, b.image, b.mask, /*training=*/false);
            pred = argmax_labels(out.logits);
        } else {
            pred.assign(gt.size(), kBackground);
        }
        for (int c = 0; c < 3; ++c) acc[std::size_t(c)] += confusion_counts(pred, gt, c);
    }
    return acc;
}

MetricsReport evaluate_impl(const SqaModel* model, const std::vector<SqaTriplet>& items,
                            int threads) {
    if (items.empty()) throw UsageError("evaluation set is empty");
    std::size_t nthreads = threads > 0 ? std::size_t(threads)
                                       : std::max(1u, std::thread::hardware_concurrency());
    nthreads = std::min(nthreads, items.size());

    std::array<ConfusionCounts, 3> total{};
    if (nthreads <= 1) {
        total = count_range(model, items, 0, items.size());
    } else {
        std::vector<std::array<ConfusionCounts, 3>> parts(nthreads);
        std::vector<std::thread> pool;
        const std::size_t chunk = (items.size() + nthreads - 1) / nthreads;
        for (std::size_t t = 0; t < nthreads; ++t) {
            const std::size_t begin = t * chunk, end = std::min(items.size(), begin + chunk);
            pool.emplace_back([&, t, begin, end]() {
                parts[t] = count_range(model, items, begin, end);
            });
        }
        for (auto& th : pool) th.join();
        for (const auto& p : parts)
            for (int c = 0; c < 3; ++c) total[std::size_t(c)] += p[std::size_t(c)];
    }
    return metrics_from_counts(total);
}

}  // namespace

MetricsReport evaluate(const SqaModel& model, const std::vector<SqaTriplet>& items, int threads) {
    return evaluate_impl(&model, items, threads);
}

MetricsReport evaluate_all_background(const std::vector<SqaTriplet>& items) {
    return evaluate_impl(nullptr, items, 1);
}

std::vector<SqaTriplet> load_all(const Dataset& ds) {
    std::vector<SqaTriplet> out;
    out.reserve(ds.entries.size());
    for (std::size_t i = 0; i < ds.entries.size(); ++i) out.push_back(load_triplet(ds, i));
    return out;
}

}  // namespace sqa
