#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sqa/tensor.hpp"

namespace sqa {

// QA label encoding shared across the project.
enum QaClass : std::uint8_t {
    kBackground = 0,
    kMissed = 1,
    kMistaken = 2,
};

// One-vs-rest pixel counts for a single class. tp+fp+tn+fn always equals the
// number of evaluated pixels.
struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::int64_t total() const { return tp + fp + tn + fn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        tn += o.tn;
        fn += o.fn;
        return *this;
    }
};

struct ClassMetrics {
    double precision = 0.0;  // percent
    double recall = 0.0;
    double f1 = 0.0;
};

struct MetricsReport {
    std::array<ConfusionCounts, 3> counts;  // background, missed, mistaken
    ClassMetrics missed, mistaken;
    double oa = 0.0;  // percent over all three classes

    std::string to_json() const;
    // Column order: per missed/mistaken Precision, Recall, F1-score, then OA.
    std::string to_csv() const;
};

// Per-class one-vs-rest counts for prediction/ground-truth label maps holding
// values in {0,1,2}. Sizes must match.
ConfusionCounts confusion_counts(const std::vector<std::uint8_t>& pred,
                                 const std::vector<std::uint8_t>& gt, int class_id);

// Percent metrics; any zero denominator yields 0.
double precision_pct(const ConfusionCounts& c);
double recall_pct(const ConfusionCounts& c);
double f1_from_pr(double precision, double recall);

MetricsReport metrics_from_counts(const std::array<ConfusionCounts, 3>& per_class);

// argmax over the class axis of [B,3,H,W] logits; ties resolve to the lowest
// class index.
std::vector<std::uint8_t> argmax_labels(const TensorPtr<float>& logits);

// Label-map tensor [B,H,W] (or [H,W]) with values {0,1,2} to bytes.
std::vector<std::uint8_t> labels_to_bytes(const TensorPtr<float>& labels);

}  // namespace sqa
