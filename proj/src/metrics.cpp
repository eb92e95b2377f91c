#include "sqa/metrics.hpp"

#include <json.hpp>

#include "sqa/error.hpp"

namespace sqa {

ConfusionCounts confusion_counts(const std::vector<std::uint8_t>& pred,
                                 const std::vector<std::uint8_t>& gt, int class_id) {
    if (pred.size() != gt.size())
        throw ShapeError("confusion_counts: prediction and ground truth sizes differ (" +
                         std::to_string(pred.size()) + " vs " + std::to_string(gt.size()) + ")");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] == class_id;
        const bool g = gt[i] == class_id;
        if (p && g)
            ++c.tp;
        else if (p && !g)
            ++c.fp;
        else if (!p && g)
            ++c.fn;
        else
            ++c.tn;
    }
    return c;
}

double precision_pct(const ConfusionCounts& c) {
    const std::int64_t denom = c.tp + c.fp;
    return denom == 0 ? 0.0 : 100.0 * double(c.tp) / double(denom);
}

double recall_pct(const ConfusionCounts& c) {
    const std::int64_t denom = c.tp + c.fn;
    return denom == 0 ? 0.0 : 100.0 * double(c.tp) / double(denom);
}

double f1_from_pr(double precision, double recall) {
    const double denom = precision + recall;
    return denom == 0.0 ? 0.0 : 2.0 * precision * recall / denom;
}

MetricsReport metrics_from_counts(const std::array<ConfusionCounts, 3>& per_class) {
    MetricsReport r;
    r.counts = per_class;
    r.missed.precision = precision_pct(per_class[kMissed]);
    r.missed.recall = recall_pct(per_class[kMissed]);
    r.missed.f1 = f1_from_pr(r.missed.precision, r.missed.recall);
    r.mistaken.precision = precision_pct(per_class[kMistaken]);
    r.mistaken.recall = recall_pct(per_class[kMistaken]);
    r.mistaken.f1 = f1_from_pr(r.mistaken.precision, r.mistaken.recall);
    // correctly labeled pixels of all classes over the total
    const std::int64_t total = per_class[0].total();
    std::int64_t correct = 0;
    for (const auto& c : per_class) correct += c.tp;
    r.oa = total == 0 ? 0.0 : 100.0 * double(correct) / double(total);
    return r;
}

std::string MetricsReport::to_json() const {
    nlohmann::json j;
    const char* names[3] = {"background", "missed", "mistaken"};
    j["missed"] = {{"precision", missed.precision}, {"recall", missed.recall}, {"f1", missed.f1}};
    j["mistaken"] = {
        {"precision", mistaken.precision}, {"recall", mistaken.recall}, {"f1", mistaken.f1}};
    j["oa"] = oa;
    for (int c = 0; c < 3; ++c)
        j["counts"][names[c]] = {{"tp", counts[std::size_t(c)].tp},
                                 {"fp", counts[std::size_t(c)].fp},
                                 {"tn", counts[std::size_t(c)].tn},
                                 {"fn", counts[std::size_t(c)].fn}};
    return j.dump(2);
}

std::string MetricsReport::to_csv() const {
    std::string s =
        "missed_precision,missed_recall,missed_f1,"
        "mistaken_precision,mistaken_recall,mistaken_f1,oa\n";
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%.3f,%.3f,%.3f,%.3f,%.3f,%.3f,%.3f\n", missed.precision,
                  missed.recall, missed.f1, mistaken.precision, mistaken.recall, mistaken.f1, oa);
    return s + buf;
}

std::vector<std::uint8_t> argmax_labels(const TensorPtr<float>& logits) {
    if (logits->rank() != 4 || logits->dim(1) != 3)
        throw ShapeError("argmax_labels: logits must be [B,3,H,W]");
    const std::int64_t b = logits->dim(0), hw = logits->dim(2) * logits->dim(3);
    std::vector<std::uint8_t> out(std::size_t(b * hw));
    for (std::int64_t i = 0; i < b; ++i) {
        const float* z = logits->data.data() + i * 3 * hw;
        for (std::int64_t p = 0; p < hw; ++p) {
            int best = 0;
            float bv = z[p];
            for (int c = 1; c < 3; ++c) {
                const float v = z[c * hw + p];
                if (v > bv) {
                    bv = v;
                    best = c;
                }
            }
            out[std::size_t(i * hw + p)] = std::uint8_t(best);
        }
    }
    return out;
}

std::vector<std::uint8_t> labels_to_bytes(const TensorPtr<float>& labels) {
    std::vector<std::uint8_t> out(labels->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float v = labels->data[i];
        if (v != 0.0f && v != 1.0f && v != 2.0f)
            throw UsageError("label map values must be 0, 1, or 2");
        out[i] = std::uint8_t(v);
    }
    return out;
}

}  // namespace sqa
