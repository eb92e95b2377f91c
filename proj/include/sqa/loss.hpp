#pragma once

#include <string>

#include "sqa/ops.hpp"

namespace sqa {

// Weighted cross-entropy + dice combination; both weights default to 0.5.
struct LossConfig {
    double gamma_ce = 0.5;
    double gamma_dice = 0.5;
    double lambda_aux = 0.4;
    double dice_eps = 1.0;

    void validate() const {
        if (gamma_ce < 0 || gamma_dice < 0 || lambda_aux < 0 || dice_eps <= 0)
            throw ConfigError("loss weights must be nonnegative and dice_eps positive");
    }
    static LossConfig from_json_text(const std::string& text);
};

template <typename T>
struct LossParts {
    TensorPtr<T> total, ce, dice;
};

// gamma_ce * CE + gamma_dice * dice over one logits/labels pair.
template <typename T>
LossParts<T> combined_loss(Tape<T>* tape, const TensorPtr<T>& logits, const TensorPtr<T>& labels,
                           const LossConfig& cfg) {
    cfg.validate();
    LossParts<T> parts;
    parts.ce = softmax_cross_entropy(tape, logits, labels);
    parts.dice = dice_loss(tape, logits, labels, cfg.dice_eps);
    parts.total = add(tape, affine(tape, parts.ce, cfg.gamma_ce, 0.0),
                      affine(tape, parts.dice, cfg.gamma_dice, 0.0));
    return parts;
}

// main + lambda_aux * aux; aux may be null.
template <typename T>
TensorPtr<T> with_aux_loss(Tape<T>* tape, const TensorPtr<T>& main_total,
                           const TensorPtr<T>& aux_total, double lambda_aux) {
    if (!aux_total) return main_total;
    return add(tape, main_total, affine(tape, aux_total, lambda_aux, 0.0));
}

}  // namespace sqa
