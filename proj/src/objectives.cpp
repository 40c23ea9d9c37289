#include "attriprompt/objectives.hpp"

#include "attriprompt/encoder.hpp"
#include "attriprompt/ops.hpp"

namespace attriprompt {

void LossWeights::validate() const {
    if (!(lambda1 >= 0.0 && lambda1 <= 1.0)) {
        throw config_error("lambda1 must lie in [0, 1], got " + std::to_string(lambda1));
    }
    if (lambda2 < 0.0 || lambda3 < 0.0 || lambda4 < 0.0) {
        throw config_error("loss weights must be non-negative");
    }
}

LossBreakdown total_loss(double ce, double align, double cc, double div, double match,
                         const LossWeights& weights) {
    weights.validate();
    LossBreakdown b;
    b.ce = ce;
    b.align = align;
    b.cc = cc;
    b.div = div;
    b.match = match;
    b.total = (1.0 - weights.lambda1) * ce + weights.lambda1 * align + weights.lambda2 * cc +
              weights.lambda3 * div - weights.lambda4 * match;
    return b;
}

Tensor combine_losses(Tape& tape, const Tensor& ce, const Tensor& align, const Tensor& cc,
                      const Tensor& div, const Tensor& match, const LossWeights& weights) {
    weights.validate();
    Tensor total = scale(tape, ce, 1.0 - weights.lambda1);
    total = add(tape, total, scale(tape, align, weights.lambda1));
    total = add(tape, total, scale(tape, cc, weights.lambda2));
    total = add(tape, total, scale(tape, div, weights.lambda3));
    total = add(tape, total, scale(tape, match, -weights.lambda4));
    return total;
}

Tensor ce_loss(Tape& tape, const Tensor& image_feature, const Tensor& class_features, int label,
               double tau) {
    const int n_classes = class_features.rows();
    if (label < 0 || label >= n_classes) {
        throw contract_error("ce_loss: label " + std::to_string(label) + " outside [0, " +
                             std::to_string(n_classes) + ")");
    }
    Tensor logits = clip_logits(tape, image_feature, class_features, tau);
    Tensor lse = logsumexp_all(tape, logits);
    return sub(tape, lse, pick(tape, logits, label));
}

Tensor consistency_loss(Tape& tape, const Tensor& prompted, const Tensor& plain) {
    if (prompted.shape() != plain.shape()) {
        throw contract_error("consistency_loss: shape mismatch " + prompted.shape_string() +
                             " vs " + plain.shape_string());
    }
    if (plain.requires_grad()) {
        throw contract_error("consistency_loss: plain features must carry no gradient");
    }
    const int n_classes = prompted.rows();
    Tensor l1 = sum_all(tape, absolute(tape, sub(tape, prompted, plain)));
    return scale(tape, l1, 1.0 / n_classes);
}

}  // namespace attriprompt
