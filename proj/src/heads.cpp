#include "attriprompt/heads.hpp"

#include <cmath>

#include "attriprompt/objectives.hpp"
#include "attriprompt/ops.hpp"

namespace attriprompt {

ChannelAffineHead init_head(int d_embed) {
    if (d_embed <= 0) throw config_error("head width must be positive");
    ChannelAffineHead head;
    head.alpha = Tensor({d_embed}, 1.0, true);
    head.beta = Tensor({d_embed}, 0.0, true);
    return head;
}

Tensor transform(Tape& tape, const Tensor& feature, const ChannelAffineHead& head) {
    return row_affine(tape, feature, head.alpha, head.beta);
}

Tensor align_loss(Tape& tape, const Tensor& transformed_image, const Tensor& transformed_classes,
                  int label, double tau) {
    return ce_loss(tape, transformed_image, transformed_classes, label, tau);
}

std::vector<double> fuse_predictions(const std::vector<double>& p_ce,
                                     const std::vector<double>& p_align, double lambda1) {
    if (p_ce.size() != p_align.size() || p_ce.empty()) {
        throw contract_error("fuse_predictions: probability vectors disagree in length");
    }
    if (!(lambda1 >= 0.0 && lambda1 <= 1.0)) {
        throw contract_error("fuse_predictions: lambda1 outside [0, 1]");
    }
    double sum_ce = 0.0, sum_align = 0.0;
    for (std::size_t i = 0; i < p_ce.size(); ++i) {
        sum_ce += p_ce[i];
        sum_align += p_align[i];
    }
    if (std::fabs(sum_ce - 1.0) > 1e-9 || std::fabs(sum_align - 1.0) > 1e-9) {
        throw contract_error("fuse_predictions: inputs are not probability vectors");
    }
    std::vector<double> fused(p_ce.size());
    for (std::size_t i = 0; i < fused.size(); ++i) {
        fused[i] = (1.0 - lambda1) * p_ce[i] + lambda1 * p_align[i];
    }
    return fused;
}

int predict_class(const std::vector<double>& probabilities) {
    if (probabilities.empty()) throw contract_error("predict_class: empty vector");
    int best = 0;
    for (std::size_t i = 1; i < probabilities.size(); ++i) {
        if (probabilities[i] > probabilities[static_cast<std::size_t>(best)]) {
            best = static_cast<int>(i);
        }
    }
    return best;
}

}  // namespace attriprompt
