#pragma once

#include "attriprompt/tensor.hpp"

namespace attriprompt {

// Weights of the combined objective. lambda1 doubles as the test-time
// fusion weight, so it must stay in [0, 1].
struct LossWeights {
    double lambda1 = 0.5;
    double lambda2 = 25.0;
    double lambda3 = 0.1;
    double lambda4 = 0.01;

    void validate() const;
};

// The five loss terms and their combination for one step.
struct LossBreakdown {
    double ce = 0.0;
    double align = 0.0;
    double cc = 0.0;
    double div = 0.0;
    double match = 0.0;
    double total = 0.0;
};

// total = (1-l1)*ce + l1*align + l2*cc + l3*div - l4*match
LossBreakdown total_loss(double ce, double align, double cc, double div, double match,
                         const LossWeights& weights);

// Differentiable mirror of total_loss over scalar tensors.
Tensor combine_losses(Tape& tape, const Tensor& ce, const Tensor& align, const Tensor& cc,
                      const Tensor& div, const Tensor& match, const LossWeights& weights);

// -log softmax_label of cosine logits at temperature tau, for one sample.
Tensor ce_loss(Tape& tape, const Tensor& image_feature, const Tensor& class_features, int label,
               double tau);

// Per-class L1 distance between prompted and plain text features, summed
// over dimensions and averaged over classes. The plain features must be
// constants.
Tensor consistency_loss(Tape& tape, const Tensor& prompted, const Tensor& plain);

}  // namespace attriprompt
