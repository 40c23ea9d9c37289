#pragma once

#include <vector>

#include "attriprompt/tensor.hpp"

namespace attriprompt {

// Trainable channel-wise scale and shift applied to a pooled feature. Starts
// as the identity so training begins exactly at the single-head baseline.
struct ChannelAffineHead {
    Tensor alpha;  // {d}, ones at init
    Tensor beta;   // {d}, zeros at init
};

ChannelAffineHead init_head(int d_embed);

// alpha ⊙ v + beta over a {d} feature or each row of a {rows x d} matrix.
Tensor transform(Tape& tape, const Tensor& feature, const ChannelAffineHead& head);

// Same functional form as ce_loss, evaluated on transformed features.
Tensor align_loss(Tape& tape, const Tensor& transformed_image,
                  const Tensor& transformed_classes, int label, double tau);

// Convex combination of two class-probability vectors; validates both inputs
// sum to 1 within 1e-9.
std::vector<double> fuse_predictions(const std::vector<double>& p_ce,
                                     const std::vector<double>& p_align, double lambda1);

// Argmax with ties toward the lower class index.
int predict_class(const std::vector<double>& probabilities);

}  // namespace attriprompt
