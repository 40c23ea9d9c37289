#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "attriprompt/data.hpp"
#include "attriprompt/model.hpp"

namespace attriprompt {

// base_lr * 0.5 * (1 + cos(pi * t / total)); throws when t lies outside
// [0, total].
double cosine_lr(int step, int total_steps, double base_lr);

// Momentum buffers, one per trainable, in collect_trainables order.
struct SgdState {
    std::vector<std::vector<double>> velocity;
    std::int64_t step_count = 0;
};

SgdState init_sgd_state(const TrainableSet& trainables);

// v <- momentum * v + grad; p <- p - lr * v; gradients are zeroed afterwards.
// Requires every trainable to carry a populated gradient.
void sgd_step(TrainableSet& trainables, double lr, double momentum, SgdState& state);

// Loss terms of one sample, on the live tape.
struct SampleLossTerms {
    Tensor ce;
    Tensor align;
    Tensor cc;
    Tensor match;
};

SampleLossTerms sample_losses(Tape& tape, const Model& model, const Tensor& image, int label,
                              const ClassTokenization& class_set, const Tensor& plain_features);

// Batch-mean combined objective plus its scalar breakdown.
struct ForwardLoss {
    Tensor total;
    LossBreakdown breakdown;
};

ForwardLoss compute_batch_loss(Tape& tape, const Model& model, const std::vector<Tensor>& images,
                               const std::vector<int>& labels,
                               const ClassTokenization& class_set);

// One optimization step over a batch: forward, backward, SGD update.
LossBreakdown train_step(Model& model, const std::vector<Tensor>& images,
                         const std::vector<int>& labels, const ClassTokenization& class_set,
                         double lr, TrainableSet& trainables, SgdState& state);

// Full run over a dataset split. Writes one log line per step to `log` when
// given and returns every step's breakdown.
std::vector<LossBreakdown> train_run(Model& model, const Dataset& dataset,
                                     const FewShotSplit& split, SgdState& state,
                                     std::ostream* log);

// `step ce align cc div match total`, scalars at 9 significant digits.
std::string format_log_line(int step, const LossBreakdown& breakdown);

struct EvalResult {
    double base_acc = 0.0;
    double novel_acc = 0.0;
    double hm = 0.0;
};

// Fused-prediction accuracy over the base and novel test sets, each scored
// against its own class list. Read-only with respect to the model.
EvalResult evaluate(const Model& model, const Dataset& dataset, const FewShotSplit& split,
                    double lambda1);

// Fused class probabilities for one image against a class set.
std::vector<double> predict_probabilities(const Model& model, const Tensor& image,
                                          const ClassTokenization& class_set, double lambda1);

double harmonic_mean(double a, double b);

}  // namespace attriprompt
