#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "attriprompt/tensor.hpp"

namespace attriprompt {

// Differentiable operations. Each op computes its result eagerly and, when
// any operand requires a gradient, appends one reverse rule to the tape.
// Gradients always accumulate (+=) so parameters used several times collect
// every contribution.

Tensor add(Tape& tape, Tensor a, Tensor b);
Tensor sub(Tape& tape, Tensor a, Tensor b);
Tensor mul(Tape& tape, Tensor a, Tensor b);
Tensor scale(Tape& tape, Tensor a, double c);

// Standard matrix product, 2-D operands only.
Tensor matmul(Tape& tape, Tensor a, Tensor b);
Tensor transpose(Tape& tape, Tensor a);

// Row-wise softmax with max subtraction; rows sum to 1.
Tensor softmax_rows(Tape& tape, Tensor x);

// Pairwise cosine similarity between rows of a [m x d] and rows of b [n x d].
// Throws degenerate_input_error when any row has zero norm.
Tensor cosine_rows(Tape& tape, Tensor a, Tensor b);

// Normalization over the last axis followed by the affine (gamma, beta).
// Accepts [d] or [rows x d].
Tensor layer_norm(Tape& tape, Tensor x, Tensor gamma, Tensor beta,
                  double eps);

Tensor gelu(Tape& tape, Tensor x);
Tensor absolute(Tape& tape, Tensor x);

// Copying slices; gradients scatter back into the source.
Tensor slice_rows(Tape& tape, Tensor x, int row_begin, int row_end);
Tensor slice_cols(Tape& tape, Tensor x, int col_begin, int col_end);
Tensor concat_rows(Tape& tape, const std::vector<Tensor>& parts);
Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts);

// y[i, :] = x[i, :] + b  (bias add over rows).
Tensor add_row_broadcast(Tape& tape, Tensor x, Tensor b);

// y[i, :] = alpha ⊙ x[i, :] + beta. Accepts [d] or [rows x d].
Tensor row_affine(Tape& tape, Tensor x, Tensor alpha, Tensor beta);

// Reductions to shape {1}.
Tensor sum_all(Tape& tape, Tensor x);
Tensor logsumexp_all(Tape& tape, Tensor x);

// Single entry by flat index, shape {1}.
Tensor pick(Tape& tape, Tensor x, int flat_index);

// Same data, new shape (copies; gradient passes straight through).
Tensor reshape(Tape& tape, Tensor x, std::vector<int> new_shape);

// Row gather: out[i, :] = table[ids[i], :].
Tensor embedding_rows(Tape& tape, Tensor table, const std::vector<int>& ids);

// --- finite-difference verification -------------------------------------

struct FiniteDiffReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_entry = 0;
    double worst_ad = 0.0;
    double worst_fd = 0.0;
};

// Objective evaluated at the current parameter values. When with_grad is
// true the callable must also run a reverse pass so parameter gradients are
// populated; when false it must leave gradients untouched.
using Objective = std::function<double(bool with_grad)>;

// Central-difference check of every entry of every listed parameter against
// the reverse-mode gradient. The relative error denominator is
// max(|g_ad|, |g_fd|, 1e-8). Throws determinism_error when two evaluations
// at the same point disagree.
FiniteDiffReport finite_diff_check(const Objective& fn,
                                   const std::vector<std::pair<std::string, Tensor>>& params,
                                   double step);

}  // namespace attriprompt
