#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "attriprompt/ops.hpp"
#include "attriprompt/tensor.hpp"

namespace attriprompt {

// Dimensions and fixed scalars of the frozen dual encoder. The defaults are
// the desk-scale configuration used throughout the tests; vocab_size,
// max_text_len and channels are filled in from the task vocabulary.
struct ModelConfig {
    int image_size = 32;
    int patch_size = 8;
    int channels = 3;
    int d_vis = 32;
    int d_txt = 32;
    int d_embed = 16;
    int n_vis_layers = 4;
    int n_txt_layers = 4;
    int n_heads = 2;
    int vocab_size = 0;
    int max_text_len = 0;
    double temperature = 0.07;
    std::uint64_t seed = 1;

    int patches_per_side() const { return image_size / patch_size; }
    int n_patches() const { return patches_per_side() * patches_per_side(); }
    int patch_dim() const { return channels * patch_size * patch_size; }

    void validate() const;
};

constexpr double k_layer_norm_eps = 1e-5;

// Fixed synthetic vocabulary: specials, the three-word template, then one
// token per attribute value. Class sequences all share length 8:
// [SOS, a, photo, of, color, shape, texture, EOS].
struct Vocabulary {
    int n_colors = 0;
    int n_shapes = 0;
    int n_textures = 0;

    static constexpr int sos_id = 0;
    static constexpr int eos_id = 1;
    static constexpr int sequence_length = 8;

    int color_token(int c) const { return 5 + c; }
    int shape_token(int s) const { return 5 + n_colors + s; }
    int texture_token(int t) const { return 5 + n_colors + n_shapes + t; }
    int size() const { return 5 + n_colors + n_shapes + n_textures; }

    std::vector<int> class_sequence(int color, int shape, int texture) const;
};

struct ClassTokenization {
    std::vector<std::string> class_names;
    std::vector<std::vector<int>> token_ids;  // one fixed-length sequence per class

    int class_count() const { return static_cast<int>(class_names.size()); }
    // Stable identity of the class set, used as a cache key.
    std::string cache_key() const;
};

ClassTokenization tokenize_classes(const Vocabulary& vocab,
                                   const std::vector<std::string>& names,
                                   const std::vector<std::array<int, 3>>& factors);

struct TransformerBlock {
    Tensor ln1_gamma, ln1_beta;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gamma, ln2_beta;
    Tensor w_mlp_in, b_mlp_in, w_mlp_out, b_mlp_out;
};

// Every weight of the frozen dual encoder. requires_grad stays false on all
// of them for the lifetime of a model.
struct Backbone {
    Tensor patch_weight, patch_bias;  // [patch_dim x d_vis], [d_vis]
    Tensor cls_embed;                 // [d_vis]
    Tensor pos_vis;                   // [(N+1) x d_vis]
    std::vector<TransformerBlock> vis_blocks;
    Tensor vis_ln_gamma, vis_ln_beta;
    Tensor vis_proj;  // [d_vis x d_embed]

    Tensor token_embed;  // [vocab_size x d_txt]
    Tensor pos_txt;      // [max_text_len x d_txt]
    std::vector<TransformerBlock> txt_blocks;
    Tensor txt_ln_gamma, txt_ln_beta;
    Tensor txt_proj;  // [d_txt x d_embed]

    // Visits every tensor in a stable order with a stable name; the order
    // defines the checkpoint layout and the backbone checksum.
    void for_each_tensor(const std::function<void(const std::string&, Tensor&)>& visit);
    void for_each_tensor(const std::function<void(const std::string&, const Tensor&)>& visit) const;
};

// Deterministic scaled-normal initialization (std 0.02) from the seed;
// normalization affines start at identity. All tensors frozen.
Backbone init_frozen_backbone(const ModelConfig& config);

// Token outputs of every vision layer, captured during the vision forward
// pass; entry l has shape [(N+1) x d_vis]. Values are detached.
struct LayerFeatureTrace {
    std::vector<Tensor> per_layer;
};

struct VisionOutput {
    Tensor feature;  // {d_embed}, detached (the backbone is frozen)
    LayerFeatureTrace trace;
};

// Full vision pass: patchify, class token, positions, N_f blocks, final
// normalization of the class token, projection. Tape-free by construction.
VisionOutput vision_forward(const Backbone& backbone, const ModelConfig& config,
                            const Tensor& image);

// One pre-norm transformer block (bidirectional attention).
Tensor transformer_block_forward(Tape& tape, const Tensor& tokens, const TransformerBlock& block,
                                 int n_heads);

// Splits an image [C x H x W] into patch vectors [N x C*p*p], ordered by
// patch row then patch column, with (channel, y, x) inside a patch.
Tensor patchify(const Tensor& image, const ModelConfig& config);

struct PromptPool;
struct RetrievalPlan;

// Text features of the fixed template sequences, no prompts. Detached; one
// row per class.
Tensor text_forward_plain(const Backbone& backbone, const ModelConfig& config,
                          const ClassTokenization& tokenization);

// Text features with per-layer prompt injection. Each layer consumes the
// plan's freshly retrieved prompt tokens prepended to the fixed tokens and
// discards prompt positions afterwards; gradients reach the selected
// prompts.
Tensor text_forward_prompted(Tape& tape, const Backbone& backbone, const ModelConfig& config,
                             const ClassTokenization& tokenization, const RetrievalPlan& plan,
                             const PromptPool& pool);

// Cosine logits against every class feature row, divided by tau.
Tensor clip_logits(Tape& tape, const Tensor& image_feature, const Tensor& class_features,
                   double tau);

// Numeric helpers for inference paths that need no gradients.
std::vector<double> softmax_values(const std::vector<double>& logits);

}  // namespace attriprompt
