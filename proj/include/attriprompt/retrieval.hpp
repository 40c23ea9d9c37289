#pragma once

#include <cstdint>
#include <vector>

#include "attriprompt/encoder.hpp"
#include "attriprompt/tensor.hpp"

namespace attriprompt {

// M learnable prompts of prompt_len tokens each, plus one retrieval key per
// prompt. Prompts are stored as one [M*prompt_len x d_txt] matrix so a
// prompt is a contiguous row block.
struct PromptPool {
    int size = 0;        // M
    int prompt_len = 0;  // tokens per prompt
    Tensor prompts;      // [M*prompt_len x d_txt], trainable
    Tensor keys;         // [M x d_vis], trainable
};

PromptPool init_prompt_pool(int size, int prompt_len, int d_txt, int d_vis, std::uint64_t seed);

// Clustering result for one vision layer.
struct AttributeSet {
    Tensor centroids;             // [k x d]
    std::vector<int> assignment;  // per input point
    double sse = 0.0;
    std::vector<double> sse_history;  // one entry per Lloyd iteration
};

// Lloyd's k-means over the rows of points. Initial centroids are the first k
// distinct rows in a seed-derived index order; an empty cluster is re-seeded
// to the point farthest from its nearest centroid. Stops early once the
// assignment no longer changes.
AttributeSet kmeans_cluster(const Tensor& points, int k, int iters, std::uint64_t seed);

// k-means over the patch tokens of one vision layer; the class token (row 0)
// is excluded first.
AttributeSet cluster_attributes(const Tensor& layer_tokens, int k, int iters, std::uint64_t seed);

// Softmax over exp(cos(centroid_i, key_j)); rows sum to 1. Plain values, no
// gradient flows here.
Tensor retrieval_scores(const AttributeSet& attributes, const PromptPool& pool);

// Greedy global assignment of one distinct key per attribute: all
// (attribute, key) pairs sorted by score descending, ties toward the lower
// attribute then lower key index; a pair is taken when both sides are free.
std::vector<int> select_unique(const Tensor& scores);

// Text layer -> vision layer mapping: floor(j * n_vis / n_txt).
std::vector<int> vision_layer_map(int n_vis_layers, int n_txt_layers);

struct LayerRetrieval {
    std::vector<int> selected;  // k distinct prompt ids, position i serves attribute i
    Tensor scores;              // [k x M]
    Tensor centroids;           // [k x d_vis], detached
};

struct RetrievalPlan {
    std::vector<LayerRetrieval> per_layer;  // one entry per text layer
};

// Clusters the mapped vision layer for every text layer, scores against the
// pool keys and selects prompts. Consumes detached vision values only.
RetrievalPlan build_plan(const LayerFeatureTrace& trace, const PromptPool& pool, int k, int iters,
                         const std::vector<int>& layer_map, std::uint64_t seed);

// Sum of cos(centroid, selected key) over every layer and selected pair.
// Gradient reaches the keys only; combined into the objective with a
// negative weight (the similarity is maximized).
Tensor match_loss(Tape& tape, const RetrievalPlan& plan, const PromptPool& pool);

// Mean pairwise cosine between flattened prompts with the 1/(M(M-1))
// normalizer; zero for a single-prompt pool.
Tensor diversity_loss(Tape& tape, const PromptPool& pool);

}  // namespace attriprompt
