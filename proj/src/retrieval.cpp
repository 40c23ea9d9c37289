#include "attriprompt/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "attriprompt/seeds.hpp"

namespace attriprompt {

namespace {

double squared_distance(const double* a, const double* b, int d) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) {
        const double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}

bool rows_equal(const double* a, const double* b, int d) {
    for (int i = 0; i < d; ++i) {
        if (a[i] != b[i]) return false;
    }
    return true;
}

double row_norm(const double* a, int d) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) s += a[i] * a[i];
    return std::sqrt(s);
}

}  // namespace

PromptPool init_prompt_pool(int size, int prompt_len, int d_txt, int d_vis, std::uint64_t seed) {
    if (size <= 0 || prompt_len <= 0) {
        throw config_error("prompt pool needs a positive size and prompt length");
    }
    std::mt19937_64 rng(mix_seed(seed, seed_stream::prompt_pool));
    std::normal_distribution<double> dist(0.0, 0.02);
    PromptPool pool;
    pool.size = size;
    pool.prompt_len = prompt_len;
    pool.prompts = Tensor({size * prompt_len, d_txt}, 0.0, true);
    for (double& v : pool.prompts.values()) v = dist(rng);
    pool.keys = Tensor({size, d_vis}, 0.0, true);
    for (double& v : pool.keys.values()) v = dist(rng);
    // a zero-norm key cannot be retrieved against; redraw such rows
    for (int i = 0; i < size; ++i) {
        double* row = pool.keys.values().data() + static_cast<std::size_t>(i) * d_vis;
        while (row_norm(row, d_vis) == 0.0) {
            for (int j = 0; j < d_vis; ++j) row[j] = dist(rng);
        }
    }
    return pool;
}

AttributeSet kmeans_cluster(const Tensor& points, int k, int iters, std::uint64_t seed) {
    const int n = points.rows();
    const int d = points.cols();
    if (k <= 0 || k > n) {
        throw config_error("kmeans: k=" + std::to_string(k) + " invalid for " + std::to_string(n) +
                           " points");
    }
    if (iters <= 0) throw config_error("kmeans: iteration count must be positive");
    const double* data = points.values().data();

    // Initial centroids: walk a seed-derived permutation and take the first k
    // distinct rows; duplicates fill any remainder and the empty-cluster rule
    // separates them later.
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<int> chosen;
    for (int idx : order) {
        if (static_cast<int>(chosen.size()) == k) break;
        bool duplicate = false;
        for (int prev : chosen) {
            if (rows_equal(data + static_cast<std::size_t>(idx) * d,
                           data + static_cast<std::size_t>(prev) * d, d)) {
                duplicate = true;
                break;
            }
        }
        if (!duplicate) chosen.push_back(idx);
    }
    for (std::size_t i = 0; chosen.size() < static_cast<std::size_t>(k); ++i) {
        chosen.push_back(order[i % order.size()]);
    }

    AttributeSet result;
    result.centroids = Tensor({k, d}, 0.0);
    for (int c = 0; c < k; ++c) {
        std::copy_n(data + static_cast<std::size_t>(chosen[static_cast<std::size_t>(c)]) * d, d,
                    result.centroids.values().data() + static_cast<std::size_t>(c) * d);
    }

    std::vector<int> assignment(static_cast<std::size_t>(n), -1);
    std::vector<int> prev_assignment;
    std::vector<double> point_dist(static_cast<std::size_t>(n), 0.0);
    double* centroids = result.centroids.values().data();

    for (int it = 0; it < iters; ++it) {
        // assignment step, ties to the lower centroid index
        for (int i = 0; i < n; ++i) {
            const double* p = data + static_cast<std::size_t>(i) * d;
            int best = 0;
            double best_d = squared_distance(p, centroids, d);
            for (int c = 1; c < k; ++c) {
                const double dist = squared_distance(p, centroids + static_cast<std::size_t>(c) * d, d);
                if (dist < best_d) {
                    best_d = dist;
                    best = c;
                }
            }
            assignment[static_cast<std::size_t>(i)] = best;
            point_dist[static_cast<std::size_t>(i)] = best_d;
        }
        // re-seed empty clusters to the point farthest from its centroid
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (int a : assignment) counts[static_cast<std::size_t>(a)]++;
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] != 0) continue;
            int far = 0;
            for (int i = 1; i < n; ++i) {
                if (point_dist[static_cast<std::size_t>(i)] > point_dist[static_cast<std::size_t>(far)]) {
                    far = i;
                }
            }
            counts[static_cast<std::size_t>(assignment[static_cast<std::size_t>(far)])]--;
            assignment[static_cast<std::size_t>(far)] = c;
            counts[static_cast<std::size_t>(c)] = 1;
            std::copy_n(data + static_cast<std::size_t>(far) * d, d,
                        centroids + static_cast<std::size_t>(c) * d);
            point_dist[static_cast<std::size_t>(far)] = 0.0;
        }
        // mean update; clusters emptied by the re-seed keep their position
        std::vector<double> sums(static_cast<std::size_t>(k) * d, 0.0);
        for (int i = 0; i < n; ++i) {
            const double* p = data + static_cast<std::size_t>(i) * d;
            double* s = sums.data() + static_cast<std::size_t>(assignment[static_cast<std::size_t>(i)]) * d;
            for (int j = 0; j < d; ++j) s[j] += p[j];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] == 0) continue;
            double* crow = centroids + static_cast<std::size_t>(c) * d;
            for (int j = 0; j < d; ++j) {
                crow[j] = sums[static_cast<std::size_t>(c) * d + j] / counts[static_cast<std::size_t>(c)];
            }
        }
        double sse = 0.0;
        for (int i = 0; i < n; ++i) {
            sse += squared_distance(data + static_cast<std::size_t>(i) * d,
                                    centroids + static_cast<std::size_t>(assignment[static_cast<std::size_t>(i)]) * d,
                                    d);
        }
        result.sse_history.push_back(sse);
        result.sse = sse;
        if (assignment == prev_assignment) break;
        prev_assignment = assignment;
    }
    result.assignment = std::move(assignment);
    return result;
}

AttributeSet cluster_attributes(const Tensor& layer_tokens, int k, int iters, std::uint64_t seed) {
    const int n_tokens = layer_tokens.rows();
    if (n_tokens < 2) throw config_error("cluster_attributes: no patch tokens");
    const int n_patches = n_tokens - 1;  // row 0 is the class token
    if (k > n_patches) {
        throw config_error("cluster_attributes: k=" + std::to_string(k) + " exceeds " +
                           std::to_string(n_patches) + " patch tokens");
    }
    Tape scratch;
    Tensor patches = slice_rows(scratch, layer_tokens, 1, n_tokens);
    return kmeans_cluster(patches, k, iters, seed);
}

Tensor retrieval_scores(const AttributeSet& attributes, const PromptPool& pool) {
    const Tensor& centroids = attributes.centroids;
    const int k = centroids.rows();
    const int d = centroids.cols();
    if (d != pool.keys.cols()) {
        throw shape_error("retrieval_scores: centroid width " + std::to_string(d) +
                          " vs key width " + std::to_string(pool.keys.cols()));
    }
    const int m = pool.keys.rows();
    Tensor scores({k, m}, 0.0);
    for (int i = 0; i < k; ++i) {
        const double* a = centroids.values().data() + static_cast<std::size_t>(i) * d;
        const double na = row_norm(a, d);
        if (na == 0.0) {
            throw degenerate_input_error("retrieval_scores: zero-norm centroid " +
                                         std::to_string(i));
        }
        double* row = scores.values().data() + static_cast<std::size_t>(i) * m;
        double mx = -2.0;
        for (int j = 0; j < m; ++j) {
            const double* b = pool.keys.values().data() + static_cast<std::size_t>(j) * d;
            const double nb = row_norm(b, d);
            if (nb == 0.0) {
                throw degenerate_input_error("retrieval_scores: zero-norm key " +
                                             std::to_string(j));
            }
            double dot = 0.0;
            for (int l = 0; l < d; ++l) dot += a[l] * b[l];
            row[j] = dot / (na * nb);
            mx = std::max(mx, row[j]);
        }
        double denom = 0.0;
        for (int j = 0; j < m; ++j) {
            row[j] = std::exp(row[j] - mx);
            denom += row[j];
        }
        for (int j = 0; j < m; ++j) row[j] /= denom;
    }
    return scores;
}

std::vector<int> select_unique(const Tensor& scores) {
    const int k = scores.rows();
    const int m = scores.cols();
    if (m < k) {
        throw contract_error("select_unique: " + std::to_string(k) + " attributes but only " +
                             std::to_string(m) + " keys");
    }
    struct Pair {
        double score;
        int attribute;
        int key;
    };
    std::vector<Pair> pairs;
    pairs.reserve(static_cast<std::size_t>(k) * m);
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < m; ++j) {
            pairs.push_back({scores.at(i, j), i, j});
        }
    }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.attribute != b.attribute) return a.attribute < b.attribute;
        return a.key < b.key;
    });
    std::vector<int> chosen(static_cast<std::size_t>(k), -1);
    std::vector<char> key_taken(static_cast<std::size_t>(m), 0);
    int assigned = 0;
    for (const Pair& p : pairs) {
        if (assigned == k) break;
        if (chosen[static_cast<std::size_t>(p.attribute)] != -1 ||
            key_taken[static_cast<std::size_t>(p.key)]) {
            continue;
        }
        chosen[static_cast<std::size_t>(p.attribute)] = p.key;
        key_taken[static_cast<std::size_t>(p.key)] = 1;
        ++assigned;
    }
    return chosen;
}

std::vector<int> vision_layer_map(int n_vis_layers, int n_txt_layers) {
    if (n_vis_layers <= 0 || n_txt_layers <= 0) {
        throw config_error("vision_layer_map: layer counts must be positive");
    }
    std::vector<int> map(static_cast<std::size_t>(n_txt_layers));
    for (int j = 0; j < n_txt_layers; ++j) {
        map[static_cast<std::size_t>(j)] = (j * n_vis_layers) / n_txt_layers;
    }
    return map;
}

RetrievalPlan build_plan(const LayerFeatureTrace& trace, const PromptPool& pool, int k, int iters,
                         const std::vector<int>& layer_map, std::uint64_t seed) {
    RetrievalPlan plan;
    plan.per_layer.reserve(layer_map.size());
    const std::uint64_t base = mix_seed(seed, seed_stream::clustering);
    for (std::size_t text_layer = 0; text_layer < layer_map.size(); ++text_layer) {
        const int vision_layer = layer_map[text_layer];
        if (vision_layer < 0 || vision_layer >= static_cast<int>(trace.per_layer.size())) {
            throw contract_error("build_plan: trace has no vision layer " +
                                 std::to_string(vision_layer));
        }
        AttributeSet attrs = cluster_attributes(trace.per_layer[static_cast<std::size_t>(vision_layer)],
                                                k, iters, mix_seed(base, text_layer));
        LayerRetrieval entry;
        entry.scores = retrieval_scores(attrs, pool);
        entry.selected = select_unique(entry.scores);
        entry.centroids = attrs.centroids;
        plan.per_layer.push_back(std::move(entry));
    }
    return plan;
}

Tensor match_loss(Tape& tape, const RetrievalPlan& plan, const PromptPool& pool) {
    Tensor total = Tensor::scalar(0.0);
    for (const LayerRetrieval& layer : plan.per_layer) {
        for (std::size_t i = 0; i < layer.selected.size(); ++i) {
            const int key_id = layer.selected[static_cast<std::size_t>(i)];
            Tensor centroid = slice_rows(tape, layer.centroids, static_cast<int>(i),
                                         static_cast<int>(i) + 1);
            Tensor key_row = slice_rows(tape, pool.keys, key_id, key_id + 1);
            Tensor cos = reshape(tape, cosine_rows(tape, centroid, key_row), {1});
            total = add(tape, total, cos);
        }
    }
    return total;
}

Tensor diversity_loss(Tape& tape, const PromptPool& pool) {
    const int m = pool.size;
    if (m < 2) return Tensor::scalar(0.0);
    const int flat = pool.prompt_len * pool.prompts.cols();
    Tensor flattened = reshape(tape, pool.prompts, {m, flat});
    Tensor cos = cosine_rows(tape, flattened, flattened);
    Tensor total = Tensor::scalar(0.0);
    for (int i = 0; i < m; ++i) {
        for (int j = i + 1; j < m; ++j) {
            total = add(tape, total, pick(tape, cos, i * m + j));
        }
    }
    return scale(tape, total, 1.0 / (static_cast<double>(m) * (m - 1)));
}

}  // namespace attriprompt
