#include "attriprompt/encoder.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "attriprompt/retrieval.hpp"
#include "attriprompt/seeds.hpp"

namespace attriprompt {

void ModelConfig::validate() const {
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
        throw config_error("image_size " + std::to_string(image_size) +
                           " must be a positive multiple of patch_size " +
                           std::to_string(patch_size));
    }
    if (channels <= 0) throw config_error("channels must be positive");
    if (d_vis <= 0 || d_txt <= 0 || d_embed <= 0) {
        throw config_error("encoder widths must be positive");
    }
    if (n_heads <= 0 || d_vis % n_heads != 0 || d_txt % n_heads != 0) {
        throw config_error("d_vis and d_txt must be divisible by n_heads");
    }
    if (n_vis_layers <= 0 || n_txt_layers <= 0) {
        throw config_error("layer counts must be positive");
    }
    if (!(temperature > 0.0)) throw config_error("temperature must be positive");
}

std::vector<int> Vocabulary::class_sequence(int color, int shape, int texture) const {
    if (color < 0 || color >= n_colors || shape < 0 || shape >= n_shapes || texture < 0 ||
        texture >= n_textures) {
        throw contract_error("class factors out of range for the vocabulary");
    }
    // "a photo of" template tokens are ids 2, 3, 4.
    return {sos_id, 2, 3, 4, color_token(color), shape_token(shape), texture_token(texture),
            eos_id};
}

std::string ClassTokenization::cache_key() const {
    std::ostringstream os;
    for (const auto& seq : token_ids) {
        for (int id : seq) os << id << ",";
        os << ";";
    }
    return os.str();
}

ClassTokenization tokenize_classes(const Vocabulary& vocab, const std::vector<std::string>& names,
                                   const std::vector<std::array<int, 3>>& factors) {
    if (names.size() != factors.size()) {
        throw contract_error("tokenize_classes: names and factors disagree in length");
    }
    ClassTokenization out;
    out.class_names = names;
    out.token_ids.reserve(names.size());
    for (const auto& f : factors) {
        out.token_ids.push_back(vocab.class_sequence(f[0], f[1], f[2]));
    }
    return out;
}

namespace {

template <typename Self, typename Visit>
void visit_backbone(Self& b, Visit&& visit) {
    visit("vision.patch_weight", b.patch_weight);
    visit("vision.patch_bias", b.patch_bias);
    visit("vision.cls_embed", b.cls_embed);
    visit("vision.pos", b.pos_vis);
    for (std::size_t i = 0; i < b.vis_blocks.size(); ++i) {
        auto& blk = b.vis_blocks[i];
        const std::string p = "vision.block" + std::to_string(i) + ".";
        visit(p + "ln1_gamma", blk.ln1_gamma);
        visit(p + "ln1_beta", blk.ln1_beta);
        visit(p + "wq", blk.wq);
        visit(p + "bq", blk.bq);
        visit(p + "wk", blk.wk);
        visit(p + "bk", blk.bk);
        visit(p + "wv", blk.wv);
        visit(p + "bv", blk.bv);
        visit(p + "wo", blk.wo);
        visit(p + "bo", blk.bo);
        visit(p + "ln2_gamma", blk.ln2_gamma);
        visit(p + "ln2_beta", blk.ln2_beta);
        visit(p + "w_mlp_in", blk.w_mlp_in);
        visit(p + "b_mlp_in", blk.b_mlp_in);
        visit(p + "w_mlp_out", blk.w_mlp_out);
        visit(p + "b_mlp_out", blk.b_mlp_out);
    }
    visit("vision.ln_gamma", b.vis_ln_gamma);
    visit("vision.ln_beta", b.vis_ln_beta);
    visit("vision.proj", b.vis_proj);
    visit("text.token_embed", b.token_embed);
    visit("text.pos", b.pos_txt);
    for (std::size_t i = 0; i < b.txt_blocks.size(); ++i) {
        auto& blk = b.txt_blocks[i];
        const std::string p = "text.block" + std::to_string(i) + ".";
        visit(p + "ln1_gamma", blk.ln1_gamma);
        visit(p + "ln1_beta", blk.ln1_beta);
        visit(p + "wq", blk.wq);
        visit(p + "bq", blk.bq);
        visit(p + "wk", blk.wk);
        visit(p + "bk", blk.bk);
        visit(p + "wv", blk.wv);
        visit(p + "bv", blk.bv);
        visit(p + "wo", blk.wo);
        visit(p + "bo", blk.bo);
        visit(p + "ln2_gamma", blk.ln2_gamma);
        visit(p + "ln2_beta", blk.ln2_beta);
        visit(p + "w_mlp_in", blk.w_mlp_in);
        visit(p + "b_mlp_in", blk.b_mlp_in);
        visit(p + "w_mlp_out", blk.w_mlp_out);
        visit(p + "b_mlp_out", blk.b_mlp_out);
    }
    visit("text.ln_gamma", b.txt_ln_gamma);
    visit("text.ln_beta", b.txt_ln_beta);
    visit("text.proj", b.txt_proj);
}

Tensor draw_normal(std::mt19937_64& rng, std::vector<int> shape, double std_dev) {
    std::normal_distribution<double> dist(0.0, std_dev);
    Tensor t(std::move(shape), 0.0);
    for (double& v : t.values()) v = dist(rng);
    return t;
}

// Fan-in-scaled weight matrix. A frozen random encoder needs this much
// mixing strength to propagate token identity at all; 0.02-scale weights
// leave the class features indistinguishable at desk scale.
Tensor draw_weight(std::mt19937_64& rng, int fan_in, int fan_out) {
    return draw_normal(rng, {fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

TransformerBlock make_block(std::mt19937_64& rng, int d) {
    TransformerBlock b;
    b.ln1_gamma = Tensor({d}, 1.0);
    b.ln1_beta = Tensor({d}, 0.0);
    b.wq = draw_weight(rng, d, d);
    b.bq = draw_normal(rng, {d}, 0.02);
    b.wk = draw_weight(rng, d, d);
    b.bk = draw_normal(rng, {d}, 0.02);
    b.wv = draw_weight(rng, d, d);
    b.bv = draw_normal(rng, {d}, 0.02);
    b.wo = draw_weight(rng, d, d);
    b.bo = draw_normal(rng, {d}, 0.02);
    b.ln2_gamma = Tensor({d}, 1.0);
    b.ln2_beta = Tensor({d}, 0.0);
    b.w_mlp_in = draw_weight(rng, d, 4 * d);
    b.b_mlp_in = draw_normal(rng, {4 * d}, 0.02);
    b.w_mlp_out = draw_weight(rng, 4 * d, d);
    b.b_mlp_out = draw_normal(rng, {d}, 0.02);
    return b;
}

}  // namespace

void Backbone::for_each_tensor(const std::function<void(const std::string&, Tensor&)>& visit) {
    visit_backbone(*this, visit);
}

void Backbone::for_each_tensor(
    const std::function<void(const std::string&, const Tensor&)>& visit) const {
    visit_backbone(*this, visit);
}

Backbone init_frozen_backbone(const ModelConfig& config) {
    config.validate();
    if (config.vocab_size <= 0 || config.max_text_len <= 0) {
        throw config_error("vocab_size and max_text_len must be set before building a backbone");
    }
    std::mt19937_64 rng(mix_seed(config.seed, seed_stream::backbone));
    Backbone b;
    b.patch_weight = draw_weight(rng, config.patch_dim(), config.d_vis);
    b.patch_bias = draw_normal(rng, {config.d_vis}, 0.02);
    b.cls_embed = draw_normal(rng, {config.d_vis}, 1.0);
    b.pos_vis = draw_normal(rng, {config.n_patches() + 1, config.d_vis}, 0.2);
    for (int i = 0; i < config.n_vis_layers; ++i) {
        b.vis_blocks.push_back(make_block(rng, config.d_vis));
    }
    b.vis_ln_gamma = Tensor({config.d_vis}, 1.0);
    b.vis_ln_beta = Tensor({config.d_vis}, 0.0);
    b.vis_proj = draw_weight(rng, config.d_vis, config.d_embed);
    b.token_embed = draw_normal(rng, {config.vocab_size, config.d_txt}, 1.0);
    b.pos_txt = draw_normal(rng, {config.max_text_len, config.d_txt}, 0.2);
    for (int i = 0; i < config.n_txt_layers; ++i) {
        b.txt_blocks.push_back(make_block(rng, config.d_txt));
    }
    b.txt_ln_gamma = Tensor({config.d_txt}, 1.0);
    b.txt_ln_beta = Tensor({config.d_txt}, 0.0);
    b.txt_proj = draw_weight(rng, config.d_txt, config.d_embed);
    // weights stay frozen: requires_grad is false on every tensor by construction
    return b;
}

Tensor patchify(const Tensor& image, const ModelConfig& config) {
    const std::vector<int> expect = {config.channels, config.image_size, config.image_size};
    if (image.shape() != expect) {
        throw shape_error("patchify: image shape " + image.shape_string() + " does not match " +
                          shape_to_string(expect));
    }
    const int ps = config.patch_size;
    const int side = config.patches_per_side();
    const int n = config.n_patches();
    const int pd = config.patch_dim();
    Tensor out({n, pd}, 0.0);
    const double* img = image.values().data();
    const int hw = config.image_size * config.image_size;
    for (int py = 0; py < side; ++py) {
        for (int px = 0; px < side; ++px) {
            double* row = out.values().data() + static_cast<std::size_t>(py * side + px) * pd;
            int idx = 0;
            for (int c = 0; c < config.channels; ++c) {
                for (int y = 0; y < ps; ++y) {
                    for (int x = 0; x < ps; ++x) {
                        row[idx++] =
                            img[c * hw + (py * ps + y) * config.image_size + (px * ps + x)];
                    }
                }
            }
        }
    }
    return out;
}

Tensor transformer_block_forward(Tape& tape, const Tensor& tokens, const TransformerBlock& block,
                                 int n_heads) {
    const int d = tokens.cols();
    const int dh = d / n_heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor h = layer_norm(tape, tokens, block.ln1_gamma, block.ln1_beta, k_layer_norm_eps);
    Tensor q = add_row_broadcast(tape, matmul(tape, h, block.wq), block.bq);
    Tensor k = add_row_broadcast(tape, matmul(tape, h, block.wk), block.bk);
    Tensor v = add_row_broadcast(tape, matmul(tape, h, block.wv), block.bv);

    std::vector<Tensor> head_outputs;
    head_outputs.reserve(static_cast<std::size_t>(n_heads));
    for (int head = 0; head < n_heads; ++head) {
        const int c0 = head * dh, c1 = (head + 1) * dh;
        Tensor qh = slice_cols(tape, q, c0, c1);
        Tensor kh = slice_cols(tape, k, c0, c1);
        Tensor vh = slice_cols(tape, v, c0, c1);
        Tensor att = softmax_rows(tape, scale(tape, matmul(tape, qh, transpose(tape, kh)),
                                              att_scale));
        head_outputs.push_back(matmul(tape, att, vh));
    }
    Tensor attn = add_row_broadcast(
        tape, matmul(tape, concat_cols(tape, head_outputs), block.wo), block.bo);
    Tensor x = add(tape, tokens, attn);

    Tensor m = layer_norm(tape, x, block.ln2_gamma, block.ln2_beta, k_layer_norm_eps);
    Tensor hidden = gelu(tape, add_row_broadcast(tape, matmul(tape, m, block.w_mlp_in),
                                                 block.b_mlp_in));
    Tensor mlp = add_row_broadcast(tape, matmul(tape, hidden, block.w_mlp_out), block.b_mlp_out);
    return add(tape, x, mlp);
}

VisionOutput vision_forward(const Backbone& backbone, const ModelConfig& config,
                            const Tensor& image) {
    // The whole pass involves only frozen tensors, so nothing records on the
    // scratch tape and every output is detached.
    Tape scratch;
    Tensor patches = patchify(image, config);
    Tensor patch_tokens =
        add_row_broadcast(scratch, matmul(scratch, patches, backbone.patch_weight),
                          backbone.patch_bias);
    Tensor cls_row = reshape(scratch, backbone.cls_embed, {1, config.d_vis});
    Tensor tokens = concat_rows(scratch, {cls_row, patch_tokens});
    tokens = add(scratch, tokens, backbone.pos_vis);

    VisionOutput out;
    out.trace.per_layer.reserve(static_cast<std::size_t>(config.n_vis_layers));
    for (const TransformerBlock& block : backbone.vis_blocks) {
        tokens = transformer_block_forward(scratch, tokens, block, config.n_heads);
        out.trace.per_layer.push_back(tokens);
    }
    Tensor cls_out = slice_rows(scratch, tokens, 0, 1);
    Tensor pooled = layer_norm(scratch, cls_out, backbone.vis_ln_gamma, backbone.vis_ln_beta,
                               k_layer_norm_eps);
    out.feature = reshape(scratch, matmul(scratch, pooled, backbone.vis_proj), {config.d_embed});
    return out;
}

namespace {

Tensor text_input_tokens(Tape& tape, const Backbone& backbone, const std::vector<int>& ids) {
    Tensor embedded = embedding_rows(tape, backbone.token_embed, ids);
    return add(tape, embedded, backbone.pos_txt);
}

Tensor text_pool_and_project(Tape& tape, const Backbone& backbone, const Tensor& tokens) {
    Tensor eos_row = slice_rows(tape, tokens, tokens.rows() - 1, tokens.rows());
    Tensor pooled =
        layer_norm(tape, eos_row, backbone.txt_ln_gamma, backbone.txt_ln_beta, k_layer_norm_eps);
    return matmul(tape, pooled, backbone.txt_proj);
}

}  // namespace

Tensor text_forward_plain(const Backbone& backbone, const ModelConfig& config,
                          const ClassTokenization& tokenization) {
    if (tokenization.class_count() == 0) {
        throw contract_error("text_forward_plain: empty class list");
    }
    Tape scratch;
    std::vector<Tensor> rows;
    rows.reserve(tokenization.token_ids.size());
    for (const auto& ids : tokenization.token_ids) {
        if (static_cast<int>(ids.size()) != config.max_text_len) {
            throw contract_error("text_forward_plain: token sequence length mismatch");
        }
        Tensor tokens = text_input_tokens(scratch, backbone, ids);
        for (const TransformerBlock& block : backbone.txt_blocks) {
            tokens = transformer_block_forward(scratch, tokens, block, config.n_heads);
        }
        rows.push_back(text_pool_and_project(scratch, backbone, tokens));
    }
    return concat_rows(scratch, rows);
}

Tensor text_forward_prompted(Tape& tape, const Backbone& backbone, const ModelConfig& config,
                             const ClassTokenization& tokenization, const RetrievalPlan& plan,
                             const PromptPool& pool) {
    if (tokenization.class_count() == 0) {
        throw contract_error("text_forward_prompted: empty class list");
    }
    if (static_cast<int>(plan.per_layer.size()) != config.n_txt_layers) {
        throw contract_error("text_forward_prompted: plan covers " +
                             std::to_string(plan.per_layer.size()) + " layers, encoder has " +
                             std::to_string(config.n_txt_layers));
    }
    const int seq = config.max_text_len;
    // Prompt blocks are shared across classes within one forward pass.
    std::vector<Tensor> prompt_blocks(plan.per_layer.size());
    for (std::size_t l = 0; l < plan.per_layer.size(); ++l) {
        const auto& selected = plan.per_layer[l].selected;
        if (selected.empty()) continue;
        std::vector<Tensor> parts;
        parts.reserve(selected.size());
        for (int prompt_id : selected) {
            parts.push_back(slice_rows(tape, pool.prompts, prompt_id * pool.prompt_len,
                                       (prompt_id + 1) * pool.prompt_len));
        }
        prompt_blocks[l] = concat_rows(tape, parts);
    }

    std::vector<Tensor> rows;
    rows.reserve(tokenization.token_ids.size());
    for (const auto& ids : tokenization.token_ids) {
        if (static_cast<int>(ids.size()) != seq) {
            throw contract_error("text_forward_prompted: token sequence length mismatch");
        }
        Tensor fixed = text_input_tokens(tape, backbone, ids);
        for (int layer = 0; layer < config.n_txt_layers; ++layer) {
            const Tensor& block_prompts = prompt_blocks[static_cast<std::size_t>(layer)];
            if (block_prompts.defined()) {
                Tensor joined = concat_rows(tape, {block_prompts, fixed});
                Tensor out = transformer_block_forward(tape, joined, backbone.txt_blocks[layer],
                                                       config.n_heads);
                // discard prompt positions, keep the fixed tokens
                fixed = slice_rows(tape, out, block_prompts.rows(), block_prompts.rows() + seq);
            } else {
                fixed = transformer_block_forward(tape, fixed, backbone.txt_blocks[layer],
                                                  config.n_heads);
            }
        }
        rows.push_back(text_pool_and_project(tape, backbone, fixed));
    }
    return concat_rows(tape, rows);
}

Tensor clip_logits(Tape& tape, const Tensor& image_feature, const Tensor& class_features,
                   double tau) {
    if (!(tau > 0.0)) throw contract_error("clip_logits: tau must be positive");
    const int d = class_features.cols();
    Tensor f = image_feature.rank() == 1 ? reshape(tape, image_feature, {1, d}) : image_feature;
    Tensor cos = cosine_rows(tape, class_features, f);  // [C x 1]
    return scale(tape, reshape(tape, cos, {class_features.rows()}), 1.0 / tau);
}

std::vector<double> softmax_values(const std::vector<double>& logits) {
    std::vector<double> out(logits.size());
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double denom = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        denom += out[i];
    }
    for (double& v : out) v /= denom;
    return out;
}

}  // namespace attriprompt
