#include "attriprompt/model.hpp"

#include "attriprompt/sha256.hpp"

namespace attriprompt {

void ScheduleConfig::validate() const {
    if (epochs < 0) throw config_error("epochs must be non-negative");
    if (batch_size <= 0) throw config_error("batch_size must be positive");
    if (!(base_lr > 0.0)) throw config_error("lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw config_error("momentum must lie in [0, 1)");
}

void TaskConfig::validate() const {
    model.validate();
    if (pool_size <= 0) throw config_error("pool_size must be positive");
    if (prompt_len <= 0) throw config_error("prompt_len must be positive");
    if (clusters <= 0) throw config_error("clusters must be positive");
    if (clusters > pool_size) {
        throw config_error("clusters (" + std::to_string(clusters) +
                           ") must not exceed pool_size (" + std::to_string(pool_size) +
                           "), unique selection would be unsatisfiable");
    }
    if (clusters > model.n_patches()) {
        throw config_error("clusters exceed the number of patch tokens");
    }
    if (kmeans_iters <= 0) throw config_error("kmeans_iters must be positive");
    weights.validate();
    schedule.validate();
}

Model build_model(const TaskConfig& config) {
    config.validate();
    Model model;
    model.config = config;
    model.config.model.seed = config.seed;
    model.config.schedule.seed = config.seed;
    model.backbone = init_frozen_backbone(model.config.model);
    model.pool = init_prompt_pool(config.pool_size, config.prompt_len, config.model.d_txt,
                                  config.model.d_vis, config.seed);
    model.vision_head = init_head(config.model.d_embed);
    model.text_head = init_head(config.model.d_embed);
    model.layer_map = vision_layer_map(config.model.n_vis_layers, config.model.n_txt_layers);
    return model;
}

TrainableSet collect_trainables(const Model& model) {
    TrainableSet set;
    set.params.emplace_back("pool.prompts", model.pool.prompts);
    set.params.emplace_back("pool.keys", model.pool.keys);
    set.params.emplace_back("vision_head.alpha", model.vision_head.alpha);
    set.params.emplace_back("vision_head.beta", model.vision_head.beta);
    set.params.emplace_back("text_head.alpha", model.text_head.alpha);
    set.params.emplace_back("text_head.beta", model.text_head.beta);
    for (const auto& [name, tensor] : set.params) {
        if (!tensor.requires_grad()) {
            throw contract_error("trainable " + name + " lost its requires_grad flag");
        }
    }
    // the set is closed: nothing else in the model may require gradients
    model.backbone.for_each_tensor([](const std::string& name, const Tensor& t) {
        if (t.requires_grad()) {
            throw contract_error("backbone tensor " + name + " unexpectedly requires gradients");
        }
    });
    return set;
}

const Tensor& plain_text_features(const Model& model, const ClassTokenization& tokenization) {
    const std::string key = tokenization.cache_key();
    auto it = model.plain_feature_cache.find(key);
    if (it == model.plain_feature_cache.end()) {
        Tensor features = text_forward_plain(model.backbone, model.config.model, tokenization);
        it = model.plain_feature_cache.emplace(key, std::move(features)).first;
    }
    return it->second;
}

RetrievalPlan plan_for_trace(const Model& model, const LayerFeatureTrace& trace) {
    return build_plan(trace, model.pool, model.config.clusters, model.config.kmeans_iters,
                      model.layer_map, model.config.seed);
}

std::string backbone_checksum(const Model& model) {
    Sha256 hash;
    model.backbone.for_each_tensor([&hash](const std::string& name, const Tensor& t) {
        hash.update(name.data(), name.size());
        hash.update(t.values().data(), t.values().size() * sizeof(double));
    });
    return hash.hex_digest();
}

}  // namespace attriprompt
