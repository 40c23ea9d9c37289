#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "attriprompt/encoder.hpp"
#include "attriprompt/heads.hpp"
#include "attriprompt/objectives.hpp"
#include "attriprompt/retrieval.hpp"

namespace attriprompt {

// Schedule of one training run.
struct ScheduleConfig {
    int epochs = 15;
    int steps_per_epoch = 0;  // derived from the split and batch size when 0
    int batch_size = 4;
    double base_lr = 0.0035;
    double momentum = 0.9;
    std::uint64_t seed = 1;

    void validate() const;
};

// Everything one run needs; parsed from a config file and echoed into
// checkpoints.
struct TaskConfig {
    ModelConfig model;
    int pool_size = 4;       // M
    int prompt_len = 2;      // tokens per prompt
    int clusters = 2;        // attributes per layer
    int kmeans_iters = 50;
    LossWeights weights;
    ScheduleConfig schedule;
    std::uint64_t seed = 1;

    void validate() const;
};

// Frozen dual encoder plus every trainable component.
struct Model {
    TaskConfig config;
    Backbone backbone;
    PromptPool pool;
    ChannelAffineHead vision_head;
    ChannelAffineHead text_head;
    std::vector<int> layer_map;  // text layer -> vision layer

    mutable std::map<std::string, Tensor> plain_feature_cache;

    Model() = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;
};

// Builds the frozen backbone, prompt pool and identity heads from the run
// seed in config.
Model build_model(const TaskConfig& config);

// Exactly the tensors training may update, with stable names. Throws
// contract_error if any other tensor in the model requires a gradient.
struct TrainableSet {
    std::vector<std::pair<std::string, Tensor>> params;
};

TrainableSet collect_trainables(const Model& model);

// Non-prompted text features for a class set; computed once and cached, the
// result carries no gradient.
const Tensor& plain_text_features(const Model& model, const ClassTokenization& tokenization);

// Retrieval plan for one image trace using the model's clustering settings.
RetrievalPlan plan_for_trace(const Model& model, const LayerFeatureTrace& trace);

// SHA-256 over every backbone buffer in a fixed order.
std::string backbone_checksum(const Model& model);

}  // namespace attriprompt
