#include "attriprompt/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "attriprompt/seeds.hpp"

namespace attriprompt {

namespace {

constexpr double k_pi = 3.14159265358979323846;

std::vector<double> affine_values(const std::vector<double>& feature, const Tensor& alpha,
                                  const Tensor& beta, int d) {
    const int rows = static_cast<int>(feature.size()) / d;
    std::vector<double> out(feature.size());
    for (int r = 0; r < rows; ++r) {
        for (int j = 0; j < d; ++j) {
            out[static_cast<std::size_t>(r) * d + j] =
                alpha.values()[static_cast<std::size_t>(j)] *
                    feature[static_cast<std::size_t>(r) * d + j] +
                beta.values()[static_cast<std::size_t>(j)];
        }
    }
    return out;
}

double cosine_value(const double* a, const double* b, int d, const char* what) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (int i = 0; i < d; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) {
        throw degenerate_input_error(std::string(what) + ": zero-norm feature");
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> class_probabilities(const std::vector<double>& image_feature,
                                        const std::vector<double>& class_features, int d,
                                        double tau, const char* what) {
    const int n_classes = static_cast<int>(class_features.size()) / d;
    std::vector<double> logits(static_cast<std::size_t>(n_classes));
    for (int c = 0; c < n_classes; ++c) {
        logits[static_cast<std::size_t>(c)] =
            cosine_value(class_features.data() + static_cast<std::size_t>(c) * d,
                         image_feature.data(), d, what) /
            tau;
    }
    return softmax_values(logits);
}

}  // namespace

double cosine_lr(int step, int total_steps, double base_lr) {
    if (total_steps <= 0) throw contract_error("cosine_lr: total_steps must be positive");
    if (step < 0 || step > total_steps) {
        throw contract_error("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                             std::to_string(total_steps) + "]");
    }
    return base_lr * 0.5 * (1.0 + std::cos(k_pi * static_cast<double>(step) / total_steps));
}

SgdState init_sgd_state(const TrainableSet& trainables) {
    SgdState state;
    state.velocity.reserve(trainables.params.size());
    for (const auto& [name, tensor] : trainables.params) {
        state.velocity.emplace_back(tensor.size(), 0.0);
    }
    return state;
}

void sgd_step(TrainableSet& trainables, double lr, double momentum, SgdState& state) {
    if (state.velocity.size() != trainables.params.size()) {
        throw contract_error("sgd_step: velocity state does not match the trainable set");
    }
    for (std::size_t p = 0; p < trainables.params.size(); ++p) {
        Tensor& tensor = trainables.params[p].second;
        if (!tensor.grad_present()) {
            throw contract_error("sgd_step: trainable " + trainables.params[p].first +
                                 " has no gradient");
        }
        auto& v = state.velocity[p];
        auto& g = tensor.grad();
        auto& values = tensor.values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            v[i] = momentum * v[i] + g[i];
            values[i] -= lr * v[i];
        }
        tensor.zero_grad();
    }
    state.step_count++;
}

SampleLossTerms sample_losses(Tape& tape, const Model& model, const Tensor& image, int label,
                              const ClassTokenization& class_set, const Tensor& plain_features) {
    const double tau = model.config.model.temperature;
    VisionOutput vision = vision_forward(model.backbone, model.config.model, image);
    RetrievalPlan plan = plan_for_trace(model, vision.trace);
    Tensor prompted =
        text_forward_prompted(tape, model.backbone, model.config.model, class_set, plan, model.pool);

    SampleLossTerms terms;
    terms.ce = ce_loss(tape, vision.feature, prompted, label, tau);
    Tensor image_prime = transform(tape, vision.feature, model.vision_head);
    Tensor classes_prime = transform(tape, prompted, model.text_head);
    terms.align = align_loss(tape, image_prime, classes_prime, label, tau);
    terms.cc = consistency_loss(tape, prompted, plain_features);
    terms.match = match_loss(tape, plan, model.pool);
    return terms;
}

ForwardLoss compute_batch_loss(Tape& tape, const Model& model, const std::vector<Tensor>& images,
                               const std::vector<int>& labels,
                               const ClassTokenization& class_set) {
    if (images.empty() || images.size() != labels.size()) {
        throw contract_error("compute_batch_loss: empty or mismatched batch");
    }
    const Tensor& plain = plain_text_features(model, class_set);
    Tensor ce_sum = Tensor::scalar(0.0);
    Tensor align_sum = Tensor::scalar(0.0);
    Tensor cc_sum = Tensor::scalar(0.0);
    Tensor match_sum = Tensor::scalar(0.0);
    for (std::size_t i = 0; i < images.size(); ++i) {
        SampleLossTerms terms = sample_losses(tape, model, images[i], labels[i], class_set, plain);
        ce_sum = add(tape, ce_sum, terms.ce);
        align_sum = add(tape, align_sum, terms.align);
        cc_sum = add(tape, cc_sum, terms.cc);
        match_sum = add(tape, match_sum, terms.match);
    }
    const double inv_batch = 1.0 / static_cast<double>(images.size());
    Tensor ce_mean = scale(tape, ce_sum, inv_batch);
    Tensor align_mean = scale(tape, align_sum, inv_batch);
    Tensor cc_mean = scale(tape, cc_sum, inv_batch);
    Tensor match_mean = scale(tape, match_sum, inv_batch);
    Tensor div = diversity_loss(tape, model.pool);

    ForwardLoss out;
    out.total = combine_losses(tape, ce_mean, align_mean, cc_mean, div, match_mean,
                               model.config.weights);
    out.breakdown = total_loss(ce_mean.scalar_value(), align_mean.scalar_value(),
                               cc_mean.scalar_value(), div.scalar_value(),
                               match_mean.scalar_value(), model.config.weights);
    return out;
}

LossBreakdown train_step(Model& model, const std::vector<Tensor>& images,
                         const std::vector<int>& labels, const ClassTokenization& class_set,
                         double lr, TrainableSet& trainables, SgdState& state) {
    Tape tape;
    ForwardLoss loss = compute_batch_loss(tape, model, images, labels, class_set);
    tape.backward(loss.total);
    sgd_step(trainables, lr, model.config.schedule.momentum, state);
    return loss.breakdown;
}

std::vector<LossBreakdown> train_run(Model& model, const Dataset& dataset,
                                     const FewShotSplit& split, SgdState& state,
                                     std::ostream* log) {
    const ScheduleConfig& schedule = model.config.schedule;
    schedule.validate();
    if (split.train_indices.empty()) {
        throw contract_error("train_run: the split has no training samples");
    }
    const int n_train = static_cast<int>(split.train_indices.size());
    const int batch = std::min(schedule.batch_size, n_train);
    const int steps_per_epoch = schedule.steps_per_epoch > 0
                                    ? schedule.steps_per_epoch
                                    : (n_train + batch - 1) / batch;
    const int total_steps = schedule.epochs * steps_per_epoch;

    ClassTokenization class_set = dataset.tokenize_subset(split.base_classes);
    std::vector<int> label_position(static_cast<std::size_t>(dataset.class_count()), -1);
    for (std::size_t i = 0; i < split.base_classes.size(); ++i) {
        label_position[static_cast<std::size_t>(split.base_classes[i])] = static_cast<int>(i);
    }

    TrainableSet trainables = collect_trainables(model);
    if (state.velocity.empty()) state = init_sgd_state(trainables);

    std::mt19937_64 rng(mix_seed(model.config.seed, seed_stream::batch_order));
    std::vector<int> order = split.train_indices;
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t cursor = 0;

    std::vector<LossBreakdown> history;
    history.reserve(static_cast<std::size_t>(total_steps));
    for (int step = 0; step < total_steps; ++step) {
        if (cursor + static_cast<std::size_t>(batch) > order.size()) {
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        std::vector<Tensor> images;
        std::vector<int> labels;
        images.reserve(static_cast<std::size_t>(batch));
        labels.reserve(static_cast<std::size_t>(batch));
        for (int b = 0; b < batch; ++b) {
            const int sample = order[cursor++];
            images.push_back(dataset.image_tensor(sample));
            const int pos = label_position[static_cast<std::size_t>(
                dataset.labels[static_cast<std::size_t>(sample)])];
            if (pos < 0) throw contract_error("train_run: training sample from a novel class");
            labels.push_back(pos);
        }
        const double lr = cosine_lr(step, total_steps, schedule.base_lr);
        LossBreakdown breakdown = train_step(model, images, labels, class_set, lr, trainables,
                                             state);
        if (log) {
            *log << format_log_line(step, breakdown) << "\n";
        }
        history.push_back(breakdown);
    }
    return history;
}

std::string format_log_line(int step, const LossBreakdown& b) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%d %.9g %.9g %.9g %.9g %.9g %.9g", step, b.ce, b.align, b.cc,
                  b.div, b.match, b.total);
    return std::string(buf);
}

std::vector<double> predict_probabilities(const Model& model, const Tensor& image,
                                          const ClassTokenization& class_set, double lambda1) {
    const ModelConfig& cfg = model.config.model;
    VisionOutput vision = vision_forward(model.backbone, cfg, image);
    RetrievalPlan plan = plan_for_trace(model, vision.trace);
    Tape tape;
    Tensor prompted =
        text_forward_prompted(tape, model.backbone, cfg, class_set, plan, model.pool);

    const std::vector<double>& f = vision.feature.values();
    const std::vector<double>& g = prompted.values();
    std::vector<double> p_ce = class_probabilities(f, g, cfg.d_embed, cfg.temperature, "predict");

    std::vector<double> f_prime =
        affine_values(f, model.vision_head.alpha, model.vision_head.beta, cfg.d_embed);
    std::vector<double> g_prime =
        affine_values(g, model.text_head.alpha, model.text_head.beta, cfg.d_embed);
    std::vector<double> p_align =
        class_probabilities(f_prime, g_prime, cfg.d_embed, cfg.temperature, "predict");

    return fuse_predictions(p_ce, p_align, lambda1);
}

namespace {

double accuracy_over(const Model& model, const Dataset& dataset,
                     const std::vector<int>& class_list, const std::vector<int>& test_indices,
                     double lambda1) {
    ClassTokenization class_set = dataset.tokenize_subset(class_list);
    std::vector<int> position(static_cast<std::size_t>(dataset.class_count()), -1);
    for (std::size_t i = 0; i < class_list.size(); ++i) {
        position[static_cast<std::size_t>(class_list[i])] = static_cast<int>(i);
    }
    int correct = 0;
    for (int sample : test_indices) {
        const std::vector<double> probs =
            predict_probabilities(model, dataset.image_tensor(sample), class_set, lambda1);
        const int truth =
            position[static_cast<std::size_t>(dataset.labels[static_cast<std::size_t>(sample)])];
        if (predict_class(probs) == truth) ++correct;
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(test_indices.size());
}

}  // namespace

EvalResult evaluate(const Model& model, const Dataset& dataset, const FewShotSplit& split,
                    double lambda1) {
    if (split.base_test_indices.empty() || split.novel_test_indices.empty()) {
        throw contract_error("evaluate: empty test set");
    }
    EvalResult result;
    result.base_acc =
        accuracy_over(model, dataset, split.base_classes, split.base_test_indices, lambda1);
    result.novel_acc =
        accuracy_over(model, dataset, split.novel_classes, split.novel_test_indices, lambda1);
    result.hm = harmonic_mean(result.base_acc, result.novel_acc);
    return result;
}

double harmonic_mean(double a, double b) {
    if (a <= 0.0 || b <= 0.0) return 0.0;
    return 2.0 * a * b / (a + b);
}

}  // namespace attriprompt
