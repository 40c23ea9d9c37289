#include "attriprompt/gradcheck.hpp"

#include <random>

#include "attriprompt/seeds.hpp"
#include "attriprompt/training.hpp"

namespace attriprompt {

GradCheckOutcome run_gradcheck(TaskConfig config, double step) {
    Vocabulary vocab;
    vocab.n_colors = 3;
    vocab.n_shapes = 1;
    vocab.n_textures = 1;
    config.model.vocab_size = vocab.size();
    config.model.max_text_len = Vocabulary::sequence_length;
    Model model = build_model(config);

    ClassTokenization classes = tokenize_classes(
        vocab, {"first", "second", "third"},
        {std::array<int, 3>{0, 0, 0}, std::array<int, 3>{1, 0, 0}, std::array<int, 3>{2, 0, 0}});

    std::mt19937_64 rng(mix_seed(config.seed, 50));
    std::normal_distribution<double> pixel(0.5, 0.25);
    Tensor image({config.model.channels, config.model.image_size, config.model.image_size}, 0.0);
    for (double& v : image.values()) v = pixel(rng);

    const std::vector<Tensor> images = {image};
    const std::vector<int> labels = {0};
    Objective objective = [&](bool with_grad) {
        Tape tape;
        ForwardLoss loss = compute_batch_loss(tape, model, images, labels, classes);
        if (with_grad) tape.backward(loss.total);
        return loss.breakdown.total;
    };

    GradCheckOutcome outcome;
    TrainableSet trainables = collect_trainables(model);
    for (const auto& param : trainables.params) {
        FiniteDiffReport report = finite_diff_check(objective, {param}, step);
        outcome.max_rel_err = std::max(outcome.max_rel_err, report.max_rel_err);
        outcome.per_param.emplace_back(param.first, report);
    }
    return outcome;
}

}  // namespace attriprompt
