#include "attriprompt/data.hpp"

#include <algorithm>

namespace attriprompt {

Vocabulary Dataset::vocabulary() const {
    Vocabulary v;
    v.n_colors = cardinalities[0];
    v.n_shapes = cardinalities[1];
    v.n_textures = cardinalities[2];
    return v;
}

Tensor Dataset::image_tensor(int sample_index) const {
    if (sample_index < 0 || sample_index >= sample_count()) {
        throw contract_error("image_tensor: sample " + std::to_string(sample_index) +
                             " out of range");
    }
    const auto& pixels = images[static_cast<std::size_t>(sample_index)];
    std::vector<double> values(pixels.begin(), pixels.end());
    return Tensor({channels, image_size, image_size}, std::move(values));
}

FewShotSplit Dataset::split() const {
    FewShotSplit s;
    s.shots = shots;
    for (int c = 0; c < class_count(); ++c) {
        (base_flags[static_cast<std::size_t>(c)] ? s.base_classes : s.novel_classes).push_back(c);
    }
    std::vector<int> seen(static_cast<std::size_t>(class_count()), 0);
    for (int i = 0; i < sample_count(); ++i) {
        const int c = labels[static_cast<std::size_t>(i)];
        if (base_flags[static_cast<std::size_t>(c)]) {
            if (seen[static_cast<std::size_t>(c)] < shots) {
                s.train_indices.push_back(i);
            } else {
                s.base_test_indices.push_back(i);
            }
            seen[static_cast<std::size_t>(c)]++;
        } else {
            s.novel_test_indices.push_back(i);
        }
    }
    return s;
}

ClassTokenization Dataset::tokenize_subset(const std::vector<int>& class_indices) const {
    std::vector<std::string> names;
    std::vector<std::array<int, 3>> factors;
    names.reserve(class_indices.size());
    factors.reserve(class_indices.size());
    for (int c : class_indices) {
        if (c < 0 || c >= class_count()) {
            throw contract_error("tokenize_subset: class " + std::to_string(c) + " out of range");
        }
        names.push_back(class_names[static_cast<std::size_t>(c)]);
        factors.push_back(class_factors[static_cast<std::size_t>(c)]);
    }
    return tokenize_classes(vocabulary(), names, factors);
}

void Dataset::validate() const {
    if (image_size <= 0 || channels <= 0) throw format_error("dataset: bad image dimensions");
    if (class_names.size() != class_factors.size() || class_names.size() != base_flags.size()) {
        throw format_error("dataset: class table sizes disagree");
    }
    if (labels.size() != images.size()) throw format_error("dataset: sample table sizes disagree");
    const std::size_t pixel_count = static_cast<std::size_t>(channels) * image_size * image_size;
    for (const auto& img : images) {
        if (img.size() != pixel_count) throw format_error("dataset: pixel buffer size mismatch");
    }
    for (int label : labels) {
        if (label < 0 || label >= class_count()) throw format_error("dataset: label out of range");
    }
    for (const auto& f : class_factors) {
        for (int axis = 0; axis < 3; ++axis) {
            if (f[static_cast<std::size_t>(axis)] < 0 ||
                f[static_cast<std::size_t>(axis)] >= cardinalities[static_cast<std::size_t>(axis)]) {
                throw format_error("dataset: class factor out of range");
            }
        }
    }
}

}  // namespace attriprompt
