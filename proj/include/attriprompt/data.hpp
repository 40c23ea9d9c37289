#pragma once

#include <array>
#include <string>
#include <vector>

#include "attriprompt/encoder.hpp"
#include "attriprompt/tensor.hpp"

namespace attriprompt {

// Disjoint base/novel class lists plus the sample indices each phase uses.
// Training sees only base classes; the base test set holds the remaining
// base samples and the novel test set every novel sample.
struct FewShotSplit {
    std::vector<int> base_classes;
    std::vector<int> novel_classes;
    int shots = 0;
    std::vector<int> train_indices;
    std::vector<int> base_test_indices;
    std::vector<int> novel_test_indices;
};

// In-memory dataset: attribute-composition classes over (color, shape,
// texture) factors, with float32 pixel buffers.
struct Dataset {
    int image_size = 0;
    int channels = 0;
    std::array<int, 3> cardinalities = {0, 0, 0};  // colors, shapes, textures
    int shots = 0;
    std::vector<std::string> class_names;
    std::vector<std::array<int, 3>> class_factors;
    std::vector<char> base_flags;  // 1 = base class, 0 = novel
    std::vector<int> labels;       // per sample, global class index
    std::vector<std::vector<float>> images;

    int class_count() const { return static_cast<int>(class_names.size()); }
    int sample_count() const { return static_cast<int>(labels.size()); }

    Vocabulary vocabulary() const;
    Tensor image_tensor(int sample_index) const;

    // Derives the split: per base class, the first `shots` samples train.
    FewShotSplit split() const;

    // Tokenization restricted to the given global class indices, in order.
    ClassTokenization tokenize_subset(const std::vector<int>& class_indices) const;

    void validate() const;
};

}  // namespace attriprompt
