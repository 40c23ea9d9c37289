#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "attriprompt/data.hpp"

namespace attriprompt {

// Attribute-composition world: classes are (color, shape, texture) triples.
// Novel classes are unseen combinations of attribute values that all appear
// in at least one base class.
struct SyntheticSpec {
    int n_colors = 3;
    int n_shapes = 3;
    int n_textures = 2;
    int image_size = 32;
    double noise_std = 0.05;
    int samples_per_class = 40;
    int n_novel = 4;
    int shots = 8;
    std::uint64_t seed = 7;

    int class_count() const { return n_colors * n_shapes * n_textures; }
    void validate() const;
};

constexpr int k_shape_catalog_size = 8;
constexpr int k_texture_catalog_size = 6;

// RGB palette value of a color factor, components in [0, 1].
std::array<double, 3> palette_color(int color, int n_colors);

// Foreground mask of a shape centered at the (jittered) image center.
std::vector<unsigned char> shape_mask(int shape_id, int image_size, int dx, int dy);

// Multiplicative brightness factor of a texture at a pixel.
double texture_factor(int texture_id, int x, int y);

struct RenderedSample {
    std::vector<float> pixels;  // channels * size * size
    std::vector<unsigned char> mask;
};

// One deterministic render: jittered shape mask filled with the textured
// color, Gaussian pixel noise everywhere.
RenderedSample render_sample(const SyntheticSpec& spec, int color, int shape, int texture,
                             std::uint64_t sample_seed);

// Full dataset: every class, samples_per_class renders each, plus the
// base/novel partition honoring the recomposition invariant.
Dataset generate_synthetic(const SyntheticSpec& spec);

std::uint64_t synthetic_sample_seed(const SyntheticSpec& spec, int class_index, int sample_index);

}  // namespace attriprompt
