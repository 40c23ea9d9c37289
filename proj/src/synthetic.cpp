#include "attriprompt/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "attriprompt/seeds.hpp"

namespace attriprompt {

namespace {

const char* k_color_names[8] = {"red",    "green", "blue",   "yellow",
                                "purple", "cyan",  "orange", "magenta"};
const char* k_shape_names[k_shape_catalog_size] = {"disk", "square", "triangle", "ring",
                                                   "diamond", "cross", "hbar", "vbar"};
const char* k_texture_names[k_texture_catalog_size] = {"plain",    "stripes", "checker",
                                                       "dots",     "vstripes", "diagonal"};

std::string factor_name(const char* const* table, int table_size, const char* prefix, int value) {
    if (value < table_size) return table[value];
    return std::string(prefix) + std::to_string(value);
}

}  // namespace

void SyntheticSpec::validate() const {
    if (n_colors < 1 || n_shapes < 1 || n_textures < 1) {
        throw config_error("factor cardinalities must be positive");
    }
    const int rich = (n_colors >= 2) + (n_shapes >= 2) + (n_textures >= 2);
    if (rich < 2) {
        throw config_error("at least two factors need cardinality >= 2");
    }
    if (n_shapes > k_shape_catalog_size) {
        throw config_error("shape catalog holds " + std::to_string(k_shape_catalog_size) +
                           " entries");
    }
    if (n_textures > k_texture_catalog_size) {
        throw config_error("texture catalog holds " + std::to_string(k_texture_catalog_size) +
                           " entries");
    }
    if (image_size < 8) throw config_error("image_size must be at least 8");
    if (noise_std < 0.0) throw config_error("noise_std must be non-negative");
    if (samples_per_class < 1) throw config_error("samples_per_class must be positive");
    if (n_novel < 0 || n_novel >= class_count()) {
        throw config_error("n_novel must leave at least one base class");
    }
    if (shots < 0 || shots > samples_per_class) {
        throw config_error("shots must lie in [0, samples_per_class]");
    }
}

std::array<double, 3> palette_color(int color, int n_colors) {
    if (color < 0 || color >= n_colors) throw contract_error("palette_color: value out of range");
    // evenly spaced hues, fixed saturation/value
    const double h = 6.0 * static_cast<double>(color) / static_cast<double>(n_colors);
    const double s = 0.85, v = 0.95;
    const int sector = static_cast<int>(h) % 6;
    const double f = h - std::floor(h);
    const double p = v * (1.0 - s);
    const double q = v * (1.0 - s * f);
    const double t = v * (1.0 - s * (1.0 - f));
    switch (sector) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

std::vector<unsigned char> shape_mask(int shape_id, int image_size, int dx, int dy) {
    if (shape_id < 0 || shape_id >= k_shape_catalog_size) {
        throw contract_error("shape_mask: shape id out of range");
    }
    const double radius = 0.31 * image_size;
    const double cx = 0.5 * image_size + dx;
    const double cy = 0.5 * image_size + dy;
    std::vector<unsigned char> mask(static_cast<std::size_t>(image_size) * image_size, 0);
    for (int y = 0; y < image_size; ++y) {
        for (int x = 0; x < image_size; ++x) {
            const double u = (x + 0.5) - cx;
            const double v = (y + 0.5) - cy;
            const double r = std::sqrt(u * u + v * v);
            bool inside = false;
            switch (shape_id) {
                case 0: inside = r <= radius; break;
                case 1: inside = std::max(std::fabs(u), std::fabs(v)) <= 0.8 * radius; break;
                case 2:
                    inside = v >= -radius && v <= 0.75 * radius &&
                             std::fabs(u) <= 0.55 * (v + radius);
                    break;
                case 3: inside = r >= 0.55 * radius && r <= radius; break;
                case 4: inside = std::fabs(u) + std::fabs(v) <= 1.1 * radius; break;
                case 5:
                    inside = (std::fabs(u) <= 0.35 * radius && std::fabs(v) <= radius) ||
                             (std::fabs(v) <= 0.35 * radius && std::fabs(u) <= radius);
                    break;
                case 6: inside = std::fabs(v) <= 0.4 * radius && std::fabs(u) <= radius; break;
                default: inside = std::fabs(u) <= 0.4 * radius && std::fabs(v) <= radius; break;
            }
            if (inside) mask[static_cast<std::size_t>(y) * image_size + x] = 1;
        }
    }
    return mask;
}

double texture_factor(int texture_id, int x, int y) {
    switch (texture_id) {
        case 0: return 1.0;
        case 1: return ((y / 3) % 2 == 0) ? 1.0 : 0.45;
        case 2: return (((x / 4) + (y / 4)) % 2 == 0) ? 1.0 : 0.45;
        case 3: return (x % 4 == 1 && y % 4 == 1) ? 0.25 : 1.0;
        case 4: return ((x / 3) % 2 == 0) ? 1.0 : 0.45;
        case 5: return (((x + y) / 3) % 2 == 0) ? 1.0 : 0.45;
        default: throw contract_error("texture_factor: texture id out of range");
    }
}

std::uint64_t synthetic_sample_seed(const SyntheticSpec& spec, int class_index, int sample_index) {
    return mix_seed(mix_seed(spec.seed, 100 + static_cast<std::uint64_t>(class_index)),
                    static_cast<std::uint64_t>(sample_index));
}

RenderedSample render_sample(const SyntheticSpec& spec, int color, int shape, int texture,
                             std::uint64_t sample_seed) {
    std::mt19937_64 rng(sample_seed);
    const int max_jitter = std::max(1, spec.image_size / 16);
    std::uniform_int_distribution<int> jitter(-max_jitter, max_jitter);
    const int dx = jitter(rng);
    const int dy = jitter(rng);

    RenderedSample out;
    out.mask = shape_mask(shape, spec.image_size, dx, dy);
    const std::array<double, 3> rgb = palette_color(color, spec.n_colors);
    const std::size_t hw = static_cast<std::size_t>(spec.image_size) * spec.image_size;
    out.pixels.assign(3 * hw, 0.0f);
    std::normal_distribution<double> noise(0.0, spec.noise_std);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < spec.image_size; ++y) {
            for (int x = 0; x < spec.image_size; ++x) {
                const std::size_t pix = static_cast<std::size_t>(y) * spec.image_size + x;
                double value = 0.0;
                if (out.mask[pix]) {
                    value = rgb[static_cast<std::size_t>(c)] * texture_factor(texture, x, y);
                }
                if (spec.noise_std > 0.0) value += noise(rng);
                out.pixels[static_cast<std::size_t>(c) * hw + pix] = static_cast<float>(value);
            }
        }
    }
    return out;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const int n_classes = spec.class_count();

    std::vector<std::array<int, 3>> factors;
    factors.reserve(static_cast<std::size_t>(n_classes));
    for (int c = 0; c < spec.n_colors; ++c) {
        for (int s = 0; s < spec.n_shapes; ++s) {
            for (int t = 0; t < spec.n_textures; ++t) {
                factors.push_back({c, s, t});
            }
        }
    }

    // Pick novel classes greedily in a seed-derived order, keeping every
    // factor value represented among the remaining base classes.
    std::vector<char> is_base(static_cast<std::size_t>(n_classes), 1);
    std::array<std::vector<int>, 3> value_counts = {
        std::vector<int>(static_cast<std::size_t>(spec.n_colors), 0),
        std::vector<int>(static_cast<std::size_t>(spec.n_shapes), 0),
        std::vector<int>(static_cast<std::size_t>(spec.n_textures), 0)};
    for (const auto& f : factors) {
        for (int axis = 0; axis < 3; ++axis) {
            value_counts[static_cast<std::size_t>(axis)][static_cast<std::size_t>(f[static_cast<std::size_t>(axis)])]++;
        }
    }
    std::vector<int> candidates(static_cast<std::size_t>(n_classes));
    std::iota(candidates.begin(), candidates.end(), 0);
    std::mt19937_64 split_rng(mix_seed(spec.seed, 1));
    std::shuffle(candidates.begin(), candidates.end(), split_rng);
    int picked = 0;
    for (int cls : candidates) {
        if (picked == spec.n_novel) break;
        const auto& f = factors[static_cast<std::size_t>(cls)];
        bool feasible = true;
        for (int axis = 0; axis < 3; ++axis) {
            if (value_counts[static_cast<std::size_t>(axis)][static_cast<std::size_t>(f[static_cast<std::size_t>(axis)])] <= 1) {
                feasible = false;
                break;
            }
        }
        if (!feasible) continue;
        is_base[static_cast<std::size_t>(cls)] = 0;
        for (int axis = 0; axis < 3; ++axis) {
            value_counts[static_cast<std::size_t>(axis)][static_cast<std::size_t>(f[static_cast<std::size_t>(axis)])]--;
        }
        ++picked;
    }
    if (picked < spec.n_novel) {
        throw config_error("infeasible split: cannot withhold " + std::to_string(spec.n_novel) +
                           " classes while keeping every attribute value in a base class");
    }

    Dataset data;
    data.image_size = spec.image_size;
    data.channels = 3;
    data.cardinalities = {spec.n_colors, spec.n_shapes, spec.n_textures};
    data.shots = spec.shots;
    data.class_factors = factors;
    data.base_flags = is_base;
    data.class_names.reserve(static_cast<std::size_t>(n_classes));
    for (const auto& f : factors) {
        data.class_names.push_back(factor_name(k_color_names, 8, "color", f[0]) + "-" +
                                   factor_name(k_shape_names, k_shape_catalog_size, "shape", f[1]) +
                                   "-" +
                                   factor_name(k_texture_names, k_texture_catalog_size, "texture",
                                               f[2]));
    }
    for (int cls = 0; cls < n_classes; ++cls) {
        const auto& f = factors[static_cast<std::size_t>(cls)];
        for (int s = 0; s < spec.samples_per_class; ++s) {
            RenderedSample rendered =
                render_sample(spec, f[0], f[1], f[2], synthetic_sample_seed(spec, cls, s));
            data.labels.push_back(cls);
            data.images.push_back(std::move(rendered.pixels));
        }
    }
    data.validate();
    return data;
}

}  // namespace attriprompt
