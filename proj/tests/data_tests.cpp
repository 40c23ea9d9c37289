#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "attriprompt/io.hpp"
#include "attriprompt/synthetic.hpp"
#include "attriprompt/training.hpp"

using namespace attriprompt;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "attriprompt_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::string file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

SyntheticSpec small_spec() {
    SyntheticSpec spec;
    spec.n_colors = 3;
    spec.n_shapes = 3;
    spec.n_textures = 1;
    spec.image_size = 16;
    spec.noise_std = 0.02;
    spec.samples_per_class = 3;
    spec.n_novel = 2;
    spec.shots = 2;
    spec.seed = 5;
    return spec;
}

TaskConfig small_task() {
    TaskConfig config;
    config.model.image_size = 16;
    config.model.d_vis = 16;
    config.model.d_txt = 16;
    config.model.d_embed = 8;
    config.model.n_vis_layers = 2;
    config.model.n_txt_layers = 2;
    config.pool_size = 2;
    config.prompt_len = 1;
    config.clusters = 2;
    config.kmeans_iters = 5;
    config.schedule.epochs = 1;
    return config;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("generation: class counting and recomposition invariant") {
    SyntheticSpec spec = small_spec();
    Dataset data = generate_synthetic(spec);
    CHECK(data.class_count() == 9);
    FewShotSplit split = data.split();
    CHECK(split.base_classes.size() == 7);
    CHECK(split.novel_classes.size() == 2);
    CHECK(data.sample_count() == 27);

    // every factor value appears in at least one base class
    std::array<std::vector<int>, 3> seen = {std::vector<int>(3, 0), std::vector<int>(3, 0),
                                            std::vector<int>(1, 0)};
    for (int cls : split.base_classes) {
        for (int axis = 0; axis < 3; ++axis) {
            seen[static_cast<std::size_t>(axis)][static_cast<std::size_t>(
                data.class_factors[static_cast<std::size_t>(cls)][static_cast<std::size_t>(axis)])]++;
        }
    }
    for (const auto& axis : seen) {
        for (int count : axis) CHECK(count > 0);
    }

    // split arithmetic: 7 base classes, 2 shots each
    CHECK(split.train_indices.size() == 14);
    CHECK(split.base_test_indices.size() == 7);
    CHECK(split.novel_test_indices.size() == 6);
}

TEST_CASE("generation is deterministic: same seed gives byte-identical files") {
    SyntheticSpec spec = small_spec();
    const auto path_a = temp_path("gen_a.bin");
    const auto path_b = temp_path("gen_b.bin");
    save_dataset(generate_synthetic(spec), path_a.string());
    save_dataset(generate_synthetic(spec), path_b.string());
    CHECK(file_bytes(path_a) == file_bytes(path_b));

    spec.noise_std = 0.0;
    save_dataset(generate_synthetic(spec), path_a.string());
    save_dataset(generate_synthetic(spec), path_b.string());
    CHECK(file_bytes(path_a) == file_bytes(path_b));

    spec.seed = 6;
    save_dataset(generate_synthetic(spec), path_b.string());
    CHECK(file_bytes(path_a) != file_bytes(path_b));
}

TEST_CASE("foreground mean tracks the palette within averaged-noise bounds") {
    SyntheticSpec spec;
    spec.n_colors = 2;
    spec.n_shapes = 2;
    spec.n_textures = 1;  // plain texture only
    spec.image_size = 32;
    spec.noise_std = 0.05;
    const std::array<double, 3> rgb = palette_color(0, spec.n_colors);

    int violations = 0;
    double grand_sum[3] = {0, 0, 0};
    std::size_t grand_count = 0;
    const int renders = 100;
    for (int r = 0; r < renders; ++r) {
        RenderedSample sample = render_sample(spec, 0, 0, 0, 1000 + static_cast<std::uint64_t>(r));
        std::size_t fg = 0;
        double sums[3] = {0, 0, 0};
        const std::size_t hw = static_cast<std::size_t>(spec.image_size) * spec.image_size;
        for (std::size_t pix = 0; pix < hw; ++pix) {
            if (!sample.mask[pix]) continue;
            ++fg;
            for (int c = 0; c < 3; ++c) {
                sums[c] += sample.pixels[static_cast<std::size_t>(c) * hw + pix];
            }
        }
        REQUIRE(fg > 0);
        const double bound = 3.0 * spec.noise_std / std::sqrt(static_cast<double>(fg));
        for (int c = 0; c < 3; ++c) {
            if (std::fabs(sums[c] / static_cast<double>(fg) - rgb[static_cast<std::size_t>(c)]) >
                bound) {
                ++violations;
            }
            grand_sum[c] += sums[c];
        }
        grand_count += fg;
    }
    // each render-channel mean lies within 3 sigma with probability 99.7%
    CHECK(violations <= 5);
    const double grand_bound = 4.0 * spec.noise_std / std::sqrt(static_cast<double>(grand_count));
    for (int c = 0; c < 3; ++c) {
        CHECK(std::fabs(grand_sum[c] / static_cast<double>(grand_count) -
                        rgb[static_cast<std::size_t>(c)]) <= grand_bound);
    }
}

TEST_CASE("spec validation and infeasible splits are rejected") {
    SyntheticSpec spec = small_spec();
    spec.n_shapes = 1;
    spec.n_textures = 1;  // only one factor with cardinality >= 2
    CHECK_THROWS_AS(spec.validate(), config_error);

    spec = small_spec();
    spec.n_novel = spec.class_count();
    CHECK_THROWS_AS(spec.validate(), config_error);

    // 2x2x1 world: at most 2 novel classes keep every value in base
    SyntheticSpec tight;
    tight.n_colors = 2;
    tight.n_shapes = 2;
    tight.n_textures = 1;
    tight.samples_per_class = 2;
    tight.shots = 1;
    tight.n_novel = 3;
    CHECK_THROWS_WITH_AS(generate_synthetic(tight),
                         doctest::Contains("infeasible split"), config_error);

    spec = small_spec();
    spec.shots = spec.samples_per_class + 1;
    CHECK_THROWS_AS(spec.validate(), config_error);
}

TEST_CASE("dataset file round trip preserves everything") {
    Dataset data = generate_synthetic(small_spec());
    const auto path = temp_path("roundtrip.bin");
    save_dataset(data, path.string());
    Dataset loaded = load_dataset(path.string());
    CHECK(loaded.image_size == data.image_size);
    CHECK(loaded.channels == data.channels);
    CHECK(loaded.cardinalities == data.cardinalities);
    CHECK(loaded.shots == data.shots);
    CHECK(loaded.class_names == data.class_names);
    CHECK(loaded.class_factors == data.class_factors);
    CHECK(loaded.base_flags == data.base_flags);
    CHECK(loaded.labels == data.labels);
    REQUIRE(loaded.images.size() == data.images.size());
    for (std::size_t i = 0; i < data.images.size(); ++i) {
        CHECK(loaded.images[i] == data.images[i]);
    }
}

TEST_CASE("dataset loader rejects corruption") {
    Dataset data = generate_synthetic(small_spec());
    const auto path = temp_path("corrupt.bin");
    save_dataset(data, path.string());
    const std::string bytes = file_bytes(path);

    auto write_variant = [&path](const std::string& content) {
        std::ofstream out(path, std::ios::binary);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
    };

    write_variant(bytes.substr(0, bytes.size() - 3));  // truncated record
    CHECK_THROWS_AS(load_dataset(path.string()), format_error);

    write_variant(bytes + "xy");  // trailing garbage breaks the record grid
    CHECK_THROWS_AS(load_dataset(path.string()), format_error);

    std::string wrong_magic = bytes;
    wrong_magic[0] = 'X';
    write_variant(wrong_magic);
    CHECK_THROWS_AS(load_dataset(path.string()), format_error);

    write_variant(bytes.substr(0, 9));  // truncated header
    CHECK_THROWS_AS(load_dataset(path.string()), format_error);
}

TEST_CASE("checkpoint: save -> load -> save is byte-identical, state survives") {
    Dataset data = generate_synthetic(small_spec());
    TaskConfig config = small_task();
    bind_task_to_dataset(config, data);
    Model model = build_model(config);
    SgdState state;
    train_run(model, data, data.split(), state, nullptr);

    const auto first = temp_path("ckpt_a.bin");
    const auto second = temp_path("ckpt_b.bin");
    save_checkpoint(first.string(), model, state);
    CheckpointState loaded = load_checkpoint(first.string());
    save_checkpoint(second.string(), loaded.model, loaded.optimizer);
    CHECK(file_bytes(first) == file_bytes(second));

    CHECK(loaded.optimizer.step_count == state.step_count);
    CHECK(loaded.model.pool.prompts.values() == model.pool.prompts.values());
    CHECK(loaded.model.pool.keys.values() == model.pool.keys.values());
    CHECK(backbone_checksum(loaded.model) == backbone_checksum(model));
    for (std::size_t i = 0; i < state.velocity.size(); ++i) {
        CHECK(loaded.optimizer.velocity[i] == state.velocity[i]);
    }
}

TEST_CASE("checkpoint loader names the offending section") {
    Dataset data = generate_synthetic(small_spec());
    TaskConfig config = small_task();
    bind_task_to_dataset(config, data);
    Model model = build_model(config);
    TrainableSet trainables = collect_trainables(model);
    SgdState state = init_sgd_state(trainables);
    const auto path = temp_path("ckpt_broken.bin");
    save_checkpoint(path.string(), model, state);
    const std::string bytes = file_bytes(path);

    auto write_variant = [&path](const std::string& content) {
        std::ofstream out(path, std::ios::binary);
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
    };

    write_variant(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(path.string()), format_error);

    std::string wrong_magic = bytes;
    wrong_magic[4] = '9';
    write_variant(wrong_magic);
    CHECK_THROWS_WITH_AS(load_checkpoint(path.string()), doctest::Contains("magic"),
                         format_error);

    // flip one section name character: the error must name the section
    const std::string needle = "vision.patch_weight";
    std::string renamed = bytes;
    renamed.replace(renamed.find(needle), needle.size(), "vision.patch_wEight");
    write_variant(renamed);
    CHECK_THROWS_WITH_AS(load_checkpoint(path.string()),
                         doctest::Contains("vision.patch_weight"), format_error);
}

TEST_CASE("config text: defaults, round trip, typo rejection") {
    TaskConfig parsed = parse_task_config_text("lambda2 = 5.5\nseed = 42\n# comment\n");
    CHECK(parsed.weights.lambda2 == doctest::Approx(5.5));
    CHECK(parsed.seed == 42);
    CHECK(parsed.model.seed == 42);
    CHECK(parsed.pool_size == 4);  // untouched default

    TaskConfig base = small_task();
    base.model.vocab_size = 12;
    base.model.max_text_len = 8;
    TaskConfig reparsed = parse_task_config_text(serialize_task_config(base));
    CHECK(serialize_task_config(reparsed) == serialize_task_config(base));

    CHECK_THROWS_WITH_AS(parse_task_config_text("lambda5 = 0.1\n"),
                         doctest::Contains("lambda5"), config_error);
    CHECK_THROWS_AS(parse_task_config_text("epochs = abc\n"), config_error);
    CHECK_THROWS_AS(parse_task_config_text("epochs = 1\nepochs = 2\n"), config_error);
    CHECK_THROWS_AS(parse_task_config_text("epochs 1\n"), config_error);

    CHECK_THROWS_WITH_AS(parse_synthetic_spec_text("n_colours = 3\n"),
                         doctest::Contains("n_colours"), config_error);
}

TEST_CASE("shape masks and textures have the expected coarse structure") {
    const auto disk = shape_mask(0, 32, 0, 0);
    const auto square = shape_mask(1, 32, 0, 0);
    std::size_t disk_area = 0, square_area = 0;
    for (std::size_t i = 0; i < disk.size(); ++i) {
        disk_area += disk[i];
        square_area += square[i];
    }
    CHECK(disk_area > 100);
    CHECK(square_area > 100);
    CHECK(disk_area != square_area);
    CHECK(disk[0] == 0);  // corners stay background
    CHECK(disk[16 * 32 + 16] == 1);

    CHECK(texture_factor(0, 5, 9) == 1.0);
    bool saw_dim = false;
    for (int y = 0; y < 8; ++y) {
        if (texture_factor(1, 0, y) < 1.0) saw_dim = true;
    }
    CHECK(saw_dim);
}

}  // TEST_SUITE
