#include "attriprompt/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "attriprompt/gradcheck.hpp"
#include "attriprompt/io.hpp"

namespace attriprompt {

namespace {

constexpr double k_gradcheck_threshold = 1e-3;

std::string two_decimals(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

void require_file(const std::string& path, const std::string& flag) {
    if (!std::filesystem::exists(path)) {
        throw CLI::ValidationError(flag, "file not found: " + path);
    }
}

std::vector<std::string> split_csv(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream stream(csv);
    std::string item;
    while (std::getline(stream, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

int run_gen(const std::string& spec_path, const std::string& out_path) {
    SyntheticSpec spec = load_synthetic_spec(spec_path);
    Dataset dataset = generate_synthetic(spec);
    save_dataset(dataset, out_path);
    const FewShotSplit split = dataset.split();
    std::cout << "wrote " << out_path << ": " << dataset.class_count() << " classes ("
              << split.base_classes.size() << " base, " << split.novel_classes.size()
              << " novel), " << dataset.sample_count() << " samples\n";
    return 0;
}

int run_train(const std::string& data_path, const std::string& config_path,
              const std::string& out_path, std::string log_path) {
    Dataset dataset = load_dataset(data_path);
    TaskConfig config = load_task_config(config_path);
    bind_task_to_dataset(config, dataset);
    Model model = build_model(config);
    const FewShotSplit split = dataset.split();

    if (log_path.empty()) log_path = out_path + ".log";
    std::ofstream log(log_path);
    if (!log) throw format_error("cannot open log file " + log_path);
    log << "# seed " << config.seed << "\n";

    SgdState state;
    std::vector<LossBreakdown> history = train_run(model, dataset, split, state, &log);
    log.close();
    save_checkpoint(out_path, model, state);

    std::cout << "trained " << history.size() << " steps";
    if (!history.empty()) {
        std::cout << ", first total " << history.front().total << ", last total "
                  << history.back().total;
    }
    std::cout << "\nwrote " << out_path << " and " << log_path << "\n";
    return 0;
}

int run_eval(const std::string& data_path, const std::string& ckpt_path) {
    Dataset dataset = load_dataset(data_path);
    CheckpointState state = load_checkpoint(ckpt_path);
    TaskConfig check = state.model.config;
    bind_task_to_dataset(check, dataset);
    if (check.model.vocab_size != state.model.config.model.vocab_size) {
        throw config_error("checkpoint vocabulary does not match the dataset");
    }
    const EvalResult result = evaluate(state.model, dataset, dataset.split(),
                                       state.model.config.weights.lambda1);
    std::cout << "base_acc " << two_decimals(result.base_acc) << "\n";
    std::cout << "novel_acc " << two_decimals(result.novel_acc) << "\n";
    std::cout << "hm " << two_decimals(result.hm) << "\n";
    return 0;
}

int run_gradcheck(const std::string& config_path, double step) {
    TaskConfig config = load_task_config(config_path);
    GradCheckOutcome outcome = run_gradcheck(config, step);
    for (const auto& [name, report] : outcome.per_param) {
        std::cout << name << " max_rel_err " << report.max_rel_err << "\n";
    }
    std::cout << "overall max_rel_err " << outcome.max_rel_err << "\n";
    if (!(outcome.max_rel_err <= k_gradcheck_threshold)) {
        std::cout << "FAIL: exceeds " << k_gradcheck_threshold << "\n";
        return 1;
    }
    std::cout << "PASS\n";
    return 0;
}

int run_inspect(const std::string& data_path, const std::string& ckpt_path, int image_index) {
    Dataset dataset = load_dataset(data_path);
    CheckpointState state = load_checkpoint(ckpt_path);
    if (image_index < 0 || image_index >= dataset.sample_count()) {
        throw contract_error("image index " + std::to_string(image_index) +
                             " outside the dataset (" + std::to_string(dataset.sample_count()) +
                             " samples)");
    }
    const Model& model = state.model;
    VisionOutput vision =
        vision_forward(model.backbone, model.config.model, dataset.image_tensor(image_index));
    RetrievalPlan plan = plan_for_trace(model, vision.trace);
    std::cout << "image " << image_index << " class "
              << dataset.class_names[static_cast<std::size_t>(
                     dataset.labels[static_cast<std::size_t>(image_index)])]
              << "\n";
    for (std::size_t layer = 0; layer < plan.per_layer.size(); ++layer) {
        const LayerRetrieval& entry = plan.per_layer[layer];
        std::cout << "layer " << layer << " (vision layer "
                  << model.layer_map[layer] << ")\n";
        std::cout << "  centroid_norms:";
        for (int i = 0; i < entry.centroids.rows(); ++i) {
            double norm = 0.0;
            for (int j = 0; j < entry.centroids.cols(); ++j) {
                norm += entry.centroids.at(i, j) * entry.centroids.at(i, j);
            }
            std::cout << " " << std::sqrt(norm);
        }
        std::cout << "\n  scores:\n";
        for (int i = 0; i < entry.scores.rows(); ++i) {
            std::cout << "   ";
            for (int j = 0; j < entry.scores.cols(); ++j) {
                std::cout << " " << entry.scores.at(i, j);
            }
            std::cout << "\n";
        }
        std::cout << "  selected:";
        for (int id : entry.selected) std::cout << " " << id;
        std::cout << "\n";
    }
    return 0;
}

struct SweepAxis {
    std::string name;
    bool integer = false;
    std::function<void(TaskConfig&, double)> apply;
};

SweepAxis sweep_axis(const std::string& param) {
    if (param == "M") {
        return {"M", true, [](TaskConfig& c, double v) { c.pool_size = static_cast<int>(v); }};
    }
    if (param == "k") {
        return {"k", true, [](TaskConfig& c, double v) { c.clusters = static_cast<int>(v); }};
    }
    if (param == "L_p") {
        return {"L_p", true, [](TaskConfig& c, double v) { c.prompt_len = static_cast<int>(v); }};
    }
    if (param == "lambda1") {
        return {"lambda1", false, [](TaskConfig& c, double v) { c.weights.lambda1 = v; }};
    }
    if (param == "lambda3") {
        return {"lambda3", false, [](TaskConfig& c, double v) { c.weights.lambda3 = v; }};
    }
    if (param == "lambda4") {
        return {"lambda4", false, [](TaskConfig& c, double v) { c.weights.lambda4 = v; }};
    }
    throw CLI::ValidationError("--param",
                               "must be one of M, k, L_p, lambda1, lambda3, lambda4");
}

int run_sweep(const std::string& param, const std::string& values_csv,
              const std::string& data_path, const std::string& config_path,
              const std::string& seeds_csv) {
    const SweepAxis axis = sweep_axis(param);
    const std::vector<std::string> raw_values = split_csv(values_csv);
    if (raw_values.empty()) throw CLI::ValidationError("--values", "no values given");

    Dataset dataset = load_dataset(data_path);
    TaskConfig base_config = load_task_config(config_path);
    bind_task_to_dataset(base_config, dataset);
    const FewShotSplit split = dataset.split();

    std::vector<std::uint64_t> seeds;
    if (seeds_csv.empty()) {
        seeds.push_back(base_config.seed);
    } else {
        for (const std::string& s : split_csv(seeds_csv)) seeds.push_back(std::stoull(s));
    }

    std::cout << param << " base novel hm\n";
    for (const std::string& raw : raw_values) {
        const double value = std::stod(raw);
        double base_sum = 0.0, novel_sum = 0.0, hm_sum = 0.0;
        for (std::uint64_t seed : seeds) {
            TaskConfig config = base_config;
            axis.apply(config, value);
            config.seed = seed;
            Model model = build_model(config);
            SgdState state;
            train_run(model, dataset, split, state, nullptr);
            const EvalResult result = evaluate(model, dataset, split, config.weights.lambda1);
            base_sum += result.base_acc;
            novel_sum += result.novel_acc;
            hm_sum += result.hm;
        }
        const double n = static_cast<double>(seeds.size());
        std::cout << (axis.integer ? std::to_string(static_cast<int>(value)) : raw) << " "
                  << two_decimals(base_sum / n) << " " << two_decimals(novel_sum / n) << " "
                  << two_decimals(hm_sum / n) << "\n";
    }
    return 0;
}

}  // namespace

int cli_run(const std::vector<std::string>& args) {
    CLI::App app{"attriprompt: retrieval-composed deep prompt tuning on a frozen toy dual encoder"};
    app.require_subcommand(1);

    std::string spec_path, out_path, data_path, config_path, ckpt_path, log_path;
    std::string sweep_param, sweep_values, sweep_seeds;
    int image_index = 0;
    double fd_step = 1e-5;

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    gen->add_option("--spec", spec_path, "generator spec file")->required();
    gen->add_option("--out", out_path, "output dataset path")->required();

    CLI::App* train = app.add_subcommand("train", "train on the base split of a dataset");
    train->add_option("--data", data_path, "dataset path")->required();
    train->add_option("--config", config_path, "task config file")->required();
    train->add_option("--out", out_path, "output checkpoint path")->required();
    train->add_option("--log", log_path, "training log path (default: <out>.log)");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    eval_cmd->add_option("--data", data_path, "dataset path")->required();
    eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint path")->required();

    CLI::App* gradcheck_cmd =
        app.add_subcommand("gradcheck", "finite-difference check of every trainable gradient");
    gradcheck_cmd->add_option("--config", config_path, "task config file")->required();
    gradcheck_cmd->add_option("--step", fd_step, "finite-difference step (default 1e-5)");

    CLI::App* inspect = app.add_subcommand("inspect-retrieval",
                                           "dump per-layer clusters, scores and selections");
    inspect->add_option("--data", data_path, "dataset path")->required();
    inspect->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    inspect->add_option("--image", image_index, "sample index")->required();

    CLI::App* sweep = app.add_subcommand("sweep", "train/evaluate along one parameter axis");
    sweep->add_option("--param", sweep_param, "one of M, k, L_p, lambda1, lambda3, lambda4")
        ->required();
    sweep->add_option("--values", sweep_values, "comma-separated values")->required();
    sweep->add_option("--data", data_path, "dataset path")->required();
    sweep->add_option("--config", config_path, "task config file")->required();
    sweep->add_option("--seeds", sweep_seeds, "comma-separated seeds (default: config seed)");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
        if (gen->parsed()) {
            require_file(spec_path, "--spec");
        } else if (train->parsed()) {
            require_file(data_path, "--data");
            require_file(config_path, "--config");
        } else if (eval_cmd->parsed()) {
            require_file(data_path, "--data");
            require_file(ckpt_path, "--ckpt");
        } else if (gradcheck_cmd->parsed()) {
            require_file(config_path, "--config");
        } else if (inspect->parsed()) {
            require_file(data_path, "--data");
            require_file(ckpt_path, "--ckpt");
        } else if (sweep->parsed()) {
            sweep_axis(sweep_param);  // rejects unknown axes as a usage error
            require_file(data_path, "--data");
            require_file(config_path, "--config");
        }
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return run_gen(spec_path, out_path);
        if (train->parsed()) return run_train(data_path, config_path, out_path, log_path);
        if (eval_cmd->parsed()) return run_eval(data_path, ckpt_path);
        if (gradcheck_cmd->parsed()) return run_gradcheck(config_path, fd_step);
        if (inspect->parsed()) return run_inspect(data_path, ckpt_path, image_index);
        if (sweep->parsed()) {
            return run_sweep(sweep_param, sweep_values, data_path, config_path, sweep_seeds);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace attriprompt
