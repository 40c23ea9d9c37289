#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "attriprompt/gradcheck.hpp"
#include "attriprompt/io.hpp"
#include "attriprompt/synthetic.hpp"
#include "attriprompt/training.hpp"

namespace py = pybind11;
using namespace attriprompt;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
    std::vector<int> shape;
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) {
        shape.push_back(static_cast<int>(arr.shape(i)));
    }
    std::vector<double> values(arr.data(), arr.data() + arr.size());
    return Tensor(std::move(shape), std::move(values));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
    std::vector<py::ssize_t> shape;
    for (int d : t.shape()) shape.push_back(d);
    py::array_t<double> out(shape);
    std::copy(t.values().begin(), t.values().end(), out.mutable_data());
    return out;
}

SyntheticSpec spec_from_kwargs(const py::dict& kwargs) {
    std::ostringstream text;
    for (const auto& item : kwargs) {
        text << py::str(item.first).cast<std::string>() << " = "
             << py::str(item.second).cast<std::string>() << "\n";
    }
    return parse_synthetic_spec_text(text.str());
}

TaskConfig config_from_kwargs(const py::dict& kwargs) {
    std::ostringstream text;
    for (const auto& item : kwargs) {
        text << py::str(item.first).cast<std::string>() << " = "
             << py::str(item.second).cast<std::string>() << "\n";
    }
    return parse_task_config_text(text.str());
}

py::dict eval_dict(const EvalResult& result) {
    py::dict out;
    out["base_acc"] = result.base_acc;
    out["novel_acc"] = result.novel_acc;
    out["hm"] = result.hm;
    return out;
}

}  // namespace

PYBIND11_MODULE(_attriprompt, m) {
    m.doc() = "Retrieval-composed deep prompt tuning on a frozen toy dual encoder";

    py::register_exception<shape_error>(m, "ShapeError");
    py::register_exception<contract_error>(m, "ContractError");
    py::register_exception<degenerate_input_error>(m, "DegenerateInputError");
    py::register_exception<config_error>(m, "ConfigError");
    py::register_exception<format_error>(m, "FormatError");
    py::register_exception<determinism_error>(m, "DeterminismError");

    m.def(
        "softmax_rows",
        [](const py::array_t<double>& x) {
            Tape tape;
            return array_from_tensor(softmax_rows(tape, tensor_from_array(x)));
        },
        py::arg("x"), "Row-wise softmax with max subtraction.");

    m.def(
        "cosine_rows",
        [](const py::array_t<double>& a, const py::array_t<double>& b) {
            Tape tape;
            return array_from_tensor(cosine_rows(tape, tensor_from_array(a), tensor_from_array(b)));
        },
        py::arg("a"), py::arg("b"), "Pairwise cosine similarity between row sets.");

    m.def(
        "kmeans",
        [](const py::array_t<double>& points, int k, int iters, std::uint64_t seed) {
            AttributeSet result = kmeans_cluster(tensor_from_array(points), k, iters, seed);
            return py::make_tuple(array_from_tensor(result.centroids), result.assignment,
                                  result.sse);
        },
        py::arg("points"), py::arg("k"), py::arg("iters") = 50, py::arg("seed") = 0,
        "Lloyd's k-means; returns (centroids, assignment, sse).");

    m.def(
        "retrieval_scores",
        [](const py::array_t<double>& centroids, const py::array_t<double>& keys) {
            AttributeSet attrs;
            attrs.centroids = tensor_from_array(centroids);
            PromptPool pool;
            pool.keys = tensor_from_array(keys);
            pool.size = pool.keys.rows();
            pool.prompt_len = 1;
            return array_from_tensor(retrieval_scores(attrs, pool));
        },
        py::arg("centroids"), py::arg("keys"),
        "Softmax over exp(cos(centroid, key)); rows sum to 1.");

    m.def(
        "select_unique",
        [](const py::array_t<double>& scores) { return select_unique(tensor_from_array(scores)); },
        py::arg("scores"), "Greedy unique key choice per attribute.");

    m.def("cosine_lr", &cosine_lr, py::arg("step"), py::arg("total_steps"), py::arg("base_lr"));
    m.def("harmonic_mean", &harmonic_mean, py::arg("a"), py::arg("b"));
    m.def("fuse_predictions", &fuse_predictions, py::arg("p_ce"), py::arg("p_align"),
          py::arg("lambda1"));

    m.def(
        "generate_dataset",
        [](const std::string& path, const py::kwargs& kwargs) {
            SyntheticSpec spec = spec_from_kwargs(kwargs);
            Dataset dataset = generate_synthetic(spec);
            save_dataset(dataset, path);
            py::dict out;
            out["classes"] = dataset.class_count();
            out["samples"] = dataset.sample_count();
            const FewShotSplit split = dataset.split();
            out["base_classes"] = split.base_classes.size();
            out["novel_classes"] = split.novel_classes.size();
            return out;
        },
        py::arg("path"), "Generate an attribute-composition dataset file; kwargs are spec keys.");

    m.def(
        "train",
        [](const std::string& data_path, const std::string& ckpt_path, const py::kwargs& kwargs) {
            Dataset dataset = load_dataset(data_path);
            TaskConfig config = config_from_kwargs(kwargs);
            bind_task_to_dataset(config, dataset);
            Model model = build_model(config);
            SgdState state;
            std::ostringstream log;
            std::vector<LossBreakdown> history =
                train_run(model, dataset, dataset.split(), state, &log);
            save_checkpoint(ckpt_path, model, state);
            py::dict out;
            out["steps"] = history.size();
            out["log"] = log.str();
            std::vector<double> totals;
            totals.reserve(history.size());
            for (const LossBreakdown& b : history) totals.push_back(b.total);
            out["total_per_step"] = totals;
            return out;
        },
        py::arg("data"), py::arg("out"),
        "Train on the base split and write a checkpoint; kwargs are config keys.");

    m.def(
        "evaluate",
        [](const std::string& data_path, const std::string& ckpt_path) {
            Dataset dataset = load_dataset(data_path);
            CheckpointState state = load_checkpoint(ckpt_path);
            return eval_dict(evaluate(state.model, dataset, dataset.split(),
                                      state.model.config.weights.lambda1));
        },
        py::arg("data"), py::arg("ckpt"), "Base/novel accuracy and harmonic mean.");

    m.def(
        "gradcheck",
        [](double step, const py::kwargs& kwargs) {
            TaskConfig config = config_from_kwargs(kwargs);
            GradCheckOutcome outcome = run_gradcheck(config, step);
            py::dict out;
            out["max_rel_err"] = outcome.max_rel_err;
            py::dict per_param;
            for (const auto& [name, report] : outcome.per_param) {
                per_param[py::str(name)] = report.max_rel_err;
            }
            out["per_param"] = per_param;
            return out;
        },
        py::arg("step") = 1e-5,
        "Finite-difference check of every trainable gradient; kwargs are config keys.");
}
