#pragma once

#include <string>

#include "attriprompt/data.hpp"
#include "attriprompt/model.hpp"
#include "attriprompt/synthetic.hpp"
#include "attriprompt/training.hpp"

namespace attriprompt {

// Binary dataset format, magic "ATPD1", little-endian throughout. The
// sample count is derived from the file length; any disagreement between
// declared sizes and actual length is rejected.
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

// Binary checkpoint format, magic "ATPC1": config echo, seed, step counter,
// then named tensor sections covering the backbone, prompt pool, heads and
// optimizer velocities. save -> load -> save is byte-identical.
void save_checkpoint(const std::string& path, const Model& model, const SgdState& optimizer);

struct CheckpointState {
    Model model;
    SgdState optimizer;
};

CheckpointState load_checkpoint(const std::string& path);

// Plain-text `key = value` configuration. Unknown keys are errors; '#'
// starts a comment.
TaskConfig parse_task_config_text(const std::string& text);
TaskConfig load_task_config(const std::string& path);
std::string serialize_task_config(const TaskConfig& config);

SyntheticSpec parse_synthetic_spec_text(const std::string& text);
SyntheticSpec load_synthetic_spec(const std::string& path);

// Fills the vocabulary-derived model fields from a dataset and checks their
// compatibility.
void bind_task_to_dataset(TaskConfig& config, const Dataset& dataset);

}  // namespace attriprompt
