#pragma once

#include <utility>
#include <vector>

#include "attriprompt/model.hpp"
#include "attriprompt/ops.hpp"

namespace attriprompt {

struct GradCheckOutcome {
    double max_rel_err = 0.0;
    std::vector<std::pair<std::string, FiniteDiffReport>> per_param;
};

// Builds a three-class toy task (three colors, one shape, one texture) with
// one random image, then checks the reverse-mode gradient of the combined
// objective against central finite differences for every trainable tensor.
GradCheckOutcome run_gradcheck(TaskConfig config, double step);

}  // namespace attriprompt
