#pragma once

#include <cstdint>
#include <vector>

#include "emloc/config.hpp"
#include "emloc/dataset.hpp"
#include "emloc/model.hpp"

namespace emloc {

/// Synthetic regression task: a hidden teacher network labels inputs drawn
/// from an anisotropic Gaussian, and the released base model is the teacher
/// with perturbed weights, so fine-tuning has a real domain gap to close.
struct TaskConfig {
    std::uint64_t seed = 1;
    std::vector<std::size_t> dims = {32, 48, 32};  // layer widths, >= 2 entries
    std::size_t n_train = 256;
    std::size_t n_eval = 256;
    std::size_t n_calib = 64;
    double label_noise = 0.01;
    double gap_scale = 0.15;     // weight perturbation relative to init std
    std::size_t gap_rank = 8;    // rank of the perturbation; 0 = dense
    double cov_condition = 20.0; // head steepness of the covariance spectrum
    double cov_floor = 0.0;      // flat spectral tail, relative to the top eigenvalue
};

struct SyntheticTask {
    Network teacher;  // generates labels; hidden from the pipeline
    Network base;     // released model the pipeline compresses and fine-tunes
    Dataset train;
    Dataset eval;
    Dataset calib;  // drawn from the training input distribution
};

SyntheticTask generate_task(const TaskConfig& cfg);

TaskConfig task_config_from(const Config& cfg);

}  // namespace emloc
