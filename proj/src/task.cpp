#include "emloc/task.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "emloc/linalg.hpp"
#include "emloc/rng.hpp"

namespace emloc {

namespace {

// Anisotropic Gaussian sampler: covariance Q diag(lambda) Q^T with a random
// orthogonal Q and eigenvalues log-spaced from 1 down to 1/condition.
struct InputSampler {
    Matrix half;  // diag(sqrt(lambda)) * Q^T; x = z * half with z ~ N(0, I)

    // Eigenvalues decay geometrically from 1 toward 1/condition and are held
    // at the cov_floor once they reach it, giving the spectrum a steep head
    // and a flat tail.
    InputSampler(std::size_t dim, double condition, double floor, std::uint64_t seed) {
        if (condition < 1.0) {
            throw std::invalid_argument("generate_task: cov_condition must be >= 1");
        }
        if (floor < 0.0 || floor > 1.0) {
            throw std::invalid_argument("generate_task: cov_floor must be in [0, 1]");
        }
        Matrix q = svd(random_gaussian(dim, dim, 1.0, seed)).u;
        half = transpose(q);
        for (std::size_t i = 0; i < dim; ++i) {
            const double expo = dim == 1 ? 0.0
                                         : static_cast<double>(i) /
                                               static_cast<double>(dim - 1);
            const double eigenvalue = std::max(std::pow(condition, -expo), floor);
            const double s = std::sqrt(eigenvalue);
            for (std::size_t j = 0; j < dim; ++j) half(i, j) *= s;
        }
    }

    Matrix sample(std::size_t rows, std::mt19937_64& eng) const {
        return matmul(random_gaussian(rows, half.rows(), 1.0, eng), half);
    }
};

Network make_teacher(const std::vector<std::size_t>& dims, std::uint64_t seed) {
    Network net;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Layer layer;
        const std::size_t d_in = dims[l];
        const std::size_t d_out = dims[l + 1];
        const double std_w = 1.0 / std::sqrt(static_cast<double>(d_in));
        layer.weight = random_gaussian(d_in, d_out, std_w, derive_seed(seed, 0x7e0 + l));
        layer.bias = random_gaussian(1, d_out, 0.05, derive_seed(seed, 0xb1a5 + l));
        const bool last = l + 2 == dims.size();
        layer.activation = last ? Activation::identity : Activation::tanh;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

Dataset make_split(const Network& teacher, const InputSampler& sampler,
                   std::size_t rows, double label_noise, std::uint64_t seed) {
    std::mt19937_64 eng(seed);
    Dataset d;
    d.inputs = sampler.sample(rows, eng);
    d.targets = forward(teacher, d.inputs);
    if (label_noise > 0.0) {
        std::normal_distribution<double> noise(0.0, label_noise);
        for (double& v : d.targets.data()) v += noise(eng);
    }
    return d;
}

}  // namespace

SyntheticTask generate_task(const TaskConfig& cfg) {
    if (cfg.dims.size() < 2) {
        throw std::invalid_argument("generate_task: dims needs at least input and output");
    }
    for (std::size_t d : cfg.dims) {
        if (d == 0) throw std::invalid_argument("generate_task: zero layer width");
    }
    if (cfg.n_train < 1 || cfg.n_eval < 1 || cfg.n_calib < 1) {
        throw std::invalid_argument("generate_task: split sizes must be >= 1");
    }

    SyntheticTask task;
    task.teacher = make_teacher(cfg.dims, derive_seed(cfg.seed, 0x7eac4e8));

    const InputSampler sampler(cfg.dims.front(), cfg.cov_condition, cfg.cov_floor,
                               derive_seed(cfg.seed, 0xc0f));

    // Base model = teacher with weights perturbed at gap_scale times the init
    // std. By default the perturbation is rank-limited and placed in each
    // layer's dominant input directions: the released model is wrong exactly
    // where the task exercises it, so fine-tuning has a recoverable signal.
    // gap_rank 0 gives dense unstructured noise instead. Biases are shared;
    // only linear weights carry the domain gap.
    task.base = task.teacher;
    if (cfg.gap_scale > 0.0) {
        Tape probe;
        {
            std::mt19937_64 probe_eng(derive_seed(cfg.seed, 0x920be));
            const std::size_t probe_rows = 4 * *std::max_element(cfg.dims.begin(),
                                                                 cfg.dims.end());
            Matrix probe_inputs = sampler.sample(probe_rows, probe_eng);
            forward(task.teacher, probe_inputs, ForwardMode::capture, &probe);
        }

        for (std::size_t l = 0; l < task.base.layers.size(); ++l) {
            Layer& layer = task.base.layers[l];
            const std::size_t d_in = layer.d_in();
            const std::size_t d_out = layer.d_out();
            const double std_w = 1.0 / std::sqrt(static_cast<double>(d_in));
            const std::uint64_t gap_seed = derive_seed(cfg.seed, 0x9a9 + l);

            Matrix gap;
            if (cfg.gap_rank == 0 || cfg.gap_rank >= std::min(d_in, d_out)) {
                gap = random_gaussian(d_in, d_out, cfg.gap_scale * std_w, gap_seed);
            } else {
                // left span: top input directions of this layer under the task
                const Matrix& x = probe.inputs[l];
                SvdResult dirs = svd(matmul(transpose(x), x));
                Matrix head(d_in, cfg.gap_rank);
                for (std::size_t i = 0; i < d_in; ++i) {
                    for (std::size_t j = 0; j < cfg.gap_rank; ++j) head(i, j) = dirs.u(i, j);
                }
                gap = matmul(head, random_gaussian(cfg.gap_rank, d_out, 1.0, gap_seed));
                const double target = cfg.gap_scale * std_w *
                                      std::sqrt(static_cast<double>(d_in) *
                                                static_cast<double>(d_out));
                const double nrm = frobenius_norm(gap);
                if (nrm > 0.0) gap = scale(gap, target / nrm);
            }
            layer.weight = add(layer.full_weight(), gap);
        }
    }
    task.train = make_split(task.teacher, sampler, cfg.n_train, cfg.label_noise,
                            derive_seed(cfg.seed, 0x7a1));
    task.eval = make_split(task.teacher, sampler, cfg.n_eval, cfg.label_noise,
                           derive_seed(cfg.seed, 0xe7a1));
    task.calib = make_split(task.teacher, sampler, cfg.n_calib, cfg.label_noise,
                            derive_seed(cfg.seed, 0xca1b));
    return task;
}

TaskConfig task_config_from(const Config& cfg) {
    TaskConfig t;
    t.seed = cfg.get_uint("task", "seed", t.seed);
    t.dims = cfg.get_size_list("task", "dims", t.dims);
    t.n_train = cfg.get_uint("task", "n_train", t.n_train);
    t.n_eval = cfg.get_uint("task", "n_eval", t.n_eval);
    t.n_calib = cfg.get_uint("task", "n_calib", t.n_calib);
    t.label_noise = cfg.get_double("task", "label_noise", t.label_noise);
    t.gap_scale = cfg.get_double("task", "gap_scale", t.gap_scale);
    t.gap_rank = cfg.get_uint("task", "gap_rank", t.gap_rank);
    t.cov_condition = cfg.get_double("task", "cov_condition", t.cov_condition);
    t.cov_floor = cfg.get_double("task", "cov_floor", t.cov_floor);
    return t;
}

}  // namespace emloc
