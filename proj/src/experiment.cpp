#include "emloc/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <thread>

#include "emloc/checkpoint.hpp"
#include "emloc/emulator.hpp"

namespace emloc {

namespace {

template <typename Fn>
auto guarded(const char* stage, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

Network stage_compress(const Network& model, const Dataset& calib, double ratio) {
    return guarded("compress", [&] { return build_emulator(model, calib, ratio); });
}

TrainResult stage_finetune(const Network& model, const Dataset& data,
                           const TrainConfig& cfg) {
    return guarded("finetune", [&] {
        Network with_lora = attach_lora(model, cfg.lora_rank, cfg.seed);
        return finetune(with_lora, data, cfg);
    });
}

std::pair<Network, NetworkCorrectionReport> stage_correct(const Network& full,
                                                          const Network& emulator_ft,
                                                          double lambda) {
    return guarded("correct", [&] { return correct_network(emulator_ft, full, lambda); });
}

Network stage_merge(const Network& net) {
    return guarded("merge", [&] {
        Network out = net;
        for (std::size_t l = 0; l < out.layers.size(); ++l) {
            Layer& layer = out.layers[l];
            if (!layer.lora) continue;
            if (layer.factorized()) {
                throw std::invalid_argument(
                    "cannot merge LoRA into factorized layer " + std::to_string(l) +
                    "; correct and transfer to the full model first");
            }
            layer.weight = merge_lora(layer.full_weight(), *layer.lora);
            layer.lora.reset();
        }
        return out;
    });
}

double stage_eval(const Network& net, const Dataset& data) {
    return guarded("eval", [&] { return evaluate_mse(net, data); });
}

Network transfer_lora(const Network& from, const Network& to) {
    from.validate();
    to.validate();
    if (from.layers.size() != to.layers.size()) {
        throw std::invalid_argument("transfer_lora: layer counts differ");
    }
    Network out = to;
    for (std::size_t l = 0; l < from.layers.size(); ++l) {
        if (!from.layers[l].lora) continue;
        const LoraModule& lora = *from.layers[l].lora;
        if (lora.d_in() != out.layers[l].d_in() || lora.d_out() != out.layers[l].d_out()) {
            throw std::invalid_argument("transfer_lora: shape mismatch at layer " +
                                        std::to_string(l));
        }
        out.layers[l].lora = lora;
    }
    return out;
}

ExperimentConfig ExperimentConfig::default_synthetic() {
    ExperimentConfig cfg;
    cfg.ratio = 0.25;
    cfg.train.lr = 2e-2;
    cfg.train.iterations = 500;
    cfg.train.batch_size = 8;
    cfg.train.lora_rank = 8;
    cfg.train.lambda = 3.0;
    cfg.train.seed = 1;
    cfg.train.schedule = LrSchedule::cosine;
    return cfg;
}

ExperimentConfig experiment_config_from(const Config& cfg) {
    static const std::map<std::string, std::vector<std::string>> kKnown = {
        {"task",
         {"seed", "dims", "n_train", "n_eval", "n_calib", "label_noise", "gap_scale",
          "gap_rank", "cov_condition", "cov_floor"}},
        {"emulator", {"ratio"}},
        {"train",
         {"lr", "iterations", "batch_size", "lora_rank", "lambda", "seed", "schedule"}},
        {"experiment", {"parallel_arms"}},
    };
    for (const auto& [section, keys] : cfg.sections()) {
        const auto known = kKnown.find(section);
        if (known == kKnown.end()) {
            throw std::runtime_error("config: unknown section [" + section + "]");
        }
        for (const auto& [key, value] : keys) {
            if (std::find(known->second.begin(), known->second.end(), key) ==
                known->second.end()) {
                throw std::runtime_error("config: unknown key " + section + "." + key);
            }
        }
    }

    ExperimentConfig out = ExperimentConfig::default_synthetic();
    out.task = task_config_from(cfg);
    out.ratio = cfg.get_double("emulator", "ratio", out.ratio);
    out.train.lr = cfg.get_double("train", "lr", out.train.lr);
    out.train.iterations = cfg.get_uint("train", "iterations", out.train.iterations);
    out.train.batch_size = cfg.get_uint("train", "batch_size", out.train.batch_size);
    out.train.lora_rank = cfg.get_uint("train", "lora_rank", out.train.lora_rank);
    out.train.lambda = cfg.get_double("train", "lambda", out.train.lambda);
    out.train.seed = cfg.get_uint("train", "seed", out.train.seed);
    const std::string schedule = cfg.get_string("train", "schedule", "cosine");
    if (schedule == "cosine") {
        out.train.schedule = LrSchedule::cosine;
    } else if (schedule == "constant") {
        out.train.schedule = LrSchedule::constant;
    } else {
        throw std::runtime_error("config: train.schedule must be cosine or constant");
    }
    out.parallel_arms = cfg.get_uint("experiment", "parallel_arms", 0) != 0;
    return out;
}

namespace {

void write_arm_csv(const std::filesystem::path& dir, const ArmResult& arm) {
    std::ofstream out(dir / ("arm_" + arm.name + ".csv"));
    out << "metric,value\n";
    out << "eval_loss," << format_g17(arm.eval_loss) << "\n";
    out << "params_bytes," << arm.budget.params_bytes << "\n";
    out << "optimizer_bytes," << arm.budget.optimizer_bytes << "\n";
    out << "activation_bytes," << arm.budget.activation_bytes << "\n";
    out << "total_bytes," << arm.budget.total_bytes << "\n";
}

void write_correction_report(const NetworkCorrectionReport& report, std::ostream& out) {
    for (const auto& [layer, rep] : report.layers) {
        out << "layer=" << layer << " rows_clamped=" << rep.rows_clamped
            << " max_row_correction_ratio=" << format_g17(rep.max_row_correction_ratio)
            << " residual=" << format_g17(rep.residual) << "\n";
    }
    out << "layers_corrected=" << report.layers.size() << "\n";
}

void write_report_txt(const ExperimentReport& r, const ExperimentConfig& cfg,
                      std::ostream& out) {
    out << "EMLoC experiment report\n";
    out << "ratio=" << cfg.ratio << " rank=" << cfg.train.lora_rank
        << " lambda=" << cfg.train.lambda << " iterations=" << cfg.train.iterations
        << " seed=" << cfg.train.seed << "\n\n";
    out << "arm                  eval_loss        total_bytes\n";
    for (const ArmResult* arm :
         {&r.zero_shot, &r.emulator, &r.naive_transfer, &r.corrected_transfer}) {
        char line[128];
        std::snprintf(line, sizeof(line), "%-20s %-16.8g %llu\n", arm->name.c_str(),
                      arm->eval_loss,
                      static_cast<unsigned long long>(arm->budget.total_bytes));
        out << line;
    }
    out << "\nfine-tuning budget on emulator: " << r.emulator_finetune.total_bytes
        << " bytes\n";
    out << "inference budget on full model: " << r.full_inference.total_bytes
        << " bytes\n";
    out << "\ncorrection report:\n";
    write_correction_report(r.correction, out);
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    namespace fs = std::filesystem;

    SyntheticTask task = guarded("generate-task", [&] { return generate_task(cfg.task); });

    const bool emit = !out_dir.empty();
    fs::path dir(out_dir);
    if (emit) {
        fs::create_directories(dir / "task");
        guarded("write-task", [&] {
            save_checkpoint(task.base, (dir / "task" / "base_model.ckpt").string());
            save_dataset(task.train, (dir / "task" / "train.bin").string());
            save_dataset(task.eval, (dir / "task" / "eval.bin").string());
            save_dataset(task.calib, (dir / "task" / "calib.bin").string());
            return 0;
        });
    }

    Network emulator = stage_compress(task.base, task.calib, cfg.ratio);
    TrainResult trained = stage_finetune(emulator, task.train, cfg.train);
    Network naive = stage_merge(transfer_lora(trained.net, task.base));
    auto [corrected_net, correction] = stage_correct(task.base, trained.net, cfg.train.lambda);
    Network merged = stage_merge(corrected_net);

    ExperimentReport report;
    report.curve = trained.curve;
    report.correction = correction;
    report.zero_shot.name = "zero_shot";
    report.emulator.name = "emulator";
    report.naive_transfer.name = "naive_transfer";
    report.corrected_transfer.name = "corrected_transfer";

    const Network* nets[4] = {&task.base, &trained.net, &naive, &merged};
    ArmResult* arms[4] = {&report.zero_shot, &report.emulator, &report.naive_transfer,
                          &report.corrected_transfer};
    auto eval_arm = [&](int i) { arms[i]->eval_loss = stage_eval(*nets[i], task.eval); };
    if (cfg.parallel_arms) {
        std::vector<std::thread> workers;
        for (int i = 0; i < 4; ++i) workers.emplace_back(eval_arm, i);
        for (std::thread& w : workers) w.join();
    } else {
        for (int i = 0; i < 4; ++i) eval_arm(i);
    }

    report.zero_shot.budget = account_memory(task.base, cfg.train, MemoryMode::inference);
    report.emulator.budget = account_memory(trained.net, cfg.train, MemoryMode::finetune);
    report.naive_transfer.budget = account_memory(naive, cfg.train, MemoryMode::inference);
    report.corrected_transfer.budget =
        account_memory(merged, cfg.train, MemoryMode::inference);
    report.emulator_finetune = report.emulator.budget;
    report.full_inference = report.zero_shot.budget;

    if (emit) {
        guarded("write-report", [&] {
            save_checkpoint(emulator, (dir / "emulator.ckpt").string());
            save_checkpoint(trained.net, (dir / "finetuned.ckpt").string());
            save_checkpoint(corrected_net, (dir / "corrected.ckpt").string());
            save_checkpoint(merged, (dir / "merged.ckpt").string());
            write_curve_csv(trained.curve, (dir / "train_curve.csv").string());
            for (const ArmResult* arm : arms) write_arm_csv(dir, *arm);
            std::ofstream crep(dir / "correction_report.txt");
            write_correction_report(correction, crep);
            std::ofstream rep(dir / "report.txt");
            write_report_txt(report, cfg, rep);
            if (!rep) throw std::runtime_error("cannot write report to " + out_dir);
            return 0;
        });
    }
    return report;
}

std::vector<LambdaPoint> sweep_lambda(const ExperimentConfig& cfg,
                                      const std::vector<double>& lambdas) {
    if (lambdas.empty()) throw std::invalid_argument("sweep_lambda: no values");
    SyntheticTask task = guarded("generate-task", [&] { return generate_task(cfg.task); });
    Network emulator = stage_compress(task.base, task.calib, cfg.ratio);
    TrainResult trained = stage_finetune(emulator, task.train, cfg.train);

    std::vector<LambdaPoint> points;
    points.reserve(lambdas.size());
    for (double lambda : lambdas) {
        auto [corrected_net, rep] = stage_correct(task.base, trained.net, lambda);
        (void)rep;
        Network merged = stage_merge(corrected_net);
        points.push_back({lambda, stage_eval(merged, task.eval)});
    }
    return points;
}

std::vector<CalibPoint> sweep_calibration(const ExperimentConfig& cfg,
                                          const std::vector<std::size_t>& sizes) {
    if (sizes.empty()) throw std::invalid_argument("sweep_calibration: no values");
    SyntheticTask task = guarded("generate-task", [&] { return generate_task(cfg.task); });
    for (std::size_t n : sizes) {
        if (n < 1 || n > task.calib.rows()) {
            throw std::invalid_argument(
                "sweep_calibration: size " + std::to_string(n) +
                " outside the calibration split (have " +
                std::to_string(task.calib.rows()) + " rows; raise task n_calib)");
        }
    }

    // Reference activations: the full calibration split pushed through the
    // original model once.
    Tape reference;
    forward(task.base, task.calib.inputs, ForwardMode::capture, &reference);

    std::vector<CalibPoint> points;
    for (std::size_t n : sizes) {
        Dataset subset;
        subset.inputs = Matrix(n, task.calib.inputs.cols());
        subset.targets = Matrix(n, task.calib.targets.cols());
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < subset.inputs.cols(); ++j) {
                subset.inputs(i, j) = task.calib.inputs(i, j);
            }
            for (std::size_t j = 0; j < subset.targets.cols(); ++j) {
                subset.targets(i, j) = task.calib.targets(i, j);
            }
        }

        Network emulator = stage_compress(task.base, subset, cfg.ratio);
        double err_sq = 0.0;
        double ref_sq = 0.0;
        for (std::size_t l = 0; l < emulator.layers.size(); ++l) {
            if (!emulator.layers[l].factorized()) continue;
            const Matrix& x = reference.inputs[l];
            const Matrix full_out = matmul(x, task.base.layers[l].full_weight());
            const FactorizedWeight& f = emulator.layers[l].factorized_weight();
            const Matrix emu_out = matmul(matmul(x, f.w_u), f.w_v);
            const double e = frobenius_norm(subtract(full_out, emu_out));
            const double r = frobenius_norm(full_out);
            err_sq += e * e;
            ref_sq += r * r;
        }
        const double weighted_error = ref_sq > 0.0 ? std::sqrt(err_sq / ref_sq) : 0.0;

        TrainResult trained = stage_finetune(emulator, task.train, cfg.train);
        auto [corrected_net, rep] = stage_correct(task.base, trained.net, cfg.train.lambda);
        (void)rep;
        const double eval_loss = stage_eval(stage_merge(corrected_net), task.eval);
        points.push_back({n, weighted_error, eval_loss});
    }
    return points;
}

void write_lambda_csv(const std::vector<LambdaPoint>& points, std::ostream& out) {
    out << "lambda,eval_metric\n";
    for (const LambdaPoint& p : points) {
        out << format_g17(p.lambda) << "," << format_g17(p.eval_metric) << "\n";
    }
}

void write_calibration_csv(const std::vector<CalibPoint>& points, std::ostream& out) {
    out << "n_calib,weighted_error,eval_loss\n";
    for (const CalibPoint& p : points) {
        out << p.n_calib << "," << format_g17(p.weighted_error) << ","
            << format_g17(p.eval_loss) << "\n";
    }
}

}  // namespace emloc
