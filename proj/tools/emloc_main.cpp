// emloc: build a low-rank emulator of a network, fine-tune LoRA on it,
// correct the modules for the emulator/full-model misalignment and merge
// them back for inference.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "emloc/checkpoint.hpp"
#include "emloc/config.hpp"
#include "emloc/dataset.hpp"
#include "emloc/emulator.hpp"
#include "emloc/experiment.hpp"
#include "emloc/train.hpp"

namespace {

using namespace emloc;

std::string g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

int run(int argc, char** argv) {
    CLI::App app{"EMLoC pipeline: compress, finetune, correct, merge, eval"};
    app.require_subcommand(1);

    // compress
    auto* compress = app.add_subcommand("compress", "build an emulator checkpoint");
    std::string c_model, c_calib, c_out;
    double c_ratio = 0.25;
    compress->add_option("--model", c_model, "input checkpoint")->required();
    compress->add_option("--calib", c_calib, "calibration dataset")->required();
    compress->add_option("--ratio", c_ratio, "kept parameter fraction")->required();
    compress->add_option("--out", c_out, "output checkpoint")->required();
    compress->callback([&] {
        Network net = load_checkpoint(c_model);
        Dataset calib = load_dataset(c_calib);
        save_checkpoint(stage_compress(net, calib, c_ratio), c_out);
    });

    // finetune
    auto* finetune_cmd = app.add_subcommand("finetune", "LoRA fine-tuning");
    std::string f_model, f_data, f_out, f_curve, f_schedule = "cosine";
    TrainConfig f_cfg;
    finetune_cmd->add_option("--model", f_model, "input checkpoint")->required();
    finetune_cmd->add_option("--data", f_data, "training dataset")->required();
    finetune_cmd->add_option("--rank", f_cfg.lora_rank, "LoRA rank");
    finetune_cmd->add_option("--lr", f_cfg.lr, "learning rate");
    finetune_cmd->add_option("--iters", f_cfg.iterations, "iterations");
    finetune_cmd->add_option("--seed", f_cfg.seed, "seed for init and batches");
    finetune_cmd->add_option("--out", f_out, "output checkpoint")->required();
    finetune_cmd->add_option("--batch", f_cfg.batch_size, "batch size");
    finetune_cmd->add_option("--schedule", f_schedule, "cosine|constant");
    finetune_cmd->add_option("--curve", f_curve, "write step,lr,loss CSV here");
    finetune_cmd->callback([&] {
        if (f_schedule == "cosine") {
            f_cfg.schedule = LrSchedule::cosine;
        } else if (f_schedule == "constant") {
            f_cfg.schedule = LrSchedule::constant;
        } else {
            throw std::runtime_error("--schedule must be cosine or constant");
        }
        Network net = load_checkpoint(f_model);
        Dataset data = load_dataset(f_data);
        TrainResult result = stage_finetune(net, data, f_cfg);
        save_checkpoint(result.net, f_out);
        if (!f_curve.empty()) write_curve_csv(result.curve, f_curve);
        std::cout << "final_loss=" << g17(result.curve.back().loss) << "\n";
    });

    // correct
    auto* correct = app.add_subcommand("correct", "correct emulator-trained LoRA");
    std::string k_full, k_emulator, k_out, k_report;
    double k_lambda = 3.0;
    correct->add_option("--full", k_full, "full-model checkpoint")->required();
    correct->add_option("--emulator", k_emulator, "fine-tuned emulator checkpoint")
        ->required();
    correct->add_option("--lambda", k_lambda, "row-norm clamp multiple")->required();
    correct->add_option("--out", k_out, "output checkpoint")->required();
    correct->add_option("--report", k_report, "per-layer correction report path");
    correct->callback([&] {
        Network full = load_checkpoint(k_full);
        Network emulator_ft = load_checkpoint(k_emulator);
        auto [net, report] = stage_correct(full, emulator_ft, k_lambda);
        save_checkpoint(net, k_out);
        if (!k_report.empty()) {
            std::ofstream out(k_report);
            if (!out) throw std::runtime_error("cannot open report path " + k_report);
            for (const auto& [layer, rep] : report.layers) {
                out << "layer=" << layer << " rows_clamped=" << rep.rows_clamped
                    << " max_row_correction_ratio=" << g17(rep.max_row_correction_ratio)
                    << " residual=" << g17(rep.residual) << "\n";
            }
            out << "layers_corrected=" << report.layers.size() << "\n";
        }
    });

    // merge
    auto* merge = app.add_subcommand("merge", "merge LoRA into full weights");
    std::string m_model, m_out;
    merge->add_option("--model", m_model, "input checkpoint")->required();
    merge->add_option("--out", m_out, "output checkpoint")->required();
    merge->callback([&] { save_checkpoint(stage_merge(load_checkpoint(m_model)), m_out); });

    // eval
    auto* eval = app.add_subcommand("eval", "mean-squared eval loss");
    std::string e_model, e_data;
    eval->add_option("--model", e_model, "checkpoint")->required();
    eval->add_option("--data", e_data, "dataset")->required();
    eval->callback([&] {
        const double v = stage_eval(load_checkpoint(e_model), load_dataset(e_data));
        std::cout << "eval_loss=" << g17(v) << "\n";
    });

    // experiment
    auto* experiment = app.add_subcommand("experiment", "run all four arms");
    std::string x_config, x_out;
    experiment->add_option("--config", x_config, "key=value config file")->required();
    experiment->add_option("--out", x_out, "output directory")->required();
    experiment->callback([&] {
        ExperimentConfig cfg = experiment_config_from(Config::parse_file(x_config));
        ExperimentReport report = run_experiment(cfg, x_out);
        for (const ArmResult* arm : {&report.zero_shot, &report.emulator,
                                     &report.naive_transfer, &report.corrected_transfer}) {
            std::cout << "arm=" << arm->name << " eval_loss=" << g17(arm->eval_loss)
                      << " total_bytes=" << arm->budget.total_bytes << "\n";
        }
        std::cout << "emulator_finetune_bytes=" << report.emulator_finetune.total_bytes
                  << " full_inference_bytes=" << report.full_inference.total_bytes << "\n";
    });

    // sweep-lambda
    auto* sweep_l = app.add_subcommand("sweep-lambda", "correction strength study");
    std::string sl_config, sl_values;
    sweep_l->add_option("--config", sl_config, "key=value config file")->required();
    sweep_l->add_option("--values", sl_values, "comma-separated lambda values")->required();
    sweep_l->callback([&] {
        ExperimentConfig cfg = experiment_config_from(Config::parse_file(sl_config));
        write_lambda_csv(sweep_lambda(cfg, parse_double_list(sl_values)), std::cout);
    });

    // sweep-calib
    auto* sweep_c = app.add_subcommand("sweep-calib", "calibration size study");
    std::string sc_config, sc_values;
    sweep_c->add_option("--config", sc_config, "key=value config file")->required();
    sweep_c->add_option("--values", sc_values, "comma-separated sample counts")->required();
    sweep_c->callback([&] {
        ExperimentConfig cfg = experiment_config_from(Config::parse_file(sc_config));
        write_calibration_csv(sweep_calibration(cfg, parse_size_list(sc_values)),
                              std::cout);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
