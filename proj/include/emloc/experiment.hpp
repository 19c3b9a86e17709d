#pragma once

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "emloc/config.hpp"
#include "emloc/correction.hpp"
#include "emloc/dataset.hpp"
#include "emloc/model.hpp"
#include "emloc/task.hpp"
#include "emloc/train.hpp"

namespace emloc {

/// Thrown when a pipeline stage fails; the message names the stage.
class StageError : public std::runtime_error {
public:
    StageError(const std::string& stage, const std::string& what)
        : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(stage) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

/// Pipeline stages, shared verbatim by the CLI subcommands and
/// run_experiment so both routes produce identical outputs for a seed.
Network stage_compress(const Network& model, const Dataset& calib, double ratio);
TrainResult stage_finetune(const Network& model, const Dataset& data,
                           const TrainConfig& cfg);
std::pair<Network, NetworkCorrectionReport> stage_correct(const Network& full,
                                                          const Network& emulator_ft,
                                                          double lambda);
Network stage_merge(const Network& net);
double stage_eval(const Network& net, const Dataset& data);

/// Copies LoRA modules from one network onto another, uncorrected.
Network transfer_lora(const Network& from, const Network& to);

struct ExperimentConfig {
    TaskConfig task;
    double ratio = 0.25;
    TrainConfig train;
    bool parallel_arms = false;

    /// Defaults tuned for the synthetic task (the TrainConfig type defaults
    /// target much larger models and barely move this one).
    static ExperimentConfig default_synthetic();
};

ExperimentConfig experiment_config_from(const Config& cfg);

struct ArmResult {
    std::string name;
    double eval_loss = 0.0;
    MemoryBudget budget;
};

struct ExperimentReport {
    ArmResult zero_shot;          // original model, no fine-tuning
    ArmResult emulator;           // emulator + LoRA, evaluated directly
    ArmResult naive_transfer;     // LoRA merged into the full model uncorrected
    ArmResult corrected_transfer; // corrected LoRA merged into the full model
    std::vector<CurvePoint> curve;
    NetworkCorrectionReport correction;
    MemoryBudget emulator_finetune;  // training-time budget on the emulator
    MemoryBudget full_inference;     // inference budget of the full model
};

/// Runs the four arms. When out_dir is non-empty, writes the generated task
/// (base checkpoint + dataset splits), every intermediate checkpoint, the
/// loss curve, per-arm CSVs and a text report into it.
ExperimentReport run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

struct LambdaPoint {
    double lambda;
    double eval_metric;
};

/// Correct/merge/eval at each lambda, reusing one fine-tuning run.
std::vector<LambdaPoint> sweep_lambda(const ExperimentConfig& cfg,
                                      const std::vector<double>& lambdas);

struct CalibPoint {
    std::size_t n_calib;
    double weighted_error;  // relative activation-weighted reconstruction error
    double eval_loss;       // corrected-transfer eval loss at this size
};

/// Rebuilds the emulator from prefixes of one calibration split. The
/// weighted error of every emulator is measured against the activations of
/// the full split captured on the original model.
std::vector<CalibPoint> sweep_calibration(const ExperimentConfig& cfg,
                                          const std::vector<std::size_t>& sizes);

void write_lambda_csv(const std::vector<LambdaPoint>& points, std::ostream& out);
void write_calibration_csv(const std::vector<CalibPoint>& points, std::ostream& out);

}  // namespace emloc
