#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "aptlab/attack.hpp"
#include "aptlab/baselines.hpp"
#include "aptlab/data.hpp"
#include "aptlab/model.hpp"
#include "aptlab/prompt.hpp"
#include "aptlab/train.hpp"

namespace aptlab {

// Raised when a method cannot apply to a target by construction, e.g. a
// class-specific context or a linear head evaluated on novel classes.
struct NotApplicableError : std::runtime_error {
    explicit NotApplicableError(const std::string& what) : std::runtime_error(what) {}
};

struct LabeledPrompt {
    std::string label;
    Tensor features;  // [C,D]
};

// Robust accuracy as a function of (inference prompt row, attack prompt col).
struct RobustnessMatrix {
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
    Tensor cells;  // [R,C]

    double row_min(int r) const;
    // cell minus its row minimum; 0 marks the most damaging attack prompt
    double relative_delta(int r, int c) const;
    bool diagonal_is_row_min(int r) const;

    std::string to_csv() const;
    static RobustnessMatrix from_csv(const std::string& csv);
};

RobustnessMatrix prompt_sensitivity_matrix(const DualEncoderModel& model, const Dataset& ds,
                                           const std::vector<LabeledPrompt>& prompts,
                                           const AttackSpec& spec);

// Fig-3-style probe set: 4 templated hand prompts plus 2 random-token prompts.
std::vector<LabeledPrompt> probe_prompts(const DualEncoderModel& model, const Dataset& ds,
                                         std::uint64_t seed);

struct TransferReport {
    double matched = 0.0;                 // learned prompt attacks itself
    std::vector<LabeledPrompt> probes;    // labels only meaningful here
    std::vector<double> transfer;         // per probe, inference on the learned prompt
};

TransferReport transfer_eval(const DualEncoderModel& model, const Tensor& learned_features,
                             const std::vector<LabeledPrompt>& probes, const Dataset& ds,
                             const AttackSpec& spec);

enum class Method { AptUC, AptCSC, AVP, PAFT, HEP };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct SweepConfig {
    TrainConfig train;                       // APT methods
    BaselineConfig baseline;                 // AVP / PAFT
    AttackSpec eval_attack = AttackSpec::evaluation(4.0 / 255.0, 0);
    HandPrompt hand;                         // HEP inference, AVP prompt, constant anchor
    int context_len = 16;
    ClassPosition position = ClassPosition::End;
};

struct CellMetrics {
    int shots = 0;
    std::uint64_t seed = 0;
    double clean_acc = 0.0;
    double robust_acc = 0.0;
};

struct ShotSummary {
    int shots = 0;
    double clean_mean = 0.0, clean_sd = 0.0;
    double robust_mean = 0.0, robust_sd = 0.0;
};

struct ExperimentReport {
    std::string method;
    std::string config_json;                 // resolved snapshot
    std::vector<std::uint64_t> seeds;
    std::vector<CellMetrics> cells;
    std::vector<ShotSummary> summary;
    double runtime_seconds = 0.0;

    std::string to_json() const;
};

ExperimentReport shot_sweep(Method method, const DualEncoderModel& model, const Dataset& ds,
                            const std::vector<int>& shots_list,
                            const std::vector<std::uint64_t>& seeds, const SweepConfig& cfg);

// Single (method, shots, seed) cell: train on the source set, evaluate on the
// full test set.
CellMetrics evaluate_cell(Method method, const DualEncoderModel& model, const Dataset& ds,
                          int shots, std::uint64_t seed, const SweepConfig& cfg);

struct ShiftMetrics {
    double clean_acc = 0.0;
    double robust_acc = 0.0;
};

// Source-trained context on a shifted or novel-class target dataset. CSC on a
// novel-class target is rejected.
ShiftMetrics shift_eval(const DualEncoderModel& model, const PromptContext& ctx,
                        const Dataset& target, const AttackSpec& spec);

// PAFT head on a shifted target; novel classes are rejected.
ShiftMetrics shift_eval(const DualEncoderModel& model, const LinearHead& head,
                        const Dataset& target, const AttackSpec& spec);

std::string predictions_log(const std::vector<PredictionRecord>& records);

// Worker cap for independent cells: APT_LAB_THREADS, default 1.
int eval_threads();

}  // namespace aptlab
