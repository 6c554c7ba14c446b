#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "aptlab/attack.hpp"
#include "aptlab/data.hpp"
#include "aptlab/model.hpp"
#include "aptlab/prompt.hpp"

namespace aptlab {

enum class Strategy { Constant, OnTheFly, Perturbed };

std::string to_string(Strategy s);

struct TrainConfig {
    Strategy strategy = Strategy::OnTheFly;
    int epochs = 50;
    int batch_size = 32;
    double lr = 0.002;               // cosine-annealed SGD
    AttackSpec adversary = AttackSpec::training(4.0 / 255.0, 0);
    std::uint64_t seed = 0;
    HandPrompt anchor;               // attack prompt for Strategy::Constant
    int eval_subset = 128;           // test examples for per-epoch metrics (0 = skip)

    void validate() const;
};

// Per-example adversarial perturbations under Strategy::Constant. Entries are
// written once and reused for the rest of the run.
struct PerturbationCache {
    std::unordered_map<int, Tensor> deltas;  // example id -> [Dx] perturbation
    Tensor anchor_features;                  // [C,D]
    bool warmed = false;

    void warm(const DualEncoderModel& model, const Tensor& class_embeddings,
              const HandPrompt& anchor);
};

struct Batch {
    Tensor images;            // [B,Dx]
    std::vector<int> labels;
    std::vector<int> ids;     // dataset train indices, the cache key
};

struct IterationMetrics {
    double loss = 0.0;
    double lr = 0.0;
};

struct EpochMetrics {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double clean_acc = 0.0;
    double robust_acc = 0.0;
};

struct TrainResult {
    PromptContext context;
    std::vector<EpochMetrics> history;
};

// One SGD step on the context vectors (Constant / OnTheFly / Perturbed
// adversary, update always against the clean prompt). Encoders stay frozen.
IterationMetrics train_one_iteration(PromptContext& ctx, const DualEncoderModel& model,
                                     const Batch& batch, const TrainConfig& cfg, double lr,
                                     PerturbationCache* cache);

TrainResult train(PromptContext ctx, const DualEncoderModel& model, const Dataset& ds,
                  const ShotSample& shots, const TrainConfig& cfg);

std::string history_csv(const std::vector<EpochMetrics>& history);

// Predicted encoder passes for a single training iteration; measured counters
// must match these exactly.
struct CostPrediction {
    std::int64_t image_fwd = 0;
    std::int64_t image_bwd = 0;
    std::int64_t text_fwd = 0;
    std::int64_t text_bwd = 0;
};

CostPrediction cost_report(const TrainConfig& cfg, bool cache_warm);

double cosine_lr(double lr0, int step, int total_steps);

Batch make_batch(const Dataset& ds, const std::vector<int>& ids);

}  // namespace aptlab
