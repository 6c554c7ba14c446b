#pragma once

#include <cstdint>
#include <vector>

#include "aptlab/model.hpp"
#include "aptlab/tensor.hpp"

namespace aptlab {

struct AttackSpec {
    double eps = 4.0 / 255.0;
    int steps = 100;             // K
    double alpha = (4.0 / 255.0) / 4.0;
    double alpha_prime = 0.01;   // text step size, used when perturb_text
    bool perturb_text = false;
    bool random_start = false;
    std::uint64_t seed = 0;

    void validate() const;

    static AttackSpec evaluation(double eps, std::uint64_t seed);  // K=100, alpha=eps/4, random start
    static AttackSpec training(double eps, std::uint64_t seed);    // K=3, alpha=2*eps/3
};

struct AdversarialBatch {
    Tensor images;        // [B,Dx], clamped to [0,1]
    Tensor deltas;        // [B,Dx], ||.||inf <= eps
    double final_loss = 0.0;  // mean loss from the last attack iteration
};

// lInf PGD against the cosine cross-entropy loss, prompt features fixed.
AdversarialBatch attack(const DualEncoderModel& model, const Tensor& images,
                        const std::vector<int>& labels, const Tensor& prompt_features,
                        const AttackSpec& spec);

// Token-sequence variant; required for perturb_text, where the prompt
// embeddings are jointly driven up the loss gradient (unbounded delta').
AdversarialBatch attack(const DualEncoderModel& model, const Tensor& images,
                        const std::vector<int>& labels,
                        const std::vector<Tensor>& prompt_token_seqs, const AttackSpec& spec);

struct PredictionRecord {
    int example_id = 0;
    int label = 0;
    int clean_pred = 0;
    int adv_pred = 0;
};

// Fraction of examples still classified correctly (under `infer_features`)
// after attacking with `attack_features`.
double robust_accuracy(const DualEncoderModel& model, const Tensor& images,
                       const std::vector<int>& labels, const Tensor& infer_features,
                       const Tensor& attack_features, const AttackSpec& spec,
                       std::vector<PredictionRecord>* records = nullptr, int batch_size = 32);

double clean_accuracy(const DualEncoderModel& model, const Tensor& images,
                      const std::vector<int>& labels, const Tensor& infer_features);

}  // namespace aptlab
