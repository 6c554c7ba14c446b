#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aptlab/attack.hpp"
#include "aptlab/data.hpp"
#include "aptlab/model.hpp"
#include "aptlab/train.hpp"

namespace aptlab {

// Learnable additive image perturbation, applied then clamped to [0,1] before
// encoding. Classification still goes through a fixed hand prompt.
struct VisualPrompt {
    Tensor phi;  // [Dx]

    void save(const std::string& path) const;  // "APTV"
    static VisualPrompt load(const std::string& path);
};

// Linear classifier over the frozen image encoder; the text branch is unused.
struct LinearHead {
    Tensor weight;  // [C,D]
    Tensor bias;    // [C]

    static LinearHead zeros(int num_classes, int embed_dim);
    std::vector<int> predict(const DualEncoderModel& model, const Tensor& images) const;

    void save(const std::string& path) const;  // "APTL"
    static LinearHead load(const std::string& path);
};

struct BaselineConfig {
    int epochs = 50;
    int batch_size = 32;
    double lr = 0.1;
    AttackSpec adversary = AttackSpec::training(4.0 / 255.0, 0);
    std::uint64_t seed = 0;

    void validate() const;
};

// SGD on the joint objective L(x + phi) + L(x_adv + phi); the adversary is
// generated against the bare image under the fixed hand prompt.
VisualPrompt train_avp(const DualEncoderModel& model, const Dataset& ds, const ShotSample& shots,
                       const HandPrompt& prompt, const BaselineConfig& cfg);

double avp_clean_accuracy(const DualEncoderModel& model, const VisualPrompt& vp,
                          const Tensor& images, const std::vector<int>& labels,
                          const Tensor& features);

// White-box PGD against the phi-prompted classifier.
double avp_robust_accuracy(const DualEncoderModel& model, const VisualPrompt& vp,
                           const Tensor& images, const std::vector<int>& labels,
                           const Tensor& features, const AttackSpec& spec);

// Adversarial training of the head on examples attacking encoder + head.
// Step decay: lr * 0.1 at 1/4 and again at 1/2 of the epochs.
LinearHead train_paft(const DualEncoderModel& model, const Dataset& ds, const ShotSample& shots,
                      const BaselineConfig& cfg);

double head_clean_accuracy(const DualEncoderModel& model, const LinearHead& head,
                           const Tensor& images, const std::vector<int>& labels);

double head_robust_accuracy(const DualEncoderModel& model, const LinearHead& head,
                            const Tensor& images, const std::vector<int>& labels,
                            const AttackSpec& spec);

// Prompt tuning on clean images: the adversarial loop with a zero budget.
TrainResult train_standard_prompt(PromptContext ctx, const DualEncoderModel& model,
                                  const Dataset& ds, const ShotSample& shots, TrainConfig cfg);

double paft_step_lr(double lr0, int epoch, int total_epochs);

}  // namespace aptlab
