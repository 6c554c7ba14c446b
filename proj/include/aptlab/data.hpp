#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aptlab/model.hpp"
#include "aptlab/tensor.hpp"

namespace aptlab {

struct SyntheticSpec {
    int num_classes = 8;
    int input_dim = 64;
    double noise_sigma = 0.08;
    int train_per_class = 64;
    int test_per_class = 64;
    double shift_offset = 0.0;      // per-dim mean offset magnitude
    double noise_multiplier = 1.0;  // scales noise_sigma
    std::uint64_t seed = 7;
};

struct Dataset {
    SyntheticSpec spec;
    Tensor means;               // [C,Dx], generator parameters (kept for shift())
    Tensor train_images;        // [Ntr,Dx] in [0,1]
    std::vector<int> train_labels;
    Tensor test_images;         // [Nte,Dx]
    std::vector<int> test_labels;
    std::vector<std::string> class_names;
    std::vector<int> class_token_ids;   // per class, into the model vocabulary
    bool novel_classes = false;         // cross-dataset target marker

    int num_classes() const { return spec.num_classes; }
    int train_size() const { return static_cast<int>(train_labels.size()); }
    int test_size() const { return static_cast<int>(test_labels.size()); }

    Tensor class_embeddings(const DualEncoderModel& model) const;

    void save(const std::string& path) const;  // .aptd + .lexicon.json sidecar
    static Dataset load(const std::string& path);
};

// Deterministic synthetic Gaussian-cluster task; throws if the generated task
// fails the 90% linear-separability gate.
Dataset generate(const SyntheticSpec& spec, int vocab_size);

// Least-squares one-vs-all linear classifier accuracy, the separability gate.
double linear_separability(const Dataset& ds);

struct ShotSample {
    int shots = 0;
    std::vector<int> indices;  // into train set, exactly min(N, class size) per class
};

ShotSample sample_shots(const Dataset& ds, int n, std::uint64_t seed);

// Same classes, offset means and scaled noise; regenerated from stored means.
Dataset shift(const Dataset& ds, double offset, double noise_multiplier, std::uint64_t seed);

// Toy lexicon: curated template words first, class tokens in the top slots.
std::vector<std::string> vocabulary_names(int vocab_size, int num_classes);
int class_token_id(int vocab_size, int num_classes, int j);

}  // namespace aptlab
