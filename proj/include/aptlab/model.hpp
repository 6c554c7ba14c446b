#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aptlab/autodiff.hpp"
#include "aptlab/tensor.hpp"

namespace aptlab {

struct ModelConfig {
    int input_dim = 64;     // Dx
    int hidden_dim = 64;    // H
    int embed_dim = 32;     // D
    int vocab_size = 64;    // V
    int num_classes = 8;    // C
    double temperature = 0.07;
    std::uint64_t seed = 42;
};

// Frozen miniature dual encoder: two-layer tanh perceptrons for the image and
// (mean-pooled) text branch plus a vocabulary embedding table. Weights are
// immutable after construction; only prompt contexts elsewhere are learnable.
class DualEncoderModel {
public:
    static DualEncoderModel random_init(const ModelConfig& cfg);

    int input_dim() const { return cfg_.input_dim; }
    int hidden_dim() const { return cfg_.hidden_dim; }
    int embed_dim() const { return cfg_.embed_dim; }
    int vocab_size() const { return cfg_.vocab_size; }
    int num_classes() const { return cfg_.num_classes; }
    double temperature() const { return cfg_.temperature; }

    const Tensor& vocab() const { return vocab_; }
    Tensor vocab_entry(int token_id) const;

    // Graph-building encoders. One call = one batch-level encoder application;
    // a counter hook at the output tracks forward/backward passes.
    NodeId encode_image(DiffGraph& g, NodeId images) const;                 // [B,Dx] -> [B,D]
    NodeId encode_text(DiffGraph& g, NodeId tokens) const;                  // [L,D] -> [D]
    NodeId encode_text_batch(DiffGraph& g, const std::vector<NodeId>& token_seqs) const;  // -> [C,D]

    // Value-level conveniences (run a throwaway graph).
    Tensor encode_image(const Tensor& images) const;
    Tensor encode_text(const Tensor& tokens) const;
    Tensor encode_text_batch(const std::vector<Tensor>& token_seqs) const;

    static double similarity(const Tensor& zv, const Tensor& zt);
    std::vector<double> class_probabilities(const Tensor& image, const Tensor& text_features) const;
    int predict(const Tensor& image, const Tensor& text_features) const;
    std::vector<int> predict_batch(const Tensor& images, const Tensor& text_features) const;

    // Cross-entropy loss node over cosine similarities scaled by 1/tau.
    NodeId loss(DiffGraph& g, NodeId image_features, NodeId text_features,
                const std::vector<int>& labels) const;

    std::uint64_t weight_checksum() const;

    PassCounter& image_counter() const { return image_counter_; }
    PassCounter& text_counter() const { return text_counter_; }

    void save(const std::string& path) const;
    static DualEncoderModel load(const std::string& path);

private:
    DualEncoderModel() = default;

    ModelConfig cfg_;
    Tensor w1_, b1_, w2_, b2_;  // image branch
    Tensor u1_, c1_, u2_, c2_;  // text branch
    Tensor vocab_;              // [V,D]
    mutable PassCounter image_counter_;
    mutable PassCounter text_counter_;
};

}  // namespace aptlab
