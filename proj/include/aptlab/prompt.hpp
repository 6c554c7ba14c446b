#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "aptlab/autodiff.hpp"
#include "aptlab/model.hpp"
#include "aptlab/tensor.hpp"

namespace aptlab {

enum class ContextMode : std::uint8_t { UC = 0, CSC = 1 };
enum class ClassPosition : std::uint8_t { Front = 0, Middle = 1, End = 2 };

std::string to_string(ContextMode m);
std::string to_string(ClassPosition p);

// Learnable soft prompt: M context vectors (shared for UC, per-class for CSC)
// around a frozen class embedding.
struct PromptContext {
    ContextMode mode = ContextMode::UC;
    int context_len = 16;              // M
    ClassPosition position = ClassPosition::End;
    Tensor vectors;                    // UC: [M,D]; CSC: [C*M,D] row-major by class
    Tensor class_embeddings;           // [C,D], frozen

    int num_classes() const { return class_embeddings.shape.dims[0]; }
    int embed_dim() const { return class_embeddings.shape.dims[1]; }
    int param_count() const { return static_cast<int>(vectors.numel()); }

    // Row range of `vectors` holding the context of class j.
    std::pair<int, int> class_rows(int j) const;

    // Index of the class embedding inside the assembled M+1 sequence.
    int class_slot() const;

    static PromptContext init(ContextMode mode, int m, ClassPosition pos,
                              const Tensor& class_embeddings, std::uint64_t seed);

    // Token-vector sequence [M+1, D] for class j.
    Tensor assemble(int j) const;
    // Graph version: context rows come from `ctx_leaf` (the trainable leaf,
    // shaped like `vectors`), the class embedding enters as a constant.
    NodeId assemble(DiffGraph& g, NodeId ctx_leaf, int j) const;

    // All C prompts encoded through the model's text branch (one text pass).
    Tensor encode_all(const DualEncoderModel& model) const;
    NodeId encode_all(DiffGraph& g, const DualEncoderModel& model, NodeId ctx_leaf) const;

    void save(const std::string& path) const;
    static PromptContext load(const std::string& path, const Tensor& class_embeddings);
};

// Hand-specified token prompt; `tokens` holds vocabulary ids with exactly one
// kClassSlot entry marking where the class embedding goes.
struct HandPrompt {
    static constexpr int kClassSlot = -1;
    std::vector<int> tokens;
    std::string label;  // display name for reports

    int class_slot() const;
    Tensor assemble(const DualEncoderModel& model, const Tensor& class_embeddings, int j) const;
    Tensor encode_all(const DualEncoderModel& model, const Tensor& class_embeddings) const;
};

struct NearestWord {
    int word_id = 0;
    double distance = 0.0;
};

// Nearest vocabulary entry (Euclidean) per context vector; ties -> lowest id.
std::vector<NearestWord> nearest_words(const PromptContext& ctx, const Tensor& vocab);

std::string nearest_words_json(const PromptContext& ctx, const Tensor& vocab,
                               const std::vector<std::string>& vocab_names);

}  // namespace aptlab
