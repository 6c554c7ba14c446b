#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "aptlab/tensor.hpp"

namespace aptlab {

// Forward/backward pass counters for one encoder. Incremented by counter-hook
// nodes placed at the output of each encoder application; one increment per
// batch-level application, not per example.
struct PassCounter {
    std::int64_t fwd = 0;
    std::int64_t bwd = 0;
    void reset() { fwd = 0; bwd = 0; }
};

enum class OpKind {
    Leaf,
    Add,
    Sub,
    Mul,          // elementwise
    MatMul,       // [m,k] x [k,n]
    AddRowVec,    // [m,n] + [n], broadcast over rows
    Tanh,
    L2Norm,       // any shape -> scalar
    Dot,          // two vectors -> scalar
    Cosine,       // two vectors -> scalar
    CosineRows,   // [m,d], [c,d] -> [m,c] pairwise cosine
    Softmax,      // rowwise
    Log,
    Nll,          // [m,c] probabilities + labels -> [m] of -log p[y]
    Mean,         // all elements -> scalar
    MeanRows,     // [m,n] -> [n], mean over rows
    ConcatRows,
    SliceRows,
    Clamp,
    Sign,
    Scale,        // multiply by constant
    Counter,      // identity with pass-counter side effect
};

using NodeId = int;

struct Node {
    OpKind op = OpKind::Leaf;
    std::vector<NodeId> in;
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;
    bool requires_grad = false;
    double a0 = 0.0, a1 = 0.0;        // op attributes (clamp bounds, scale, slice range)
    std::vector<int> labels;          // Nll targets
    PassCounter* counter = nullptr;   // Counter op only
};

// Dynamic computation graph. Node values are computed eagerly at creation;
// forward() re-evaluates everything after set_leaf(). backward() accumulates
// gradients into every node that transitively depends on a grad-enabled leaf.
class DiffGraph {
public:
    NodeId leaf(const Tensor& t, bool requires_grad = false);
    void set_leaf(NodeId id, const Tensor& t);

    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId matmul(NodeId a, NodeId b);
    NodeId add_rowvec(NodeId a, NodeId v);
    NodeId tanh_(NodeId a);
    NodeId l2norm(NodeId a);
    NodeId dot(NodeId a, NodeId b);
    NodeId cosine(NodeId a, NodeId b);
    NodeId cosine_rows(NodeId a, NodeId b);
    NodeId softmax(NodeId a);
    NodeId log_(NodeId a);
    NodeId nll(NodeId probs, std::vector<int> labels);
    NodeId mean(NodeId a);
    NodeId mean_rows(NodeId a);
    NodeId concat_rows(const std::vector<NodeId>& parts);
    NodeId slice_rows(NodeId a, int r0, int r1);
    NodeId clamp(NodeId a, double lo, double hi);
    NodeId sign(NodeId a);
    NodeId scale(NodeId a, double c);
    NodeId counter_hook(NodeId a, PassCounter* c);

    void forward();
    void backward(NodeId root);

    Tensor value(NodeId id) const;
    Tensor gradient(NodeId id) const;
    const Shape& shape(NodeId id) const { return node(id).shape; }
    bool requires_grad(NodeId id) const { return node(id).requires_grad; }
    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
    bool backward_run_ = false;

    Node& node(NodeId id);
    const Node& node(NodeId id) const;
    NodeId push(Node n);
    void compute(Node& n);
    void propagate(Node& n);
    void check_same_shape(const char* op, NodeId a, NodeId b) const;
};

}  // namespace aptlab
