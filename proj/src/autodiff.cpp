#include "aptlab/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace aptlab {

namespace {

std::string node_name(OpKind op) {
    switch (op) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::MatMul: return "matmul";
        case OpKind::AddRowVec: return "add_rowvec";
        case OpKind::Tanh: return "tanh";
        case OpKind::L2Norm: return "l2norm";
        case OpKind::Dot: return "dot";
        case OpKind::Cosine: return "cosine";
        case OpKind::CosineRows: return "cosine_rows";
        case OpKind::Softmax: return "softmax";
        case OpKind::Log: return "log";
        case OpKind::Nll: return "nll";
        case OpKind::Mean: return "mean";
        case OpKind::MeanRows: return "mean_rows";
        case OpKind::ConcatRows: return "concat_rows";
        case OpKind::SliceRows: return "slice_rows";
        case OpKind::Clamp: return "clamp";
        case OpKind::Sign: return "sign";
        case OpKind::Scale: return "scale";
        case OpKind::Counter: return "counter";
    }
    return "?";
}

[[noreturn]] void shape_error(OpKind op, NodeId id, const std::string& detail) {
    throw std::invalid_argument("autodiff: shape mismatch at node " + std::to_string(id) +
                                " (" + node_name(op) + "): " + detail);
}

double l2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

Node& DiffGraph::node(NodeId id) { return nodes_.at(static_cast<std::size_t>(id)); }
const Node& DiffGraph::node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }

NodeId DiffGraph::push(Node n) {
    for (NodeId i : n.in) n.requires_grad = n.requires_grad || node(i).requires_grad;
    NodeId id = static_cast<NodeId>(nodes_.size());
    nodes_.push_back(std::move(n));
    compute(nodes_.back());
    return id;
}

NodeId DiffGraph::leaf(const Tensor& t, bool requires_grad) {
    Node n;
    n.op = OpKind::Leaf;
    n.shape = t.shape;
    n.val = t.v;
    n.requires_grad = requires_grad;
    NodeId id = static_cast<NodeId>(nodes_.size());
    nodes_.push_back(std::move(n));
    return id;
}

void DiffGraph::set_leaf(NodeId id, const Tensor& t) {
    Node& n = node(id);
    if (n.op != OpKind::Leaf) throw std::logic_error("set_leaf on non-leaf node");
    if (n.shape != t.shape) shape_error(OpKind::Leaf, id, "set_leaf shape changed");
    n.val = t.v;
}

void DiffGraph::check_same_shape(const char* op, NodeId a, NodeId b) const {
    if (node(a).shape != node(b).shape)
        throw std::invalid_argument(std::string("autodiff: shape mismatch at node ") +
                                    std::to_string(static_cast<int>(nodes_.size())) + " (" + op +
                                    "): " + node(a).shape.str() + " vs " + node(b).shape.str());
}

NodeId DiffGraph::add(NodeId a, NodeId b) {
    check_same_shape("add", a, b);
    Node n; n.op = OpKind::Add; n.in = {a, b}; n.shape = node(a).shape;
    return push(std::move(n));
}

NodeId DiffGraph::sub(NodeId a, NodeId b) {
    check_same_shape("sub", a, b);
    Node n; n.op = OpKind::Sub; n.in = {a, b}; n.shape = node(a).shape;
    return push(std::move(n));
}

NodeId DiffGraph::mul(NodeId a, NodeId b) {
    check_same_shape("mul", a, b);
    Node n; n.op = OpKind::Mul; n.in = {a, b}; n.shape = node(a).shape;
    return push(std::move(n));
}

NodeId DiffGraph::matmul(NodeId a, NodeId b) {
    const Shape& sa = node(a).shape;
    const Shape& sb = node(b).shape;
    if (sa.rank() != 2 || sb.rank() != 2 || sa.dims[1] != sb.dims[0])
        shape_error(OpKind::MatMul, static_cast<NodeId>(nodes_.size()),
                    sa.str() + " x " + sb.str());
    Node n; n.op = OpKind::MatMul; n.in = {a, b}; n.shape = Shape{sa.dims[0], sb.dims[1]};
    return push(std::move(n));
}

NodeId DiffGraph::add_rowvec(NodeId a, NodeId v) {
    const Shape& sa = node(a).shape;
    const Shape& sv = node(v).shape;
    if (sa.rank() != 2 || sv.rank() != 1 || sa.dims[1] != sv.dims[0])
        shape_error(OpKind::AddRowVec, static_cast<NodeId>(nodes_.size()),
                    sa.str() + " + " + sv.str());
    Node n; n.op = OpKind::AddRowVec; n.in = {a, v}; n.shape = sa;
    return push(std::move(n));
}

NodeId DiffGraph::tanh_(NodeId a) {
    Node n; n.op = OpKind::Tanh; n.in = {a}; n.shape = node(a).shape;
    return push(std::move(n));
}

NodeId DiffGraph::l2norm(NodeId a) {
    Node n; n.op = OpKind::L2Norm; n.in = {a}; n.shape = Shape{};
    return push(std::move(n));
}

NodeId DiffGraph::dot(NodeId a, NodeId b) {
    check_same_shape("dot", a, b);
    if (node(a).shape.rank() != 1)
        shape_error(OpKind::Dot, static_cast<NodeId>(nodes_.size()), "expects vectors");
    Node n; n.op = OpKind::Dot; n.in = {a, b}; n.shape = Shape{};
    return push(std::move(n));
}

NodeId DiffGraph::cosine(NodeId a, NodeId b) {
    check_same_shape("cosine", a, b);
    if (node(a).shape.rank() != 1)
        shape_error(OpKind::Cosine, static_cast<NodeId>(nodes_.size()), "expects vectors");
    Node n; n.op = OpKind::Cosine; n.in = {a, b}; n.shape = Shape{};
    return push(std::move(n));
}

NodeId DiffGraph::cosine_rows(NodeId a, NodeId b) {
    const Shape& sa = node(a).shape;
    const Shape& sb = node(b).shape;
    if (sa.rank() != 2 || sb.rank() != 2 || sa.dims[1] != sb.dims[1])
        shape_error(OpKind::CosineRows, static_cast<NodeId>(nodes_.size()),
                    sa.str() + " vs " + sb.str());
    Node n; n.op = OpKind::CosineRows; n.in = {a, b}; n.shape = Shape{sa.dims[0], sb.dims[0]};
    return push(std::move(n));
}

NodeId DiffGraph::softmax(NodeId a) {
    Node n; n.op = OpKind::Softmax; n.in = {a}; n.shape = node(a).shape;
    return push(std::move(n));
}

NodeId DiffGraph::log_(NodeId a) {
    Node n; n.op = OpKind::Log; n.in = {a}; n.shape = node(a).shape;
    return push(std::move(n));
}

NodeId DiffGraph::nll(NodeId probs, std::vector<int> labels) {
    const Shape& s = node(probs).shape;
    if (s.rank() != 2 || static_cast<int>(labels.size()) != s.dims[0])
        shape_error(OpKind::Nll, static_cast<NodeId>(nodes_.size()),
                    "probs " + s.str() + " vs " + std::to_string(labels.size()) + " labels");
    for (int y : labels)
        if (y < 0 || y >= s.dims[1])
            throw std::invalid_argument("autodiff: nll label out of range");
    Node n; n.op = OpKind::Nll; n.in = {probs}; n.shape = Shape{s.dims[0]};
    n.labels = std::move(labels);
    return push(std::move(n));
}

NodeId DiffGraph::mean(NodeId a) {
    Node n; n.op = OpKind::Mean; n.in = {a}; n.shape = Shape{};
    return push(std::move(n));
}

NodeId DiffGraph::mean_rows(NodeId a) {
    const Shape& s = node(a).shape;
    if (s.rank() != 2)
        shape_error(OpKind::MeanRows, static_cast<NodeId>(nodes_.size()), "expects matrix");
    Node n; n.op = OpKind::MeanRows; n.in = {a}; n.shape = Shape{s.dims[1]};
    return push(std::move(n));
}

NodeId DiffGraph::concat_rows(const std::vector<NodeId>& parts) {
    if (parts.empty()) throw std::invalid_argument("autodiff: concat_rows of nothing");
    int cols = node(parts[0]).shape.cols();
    int rows = 0;
    for (NodeId p : parts) {
        const Shape& s = node(p).shape;
        if (s.rank() == 0 || s.cols() != cols)
            shape_error(OpKind::ConcatRows, static_cast<NodeId>(nodes_.size()),
                        "column mismatch at input");
        rows += s.rank() == 2 ? s.dims[0] : 1;
    }
    Node n; n.op = OpKind::ConcatRows; n.in = parts; n.shape = Shape{rows, cols};
    return push(std::move(n));
}

NodeId DiffGraph::slice_rows(NodeId a, int r0, int r1) {
    const Shape& s = node(a).shape;
    if (s.rank() != 2 || r0 < 0 || r1 > s.dims[0] || r0 >= r1)
        shape_error(OpKind::SliceRows, static_cast<NodeId>(nodes_.size()),
                    "rows [" + std::to_string(r0) + "," + std::to_string(r1) + ") of " + s.str());
    Node n; n.op = OpKind::SliceRows; n.in = {a}; n.shape = Shape{r1 - r0, s.dims[1]};
    n.a0 = r0; n.a1 = r1;
    return push(std::move(n));
}

NodeId DiffGraph::clamp(NodeId a, double lo, double hi) {
    Node n; n.op = OpKind::Clamp; n.in = {a}; n.shape = node(a).shape;
    n.a0 = lo; n.a1 = hi;
    return push(std::move(n));
}

NodeId DiffGraph::sign(NodeId a) {
    Node n; n.op = OpKind::Sign; n.in = {a}; n.shape = node(a).shape;
    return push(std::move(n));
}

NodeId DiffGraph::scale(NodeId a, double c) {
    Node n; n.op = OpKind::Scale; n.in = {a}; n.shape = node(a).shape;
    n.a0 = c;
    return push(std::move(n));
}

NodeId DiffGraph::counter_hook(NodeId a, PassCounter* c) {
    Node n; n.op = OpKind::Counter; n.in = {a}; n.shape = node(a).shape;
    n.counter = c;
    return push(std::move(n));
}

void DiffGraph::compute(Node& n) {
    auto& in = n.in;
    auto val = [&](int i) -> const std::vector<double>& { return node(in[static_cast<std::size_t>(i)]).val; };
    auto shp = [&](int i) -> const Shape& { return node(in[static_cast<std::size_t>(i)]).shape; };
    n.val.assign(n.shape.numel(), 0.0);
    switch (n.op) {
        case OpKind::Leaf:
            break;
        case OpKind::Add:
            for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = val(0)[i] + val(1)[i];
            break;
        case OpKind::Sub:
            for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = val(0)[i] - val(1)[i];
            break;
        case OpKind::Mul:
            for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = val(0)[i] * val(1)[i];
            break;
        case OpKind::MatMul: {
            int m = shp(0).dims[0], k = shp(0).dims[1], c = shp(1).dims[1];
            const auto& A = val(0);
            const auto& B = val(1);
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    double a = A[static_cast<std::size_t>(i) * k + p];
                    if (a == 0.0) continue;
                    const double* brow = B.data() + static_cast<std::size_t>(p) * c;
                    double* orow = n.val.data() + static_cast<std::size_t>(i) * c;
                    for (int j = 0; j < c; ++j) orow[j] += a * brow[j];
                }
            break;
        }
        case OpKind::AddRowVec: {
            int m = shp(0).dims[0], c = shp(0).dims[1];
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < c; ++j)
                    n.val[static_cast<std::size_t>(i) * c + j] =
                        val(0)[static_cast<std::size_t>(i) * c + j] + val(1)[static_cast<std::size_t>(j)];
            break;
        }
        case OpKind::Tanh:
            for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = std::tanh(val(0)[i]);
            break;
        case OpKind::L2Norm:
            n.val[0] = l2(val(0));
            break;
        case OpKind::Dot: {
            double s = 0.0;
            for (std::size_t i = 0; i < val(0).size(); ++i) s += val(0)[i] * val(1)[i];
            n.val[0] = s;
            break;
        }
        case OpKind::Cosine: {
            double na = l2(val(0)), nb = l2(val(1));
            if (na == 0.0 || nb == 0.0)
                throw std::domain_error("autodiff: cosine of zero vector");
            double s = 0.0;
            for (std::size_t i = 0; i < val(0).size(); ++i) s += val(0)[i] * val(1)[i];
            n.val[0] = s / (na * nb);
            break;
        }
        case OpKind::CosineRows: {
            int m = shp(0).dims[0], d = shp(0).dims[1], c = shp(1).dims[0];
            std::vector<double> nra(static_cast<std::size_t>(m)), nrb(static_cast<std::size_t>(c));
            for (int i = 0; i < m; ++i) {
                double s = 0.0;
                for (int t = 0; t < d; ++t) {
                    double x = val(0)[static_cast<std::size_t>(i) * d + t];
                    s += x * x;
                }
                nra[static_cast<std::size_t>(i)] = std::sqrt(s);
                if (nra[static_cast<std::size_t>(i)] == 0.0)
                    throw std::domain_error("autodiff: cosine_rows zero row in left input");
            }
            for (int j = 0; j < c; ++j) {
                double s = 0.0;
                for (int t = 0; t < d; ++t) {
                    double x = val(1)[static_cast<std::size_t>(j) * d + t];
                    s += x * x;
                }
                nrb[static_cast<std::size_t>(j)] = std::sqrt(s);
                if (nrb[static_cast<std::size_t>(j)] == 0.0)
                    throw std::domain_error("autodiff: cosine_rows zero row in right input");
            }
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < c; ++j) {
                    double s = 0.0;
                    for (int t = 0; t < d; ++t)
                        s += val(0)[static_cast<std::size_t>(i) * d + t] *
                             val(1)[static_cast<std::size_t>(j) * d + t];
                    n.val[static_cast<std::size_t>(i) * c + j] =
                        s / (nra[static_cast<std::size_t>(i)] * nrb[static_cast<std::size_t>(j)]);
                }
            break;
        }
        case OpKind::Softmax: {
            int c = n.shape.cols();
            int m = static_cast<int>(n.val.size()) / c;
            for (int i = 0; i < m; ++i) {
                const double* x = val(0).data() + static_cast<std::size_t>(i) * c;
                double* y = n.val.data() + static_cast<std::size_t>(i) * c;
                double mx = x[0];
                for (int j = 1; j < c; ++j) mx = std::max(mx, x[j]);
                double z = 0.0;
                for (int j = 0; j < c; ++j) {
                    y[j] = std::exp(x[j] - mx);
                    z += y[j];
                }
                for (int j = 0; j < c; ++j) y[j] /= z;
            }
            break;
        }
        case OpKind::Log:
            for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = std::log(val(0)[i]);
            break;
        case OpKind::Nll: {
            int c = shp(0).dims[1];
            for (std::size_t i = 0; i < n.val.size(); ++i)
                n.val[i] = -std::log(val(0)[i * static_cast<std::size_t>(c) +
                                            static_cast<std::size_t>(n.labels[i])]);
            break;
        }
        case OpKind::Mean: {
            double s = 0.0;
            for (double x : val(0)) s += x;
            n.val[0] = s / static_cast<double>(val(0).size());
            break;
        }
        case OpKind::MeanRows: {
            int m = shp(0).dims[0], c = shp(0).dims[1];
            for (int j = 0; j < c; ++j) {
                double s = 0.0;
                for (int i = 0; i < m; ++i) s += val(0)[static_cast<std::size_t>(i) * c + j];
                n.val[static_cast<std::size_t>(j)] = s / m;
            }
            break;
        }
        case OpKind::ConcatRows: {
            std::size_t off = 0;
            for (std::size_t p = 0; p < in.size(); ++p) {
                const auto& src = node(in[p]).val;
                std::copy(src.begin(), src.end(), n.val.begin() + static_cast<std::ptrdiff_t>(off));
                off += src.size();
            }
            break;
        }
        case OpKind::SliceRows: {
            int c = n.shape.dims[1];
            int r0 = static_cast<int>(n.a0);
            std::copy(val(0).begin() + static_cast<std::ptrdiff_t>(r0) * c,
                      val(0).begin() + static_cast<std::ptrdiff_t>(static_cast<int>(n.a1)) * c,
                      n.val.begin());
            break;
        }
        case OpKind::Clamp:
            for (std::size_t i = 0; i < n.val.size(); ++i)
                n.val[i] = std::min(n.a1, std::max(n.a0, val(0)[i]));
            break;
        case OpKind::Sign:
            for (std::size_t i = 0; i < n.val.size(); ++i)
                n.val[i] = val(0)[i] > 0.0 ? 1.0 : (val(0)[i] < 0.0 ? -1.0 : 0.0);
            break;
        case OpKind::Scale:
            for (std::size_t i = 0; i < n.val.size(); ++i) n.val[i] = n.a0 * val(0)[i];
            break;
        case OpKind::Counter:
            n.val = val(0);
            if (n.counter) ++n.counter->fwd;
            break;
    }
}

void DiffGraph::forward() {
    for (auto& n : nodes_)
        if (n.op != OpKind::Leaf) compute(n);
    backward_run_ = false;
}

void DiffGraph::backward(NodeId root) {
    Node& r = node(root);
    if (r.shape.numel() != 1)
        throw std::invalid_argument("autodiff: backward root must be scalar");
    for (auto& n : nodes_) n.grad.assign(n.val.size(), 0.0);
    r.grad[0] = 1.0;
    for (NodeId id = root; id >= 0; --id) {
        Node& n = node(id);
        if (!n.requires_grad || n.op == OpKind::Leaf) continue;
        propagate(n);
    }
    backward_run_ = true;
}

void DiffGraph::propagate(Node& n) {
    auto& in = n.in;
    auto g_in = [&](int i) -> std::vector<double>& { return node(in[static_cast<std::size_t>(i)]).grad; };
    auto val = [&](int i) -> const std::vector<double>& { return node(in[static_cast<std::size_t>(i)]).val; };
    auto shp = [&](int i) -> const Shape& { return node(in[static_cast<std::size_t>(i)]).shape; };
    const auto& g = n.grad;
    switch (n.op) {
        case OpKind::Leaf:
            break;
        case OpKind::Add:
            for (std::size_t i = 0; i < g.size(); ++i) {
                g_in(0)[i] += g[i];
                g_in(1)[i] += g[i];
            }
            break;
        case OpKind::Sub:
            for (std::size_t i = 0; i < g.size(); ++i) {
                g_in(0)[i] += g[i];
                g_in(1)[i] -= g[i];
            }
            break;
        case OpKind::Mul:
            for (std::size_t i = 0; i < g.size(); ++i) {
                g_in(0)[i] += g[i] * val(1)[i];
                g_in(1)[i] += g[i] * val(0)[i];
            }
            break;
        case OpKind::MatMul: {
            int m = shp(0).dims[0], k = shp(0).dims[1], c = shp(1).dims[1];
            // dA = G B^T ; dB = A^T G
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (int j = 0; j < c; ++j)
                        s += g[static_cast<std::size_t>(i) * c + j] *
                             val(1)[static_cast<std::size_t>(p) * c + j];
                    g_in(0)[static_cast<std::size_t>(i) * k + p] += s;
                }
            for (int p = 0; p < k; ++p)
                for (int j = 0; j < c; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < m; ++i)
                        s += val(0)[static_cast<std::size_t>(i) * k + p] *
                             g[static_cast<std::size_t>(i) * c + j];
                    g_in(1)[static_cast<std::size_t>(p) * c + j] += s;
                }
            break;
        }
        case OpKind::AddRowVec: {
            int m = shp(0).dims[0], c = shp(0).dims[1];
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < c; ++j) {
                    g_in(0)[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(i) * c + j];
                    g_in(1)[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i) * c + j];
                }
            break;
        }
        case OpKind::Tanh:
            for (std::size_t i = 0; i < g.size(); ++i)
                g_in(0)[i] += g[i] * (1.0 - n.val[i] * n.val[i]);
            break;
        case OpKind::L2Norm: {
            double nv = n.val[0];
            if (nv > 0.0)
                for (std::size_t i = 0; i < val(0).size(); ++i)
                    g_in(0)[i] += g[0] * val(0)[i] / nv;
            break;
        }
        case OpKind::Dot:
            for (std::size_t i = 0; i < val(0).size(); ++i) {
                g_in(0)[i] += g[0] * val(1)[i];
                g_in(1)[i] += g[0] * val(0)[i];
            }
            break;
        case OpKind::Cosine: {
            double na = l2(val(0)), nb = l2(val(1));
            double c = n.val[0];
            for (std::size_t i = 0; i < val(0).size(); ++i) {
                g_in(0)[i] += g[0] * (val(1)[i] / (na * nb) - c * val(0)[i] / (na * na));
                g_in(1)[i] += g[0] * (val(0)[i] / (na * nb) - c * val(1)[i] / (nb * nb));
            }
            break;
        }
        case OpKind::CosineRows: {
            int m = shp(0).dims[0], d = shp(0).dims[1], c = shp(1).dims[0];
            std::vector<double> nra(static_cast<std::size_t>(m)), nrb(static_cast<std::size_t>(c));
            for (int i = 0; i < m; ++i) {
                double s = 0.0;
                for (int t = 0; t < d; ++t) {
                    double x = val(0)[static_cast<std::size_t>(i) * d + t];
                    s += x * x;
                }
                nra[static_cast<std::size_t>(i)] = std::sqrt(s);
            }
            for (int j = 0; j < c; ++j) {
                double s = 0.0;
                for (int t = 0; t < d; ++t) {
                    double x = val(1)[static_cast<std::size_t>(j) * d + t];
                    s += x * x;
                }
                nrb[static_cast<std::size_t>(j)] = std::sqrt(s);
            }
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < c; ++j) {
                    double gij = g[static_cast<std::size_t>(i) * c + j];
                    if (gij == 0.0) continue;
                    double sij = n.val[static_cast<std::size_t>(i) * c + j];
                    double na = nra[static_cast<std::size_t>(i)], nb = nrb[static_cast<std::size_t>(j)];
                    for (int t = 0; t < d; ++t) {
                        double ai = val(0)[static_cast<std::size_t>(i) * d + t];
                        double bj = val(1)[static_cast<std::size_t>(j) * d + t];
                        g_in(0)[static_cast<std::size_t>(i) * d + t] +=
                            gij * (bj / (na * nb) - sij * ai / (na * na));
                        g_in(1)[static_cast<std::size_t>(j) * d + t] +=
                            gij * (ai / (na * nb) - sij * bj / (nb * nb));
                    }
                }
            break;
        }
        case OpKind::Softmax: {
            int c = n.shape.cols();
            int m = static_cast<int>(n.val.size()) / c;
            for (int i = 0; i < m; ++i) {
                const double* p = n.val.data() + static_cast<std::size_t>(i) * c;
                const double* gr = g.data() + static_cast<std::size_t>(i) * c;
                double dotgp = 0.0;
                for (int j = 0; j < c; ++j) dotgp += gr[j] * p[j];
                for (int j = 0; j < c; ++j)
                    g_in(0)[static_cast<std::size_t>(i) * c + j] += p[j] * (gr[j] - dotgp);
            }
            break;
        }
        case OpKind::Log:
            for (std::size_t i = 0; i < g.size(); ++i) g_in(0)[i] += g[i] / val(0)[i];
            break;
        case OpKind::Nll: {
            int c = shp(0).dims[1];
            for (std::size_t i = 0; i < g.size(); ++i) {
                std::size_t idx = i * static_cast<std::size_t>(c) + static_cast<std::size_t>(n.labels[i]);
                g_in(0)[idx] += -g[i] / val(0)[idx];
            }
            break;
        }
        case OpKind::Mean: {
            double s = g[0] / static_cast<double>(val(0).size());
            for (std::size_t i = 0; i < val(0).size(); ++i) g_in(0)[i] += s;
            break;
        }
        case OpKind::MeanRows: {
            int m = shp(0).dims[0], c = shp(0).dims[1];
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < c; ++j)
                    g_in(0)[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(j)] / m;
            break;
        }
        case OpKind::ConcatRows: {
            std::size_t off = 0;
            for (std::size_t p = 0; p < in.size(); ++p) {
                auto& gi = node(in[p]).grad;
                for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[off + i];
                off += gi.size();
            }
            break;
        }
        case OpKind::SliceRows: {
            int c = n.shape.dims[1];
            int r0 = static_cast<int>(n.a0);
            for (std::size_t i = 0; i < g.size(); ++i)
                g_in(0)[static_cast<std::size_t>(r0) * c + i] += g[i];
            break;
        }
        case OpKind::Clamp:
            for (std::size_t i = 0; i < g.size(); ++i)
                if (val(0)[i] >= n.a0 && val(0)[i] <= n.a1) g_in(0)[i] += g[i];
            break;
        case OpKind::Sign:
            break;  // gradient defined as zero
        case OpKind::Scale:
            for (std::size_t i = 0; i < g.size(); ++i) g_in(0)[i] += n.a0 * g[i];
            break;
        case OpKind::Counter:
            for (std::size_t i = 0; i < g.size(); ++i) g_in(0)[i] += g[i];
            if (n.counter) ++n.counter->bwd;
            break;
    }
}

Tensor DiffGraph::value(NodeId id) const {
    const Node& n = node(id);
    return Tensor(n.shape, n.val);
}

Tensor DiffGraph::gradient(NodeId id) const {
    if (!backward_run_) throw std::logic_error("autodiff: gradient requested before backward");
    const Node& n = node(id);
    if (n.grad.size() != n.val.size())
        throw std::logic_error("autodiff: gradient requested before backward");
    return Tensor(n.shape, n.grad);
}

}  // namespace aptlab
