#include "aptlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "aptlab/io.hpp"
#include "aptlab/rng.hpp"

namespace aptlab {

namespace {
constexpr std::uint16_t kModelVersion = 1;
}

DualEncoderModel DualEncoderModel::random_init(const ModelConfig& cfg) {
    if (cfg.temperature <= 0.0) throw std::invalid_argument("model: temperature must be positive");
    if (cfg.input_dim < 1 || cfg.hidden_dim < 1 || cfg.embed_dim < 1 || cfg.vocab_size < 1 ||
        cfg.num_classes < 2)
        throw std::invalid_argument("model: invalid dimensions");
    DualEncoderModel m;
    m.cfg_ = cfg;
    auto init = [&](int stream, int rows, int cols, double fan_in) {
        Rng rng = Rng::derive(cfg.seed, static_cast<std::uint64_t>(stream));
        return rng.gaussian_tensor(Shape{rows, cols}, 0.0, 1.0 / std::sqrt(fan_in));
    };
    auto init_vec = [&](int stream, int n) {
        (void)stream;
        return Tensor(Shape{n});  // zero biases
    };
    m.w1_ = init(0, cfg.input_dim, cfg.hidden_dim, cfg.input_dim);
    m.b1_ = init_vec(1, cfg.hidden_dim);
    m.w2_ = init(2, cfg.hidden_dim, cfg.embed_dim, cfg.hidden_dim);
    m.b2_ = init_vec(3, cfg.embed_dim);
    m.u1_ = init(4, cfg.embed_dim, cfg.hidden_dim, cfg.embed_dim);
    m.c1_ = init_vec(5, cfg.hidden_dim);
    m.u2_ = init(6, cfg.hidden_dim, cfg.embed_dim, cfg.hidden_dim);
    m.c2_ = init_vec(7, cfg.embed_dim);
    {
        Rng rng = Rng::derive(cfg.seed, 8);
        m.vocab_ = rng.gaussian_tensor(Shape{cfg.vocab_size, cfg.embed_dim}, 0.0, 1.0);
    }
    return m;
}

Tensor DualEncoderModel::vocab_entry(int token_id) const {
    if (token_id < 0 || token_id >= cfg_.vocab_size)
        throw std::out_of_range("model: token id " + std::to_string(token_id) +
                                " outside vocabulary of size " + std::to_string(cfg_.vocab_size));
    return vocab_.row(token_id);
}

NodeId DualEncoderModel::encode_image(DiffGraph& g, NodeId images) const {
    if (g.shape(images).rank() != 2 || g.shape(images).dims[1] != cfg_.input_dim)
        throw std::invalid_argument("model: encode_image expects [B," +
                                    std::to_string(cfg_.input_dim) + "], got " +
                                    g.shape(images).str());
    NodeId w1 = g.leaf(w1_), b1 = g.leaf(b1_), w2 = g.leaf(w2_), b2 = g.leaf(b2_);
    NodeId h = g.tanh_(g.add_rowvec(g.matmul(images, w1), b1));
    NodeId z = g.add_rowvec(g.matmul(h, w2), b2);
    return g.counter_hook(z, &image_counter_);
}

NodeId DualEncoderModel::encode_text_batch(DiffGraph& g, const std::vector<NodeId>& token_seqs) const {
    if (token_seqs.empty()) throw std::invalid_argument("model: encode_text of empty prompt set");
    std::vector<NodeId> pooled;
    pooled.reserve(token_seqs.size());
    for (NodeId t : token_seqs) {
        const Shape& s = g.shape(t);
        if (s.rank() != 2 || s.dims[1] != cfg_.embed_dim || s.dims[0] < 1)
            throw std::invalid_argument("model: token sequence must be nonempty [L," +
                                        std::to_string(cfg_.embed_dim) + "], got " + s.str());
        pooled.push_back(g.mean_rows(t));
    }
    NodeId stacked = g.concat_rows(pooled);
    NodeId u1 = g.leaf(u1_), c1 = g.leaf(c1_), u2 = g.leaf(u2_), c2 = g.leaf(c2_);
    NodeId h = g.tanh_(g.add_rowvec(g.matmul(stacked, u1), c1));
    NodeId z = g.add_rowvec(g.matmul(h, u2), c2);
    return g.counter_hook(z, &text_counter_);
}

NodeId DualEncoderModel::encode_text(DiffGraph& g, NodeId tokens) const {
    NodeId z = encode_text_batch(g, {tokens});  // [1,D]
    return g.mean_rows(z);                      // -> [D]
}

Tensor DualEncoderModel::encode_image(const Tensor& images) const {
    DiffGraph g;
    bool single = images.shape.rank() == 1;
    Tensor in = single ? Tensor(Shape{1, cfg_.input_dim}, images.v) : images;
    NodeId z = encode_image(g, g.leaf(in));
    Tensor out = g.value(z);
    if (single) return Tensor(Shape{cfg_.embed_dim}, out.v);
    return out;
}

Tensor DualEncoderModel::encode_text(const Tensor& tokens) const {
    DiffGraph g;
    return g.value(encode_text(g, g.leaf(tokens)));
}

Tensor DualEncoderModel::encode_text_batch(const std::vector<Tensor>& token_seqs) const {
    DiffGraph g;
    std::vector<NodeId> ids;
    ids.reserve(token_seqs.size());
    for (const auto& t : token_seqs) ids.push_back(g.leaf(t));
    return g.value(encode_text_batch(g, ids));
}

double DualEncoderModel::similarity(const Tensor& zv, const Tensor& zt) {
    DiffGraph g;
    return g.value(g.cosine(g.leaf(zv), g.leaf(zt))).item();
}

std::vector<double> DualEncoderModel::class_probabilities(const Tensor& image,
                                                          const Tensor& text_features) const {
    DiffGraph g;
    Tensor in = image.shape.rank() == 1 ? Tensor(Shape{1, cfg_.input_dim}, image.v) : image;
    NodeId zv = encode_image(g, g.leaf(in));
    NodeId s = g.scale(g.cosine_rows(zv, g.leaf(text_features)), 1.0 / cfg_.temperature);
    return g.value(g.softmax(s)).v;
}

int DualEncoderModel::predict(const Tensor& image, const Tensor& text_features) const {
    auto p = class_probabilities(image, text_features);
    // lowest index wins ties
    return static_cast<int>(std::max_element(p.begin(), p.end(), [](double a, double b) {
               return a < b;
           }) - p.begin());
}

std::vector<int> DualEncoderModel::predict_batch(const Tensor& images,
                                                 const Tensor& text_features) const {
    DiffGraph g;
    NodeId zv = encode_image(g, g.leaf(images));
    NodeId s = g.cosine_rows(zv, g.leaf(text_features));
    Tensor sim = g.value(s);
    int b = sim.shape.dims[0], c = sim.shape.dims[1];
    std::vector<int> out(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
        int best = 0;
        for (int j = 1; j < c; ++j)
            if (sim.at(i, j) > sim.at(i, best)) best = j;
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

NodeId DualEncoderModel::loss(DiffGraph& g, NodeId image_features, NodeId text_features,
                              const std::vector<int>& labels) const {
    NodeId s = g.scale(g.cosine_rows(image_features, text_features), 1.0 / cfg_.temperature);
    return g.mean(g.nll(g.softmax(s), labels));
}

std::uint64_t DualEncoderModel::weight_checksum() const {
    return io::checksum({&w1_, &b1_, &w2_, &b2_, &u1_, &c1_, &u2_, &c2_, &vocab_});
}

void DualEncoderModel::save(const std::string& path) const {
    auto os = io::open_out(path);
    io::write_magic(os, "APTM");
    io::write_pod<std::uint16_t>(os, kModelVersion);
    for (int d : {cfg_.input_dim, cfg_.hidden_dim, cfg_.embed_dim, cfg_.vocab_size, cfg_.num_classes})
        io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (const Tensor* t : {&w1_, &b1_, &w2_, &b2_, &u1_, &c1_, &u2_, &c2_, &vocab_})
        io::write_doubles(os, t->v);
    io::write_pod<double>(os, cfg_.temperature);
}

DualEncoderModel DualEncoderModel::load(const std::string& path) {
    auto is = io::open_in(path);
    io::expect_magic(is, "APTM", "model checkpoint");
    auto ver = io::read_pod<std::uint16_t>(is, "model checkpoint");
    if (ver != kModelVersion)
        throw std::runtime_error("model checkpoint: unsupported version " + std::to_string(ver));
    DualEncoderModel m;
    m.cfg_.input_dim = static_cast<int>(io::read_pod<std::uint32_t>(is, "model checkpoint"));
    m.cfg_.hidden_dim = static_cast<int>(io::read_pod<std::uint32_t>(is, "model checkpoint"));
    m.cfg_.embed_dim = static_cast<int>(io::read_pod<std::uint32_t>(is, "model checkpoint"));
    m.cfg_.vocab_size = static_cast<int>(io::read_pod<std::uint32_t>(is, "model checkpoint"));
    m.cfg_.num_classes = static_cast<int>(io::read_pod<std::uint32_t>(is, "model checkpoint"));
    int dx = m.cfg_.input_dim, h = m.cfg_.hidden_dim, d = m.cfg_.embed_dim, v = m.cfg_.vocab_size;
    auto rd = [&](Shape s) {
        std::size_t n = s.numel();
        return Tensor(std::move(s), io::read_doubles(is, n, "model checkpoint"));
    };
    m.w1_ = rd(Shape{dx, h});
    m.b1_ = rd(Shape{h});
    m.w2_ = rd(Shape{h, d});
    m.b2_ = rd(Shape{d});
    m.u1_ = rd(Shape{d, h});
    m.c1_ = rd(Shape{h});
    m.u2_ = rd(Shape{h, d});
    m.c2_ = rd(Shape{d});
    m.vocab_ = rd(Shape{v, d});
    m.cfg_.temperature = io::read_pod<double>(is, "model checkpoint");
    if (m.cfg_.temperature <= 0.0)
        throw std::runtime_error("model checkpoint: non-positive temperature");
    return m;
}

}  // namespace aptlab
