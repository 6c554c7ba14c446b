#include "aptlab/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "aptlab/io.hpp"
#include "aptlab/rng.hpp"

namespace aptlab {

namespace {

constexpr std::uint16_t kVisualVersion = 1;
constexpr std::uint16_t kHeadVersion = 1;

Tensor transposed(const Tensor& m) {
    int r = m.shape.dims[0], c = m.shape.dims[1];
    Tensor t(Shape{c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) t.at(j, i) = m.at(i, j);
    return t;
}

// PGD on an image delta against an arbitrary loss head. `build_loss` receives
// the clamped perturbed images node and must return a scalar loss node.
Tensor pgd(const Tensor& images, const AttackSpec& spec,
           const std::function<NodeId(DiffGraph&, NodeId)>& build_loss) {
    spec.validate();
    Tensor delta(images.shape);
    if (spec.random_start) {
        Rng rng = Rng::derive(spec.seed, 0x64656c74ull);
        delta = rng.uniform_tensor(images.shape, -spec.eps, spec.eps);
    }
    for (int k = 0; k < spec.steps; ++k) {
        DiffGraph g;
        NodeId dl = g.leaf(delta, true);
        NodeId xp = g.clamp(g.add(g.leaf(images), dl), 0.0, 1.0);
        g.backward(build_loss(g, xp));
        Tensor grad = g.gradient(dl);
        for (std::size_t i = 0; i < delta.v.size(); ++i) {
            double s = grad.v[i] > 0.0 ? 1.0 : (grad.v[i] < 0.0 ? -1.0 : 0.0);
            delta.v[i] = std::min(spec.eps, std::max(-spec.eps, delta.v[i] + spec.alpha * s));
        }
    }
    Tensor out = images;
    for (std::size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = std::min(1.0, std::max(0.0, out.v[i] + delta.v[i]));
    return out;
}

NodeId prompted(DiffGraph& g, NodeId images, NodeId phi) {
    return g.clamp(g.add_rowvec(images, phi), 0.0, 1.0);
}

Tensor apply_phi(const Tensor& images, const Tensor& phi) {
    Tensor out = images;
    int dx = images.shape.dims[1];
    for (int i = 0; i < images.shape.dims[0]; ++i)
        for (int t = 0; t < dx; ++t)
            out.at(i, t) = std::min(1.0, std::max(0.0, out.at(i, t) + phi.at(t)));
    return out;
}

NodeId head_loss(DiffGraph& g, const DualEncoderModel& model, NodeId images, NodeId wt, NodeId b,
                 const std::vector<int>& labels) {
    NodeId z = model.encode_image(g, images);
    NodeId logits = g.add_rowvec(g.matmul(z, wt), b);
    return g.mean(g.nll(g.softmax(logits), labels));
}

}  // namespace

void BaselineConfig::validate() const {
    if (epochs < 0) throw std::invalid_argument("baseline: negative epoch count");
    if (batch_size < 1) throw std::invalid_argument("baseline: batch size must be >= 1");
    if (lr < 0.0) throw std::invalid_argument("baseline: negative learning rate");
    adversary.validate();
}

double paft_step_lr(double lr0, int epoch, int total_epochs) {
    double f = 1.0;
    if (epoch >= total_epochs / 4) f *= 0.1;
    if (epoch >= total_epochs / 2) f *= 0.1;
    return lr0 * f;
}

VisualPrompt train_avp(const DualEncoderModel& model, const Dataset& ds, const ShotSample& shots,
                       const HandPrompt& prompt, const BaselineConfig& cfg) {
    cfg.validate();
    if (shots.indices.empty()) throw std::invalid_argument("avp: empty training sample");
    Tensor features = prompt.encode_all(model, ds.class_embeddings(model));

    VisualPrompt vp;
    vp.phi = Tensor(Shape{ds.spec.input_dim});
    int n = static_cast<int>(shots.indices.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order = shots.indices;
        Rng erng = Rng::derive(cfg.seed, 0xE000 + static_cast<std::uint64_t>(epoch));
        erng.shuffle(order);
        for (int start = 0; start < n; start += cfg.batch_size) {
            std::vector<int> ids(order.begin() + start,
                                 order.begin() + std::min(n, start + cfg.batch_size));
            Batch batch = make_batch(ds, ids);
            // adversary on the bare image, independent of phi
            Tensor adv = attack(model, batch.images, batch.labels, features, cfg.adversary).images;

            DiffGraph g;
            NodeId phi = g.leaf(vp.phi, true);
            NodeId f = g.leaf(features);
            NodeId zc = model.encode_image(g, prompted(g, g.leaf(batch.images), phi));
            NodeId za = model.encode_image(g, prompted(g, g.leaf(adv), phi));
            NodeId joint = g.add(model.loss(g, zc, f, batch.labels),
                                 model.loss(g, za, f, batch.labels));
            g.backward(joint);
            Tensor grad = g.gradient(phi);
            for (std::size_t i = 0; i < vp.phi.v.size(); ++i) vp.phi.v[i] -= cfg.lr * grad.v[i];
        }
    }
    return vp;
}

double avp_clean_accuracy(const DualEncoderModel& model, const VisualPrompt& vp,
                          const Tensor& images, const std::vector<int>& labels,
                          const Tensor& features) {
    return clean_accuracy(model, apply_phi(images, vp.phi), labels, features);
}

double avp_robust_accuracy(const DualEncoderModel& model, const VisualPrompt& vp,
                           const Tensor& images, const std::vector<int>& labels,
                           const Tensor& features, const AttackSpec& spec) {
    if (labels.empty()) throw std::invalid_argument("avp: empty dataset");
    int n = images.shape.dims[0], dx = images.shape.dims[1];
    int correct = 0;
    const int batch_size = 32;
    for (int start = 0; start < n; start += batch_size) {
        int b = std::min(batch_size, n - start);
        Tensor batch(Shape{b, dx});
        std::copy(images.v.begin() + static_cast<std::ptrdiff_t>(start) * dx,
                  images.v.begin() + static_cast<std::ptrdiff_t>(start + b) * dx, batch.v.begin());
        std::vector<int> ly(labels.begin() + start, labels.begin() + start + b);
        AttackSpec bs = spec;
        bs.seed = Rng::derive(spec.seed, 0xB000 + static_cast<std::uint64_t>(start)).next_u64();
        Tensor adv = pgd(batch, bs, [&](DiffGraph& g, NodeId xp) {
            NodeId z = model.encode_image(g, prompted(g, xp, g.leaf(vp.phi)));
            return model.loss(g, z, g.leaf(features), ly);
        });
        auto preds = model.predict_batch(apply_phi(adv, vp.phi), features);
        for (int i = 0; i < b; ++i)
            if (preds[static_cast<std::size_t>(i)] == ly[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

LinearHead LinearHead::zeros(int num_classes, int embed_dim) {
    LinearHead h;
    h.weight = Tensor(Shape{num_classes, embed_dim});
    h.bias = Tensor(Shape{num_classes});
    return h;
}

std::vector<int> LinearHead::predict(const DualEncoderModel& model, const Tensor& images) const {
    Tensor z = model.encode_image(images);
    if (z.shape.rank() == 1) z = Tensor(Shape{1, z.shape.dims[0]}, z.v);
    int b = z.shape.dims[0], c = weight.shape.dims[0], d = weight.shape.dims[1];
    std::vector<int> out(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
        int best = 0;
        double best_v = -1e300;
        for (int j = 0; j < c; ++j) {
            double v = bias.at(j);
            for (int t = 0; t < d; ++t) v += z.at(i, t) * weight.at(j, t);
            if (v > best_v) {
                best_v = v;
                best = j;
            }
        }
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

LinearHead train_paft(const DualEncoderModel& model, const Dataset& ds, const ShotSample& shots,
                      const BaselineConfig& cfg) {
    cfg.validate();
    if (shots.indices.empty()) throw std::invalid_argument("paft: empty training sample");
    LinearHead head = LinearHead::zeros(ds.num_classes(), model.embed_dim());
    int n = static_cast<int>(shots.indices.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr = paft_step_lr(cfg.lr, epoch, cfg.epochs);
        std::vector<int> order = shots.indices;
        Rng erng = Rng::derive(cfg.seed, 0xE000 + static_cast<std::uint64_t>(epoch));
        erng.shuffle(order);
        for (int start = 0; start < n; start += cfg.batch_size) {
            std::vector<int> ids(order.begin() + start,
                                 order.begin() + std::min(n, start + cfg.batch_size));
            Batch batch = make_batch(ds, ids);
            Tensor wt_val = transposed(head.weight);
            Tensor adv = pgd(batch.images, cfg.adversary, [&](DiffGraph& g, NodeId xp) {
                return head_loss(g, model, xp, g.leaf(wt_val), g.leaf(head.bias), batch.labels);
            });

            DiffGraph g;
            NodeId wt = g.leaf(wt_val, true);
            NodeId b = g.leaf(head.bias, true);
            g.backward(head_loss(g, model, g.leaf(adv), wt, b, batch.labels));
            Tensor gw = g.gradient(wt);  // [D,C]
            Tensor gb = g.gradient(b);
            for (int j = 0; j < head.weight.shape.dims[0]; ++j)
                for (int t = 0; t < head.weight.shape.dims[1]; ++t)
                    head.weight.at(j, t) -= lr * gw.at(t, j);
            for (std::size_t i = 0; i < head.bias.v.size(); ++i) head.bias.v[i] -= lr * gb.v[i];
        }
    }
    return head;
}

double head_clean_accuracy(const DualEncoderModel& model, const LinearHead& head,
                           const Tensor& images, const std::vector<int>& labels) {
    if (labels.empty()) throw std::invalid_argument("paft: empty dataset");
    auto preds = head.predict(model, images);
    int ok = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (preds[i] == labels[i]) ++ok;
    return static_cast<double>(ok) / static_cast<double>(labels.size());
}

double head_robust_accuracy(const DualEncoderModel& model, const LinearHead& head,
                            const Tensor& images, const std::vector<int>& labels,
                            const AttackSpec& spec) {
    if (labels.empty()) throw std::invalid_argument("paft: empty dataset");
    int n = images.shape.dims[0], dx = images.shape.dims[1];
    Tensor wt_val = transposed(head.weight);
    int correct = 0;
    const int batch_size = 32;
    for (int start = 0; start < n; start += batch_size) {
        int b = std::min(batch_size, n - start);
        Tensor batch(Shape{b, dx});
        std::copy(images.v.begin() + static_cast<std::ptrdiff_t>(start) * dx,
                  images.v.begin() + static_cast<std::ptrdiff_t>(start + b) * dx, batch.v.begin());
        std::vector<int> ly(labels.begin() + start, labels.begin() + start + b);
        AttackSpec bs = spec;
        bs.seed = Rng::derive(spec.seed, 0xB000 + static_cast<std::uint64_t>(start)).next_u64();
        Tensor adv = pgd(batch, bs, [&](DiffGraph& g, NodeId xp) {
            return head_loss(g, model, xp, g.leaf(wt_val), g.leaf(head.bias), ly);
        });
        auto preds = head.predict(model, adv);
        for (int i = 0; i < b; ++i)
            if (preds[static_cast<std::size_t>(i)] == ly[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

TrainResult train_standard_prompt(PromptContext ctx, const DualEncoderModel& model,
                                  const Dataset& ds, const ShotSample& shots, TrainConfig cfg) {
    cfg.adversary.eps = 0.0;
    cfg.adversary.alpha = 0.0;
    cfg.adversary.random_start = false;
    return train(std::move(ctx), model, ds, shots, cfg);
}

void VisualPrompt::save(const std::string& path) const {
    auto os = io::open_out(path);
    io::write_magic(os, "APTV");
    io::write_pod<std::uint16_t>(os, kVisualVersion);
    io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(phi.numel()));
    io::write_doubles(os, phi.v);
}

VisualPrompt VisualPrompt::load(const std::string& path) {
    auto is = io::open_in(path);
    io::expect_magic(is, "APTV", "visual prompt checkpoint");
    auto ver = io::read_pod<std::uint16_t>(is, "visual prompt checkpoint");
    if (ver != kVisualVersion)
        throw std::runtime_error("visual prompt checkpoint: unsupported version " +
                                 std::to_string(ver));
    auto dx = io::read_pod<std::uint32_t>(is, "visual prompt checkpoint");
    VisualPrompt vp;
    vp.phi = Tensor(Shape{static_cast<int>(dx)},
                    io::read_doubles(is, dx, "visual prompt checkpoint"));
    return vp;
}

void LinearHead::save(const std::string& path) const {
    auto os = io::open_out(path);
    io::write_magic(os, "APTL");
    io::write_pod<std::uint16_t>(os, kHeadVersion);
    io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(weight.shape.dims[0]));
    io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(weight.shape.dims[1]));
    io::write_doubles(os, weight.v);
    io::write_doubles(os, bias.v);
}

LinearHead LinearHead::load(const std::string& path) {
    auto is = io::open_in(path);
    io::expect_magic(is, "APTL", "linear head checkpoint");
    auto ver = io::read_pod<std::uint16_t>(is, "linear head checkpoint");
    if (ver != kHeadVersion)
        throw std::runtime_error("linear head checkpoint: unsupported version " +
                                 std::to_string(ver));
    int c = static_cast<int>(io::read_pod<std::uint32_t>(is, "linear head checkpoint"));
    int d = static_cast<int>(io::read_pod<std::uint32_t>(is, "linear head checkpoint"));
    LinearHead h;
    h.weight = Tensor(Shape{c, d},
                      io::read_doubles(is, static_cast<std::size_t>(c) * d, "linear head checkpoint"));
    h.bias = Tensor(Shape{c}, io::read_doubles(is, static_cast<std::size_t>(c), "linear head checkpoint"));
    return h;
}

}  // namespace aptlab
