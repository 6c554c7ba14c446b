#include "aptlab/attack.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "aptlab/rng.hpp"

namespace aptlab {

void AttackSpec::validate() const {
    // eps = 0 is allowed as the degenerate no-op budget (clean evaluation).
    if (eps < 0.0) throw std::invalid_argument("attack: eps must be >= 0");
    if (steps < 1) throw std::invalid_argument("attack: step count must be >= 1");
    if (alpha < 0.0) throw std::invalid_argument("attack: alpha must be >= 0");
    if (perturb_text && alpha_prime <= 0.0)
        throw std::invalid_argument("attack: alpha' required when perturbing text");
}

AttackSpec AttackSpec::evaluation(double eps, std::uint64_t seed) {
    AttackSpec s;
    s.eps = eps;
    s.steps = 100;
    s.alpha = eps / 4.0;
    s.random_start = true;
    s.seed = seed;
    return s;
}

AttackSpec AttackSpec::training(double eps, std::uint64_t seed) {
    AttackSpec s;
    s.eps = eps;
    s.steps = 3;
    s.alpha = 2.0 * eps / 3.0;
    s.random_start = false;
    s.seed = seed;
    return s;
}

namespace {

Tensor init_delta(const Shape& shape, const AttackSpec& spec) {
    if (!spec.random_start) return Tensor(shape);
    Rng rng = Rng::derive(spec.seed, 0x64656c74ull);  // "delt"
    return rng.uniform_tensor(shape, -spec.eps, spec.eps);
}

void project_linf(Tensor& delta, double eps) {
    for (auto& x : delta.v) x = std::min(eps, std::max(-eps, x));
}

Tensor clamp01_sum(const Tensor& images, const Tensor& delta) {
    Tensor out = images;
    for (std::size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = std::min(1.0, std::max(0.0, out.v[i] + delta.v[i]));
    return out;
}

void check_batch(const Tensor& images, const std::vector<int>& labels) {
    if (images.shape.rank() != 2) throw std::invalid_argument("attack: images must be [B,Dx]");
    if (static_cast<int>(labels.size()) != images.shape.dims[0])
        throw std::invalid_argument("attack: label count does not match batch");
}

}  // namespace

AdversarialBatch attack(const DualEncoderModel& model, const Tensor& images,
                        const std::vector<int>& labels, const Tensor& prompt_features,
                        const AttackSpec& spec) {
    spec.validate();
    check_batch(images, labels);
    if (spec.perturb_text)
        throw std::invalid_argument("attack: perturb_text requires token sequences, not features");

    AdversarialBatch out;
    out.deltas = init_delta(images.shape, spec);
    for (int k = 0; k < spec.steps; ++k) {
        DiffGraph g;
        NodeId dl = g.leaf(out.deltas, true);
        NodeId xp = g.clamp(g.add(g.leaf(images), dl), 0.0, 1.0);
        NodeId zv = model.encode_image(g, xp);
        NodeId loss = model.loss(g, zv, g.leaf(prompt_features), labels);
        g.backward(loss);
        out.final_loss = g.value(loss).item();
        Tensor grad = g.gradient(dl);
        for (std::size_t i = 0; i < out.deltas.v.size(); ++i) {
            double s = grad.v[i] > 0.0 ? 1.0 : (grad.v[i] < 0.0 ? -1.0 : 0.0);
            out.deltas.v[i] += spec.alpha * s;
        }
        project_linf(out.deltas, spec.eps);
    }
    out.images = clamp01_sum(images, out.deltas);
    return out;
}

AdversarialBatch attack(const DualEncoderModel& model, const Tensor& images,
                        const std::vector<int>& labels,
                        const std::vector<Tensor>& prompt_token_seqs, const AttackSpec& spec) {
    spec.validate();
    check_batch(images, labels);

    if (!spec.perturb_text) {
        // prompt fixed: encode once, reuse the features for all K steps
        Tensor features = model.encode_text_batch(prompt_token_seqs);
        return attack(model, images, labels, features, spec);
    }

    AdversarialBatch out;
    out.deltas = init_delta(images.shape, spec);
    std::vector<Tensor> dprime;  // per class, unbounded
    dprime.reserve(prompt_token_seqs.size());
    for (const auto& t : prompt_token_seqs) dprime.emplace_back(t.shape);

    for (int k = 0; k < spec.steps; ++k) {
        DiffGraph g;
        NodeId dl = g.leaf(out.deltas, true);
        NodeId xp = g.clamp(g.add(g.leaf(images), dl), 0.0, 1.0);
        NodeId zv = model.encode_image(g, xp);
        std::vector<NodeId> toks, dps;
        for (std::size_t j = 0; j < prompt_token_seqs.size(); ++j) {
            NodeId dp = g.leaf(dprime[j], true);
            dps.push_back(dp);
            toks.push_back(g.add(g.leaf(prompt_token_seqs[j]), dp));
        }
        NodeId zt = model.encode_text_batch(g, toks);
        NodeId loss = model.loss(g, zv, zt, labels);
        g.backward(loss);
        out.final_loss = g.value(loss).item();
        Tensor grad = g.gradient(dl);
        for (std::size_t i = 0; i < out.deltas.v.size(); ++i) {
            double s = grad.v[i] > 0.0 ? 1.0 : (grad.v[i] < 0.0 ? -1.0 : 0.0);
            out.deltas.v[i] += spec.alpha * s;
        }
        project_linf(out.deltas, spec.eps);
        for (std::size_t j = 0; j < dps.size(); ++j) {
            Tensor gp = g.gradient(dps[j]);
            for (std::size_t i = 0; i < dprime[j].v.size(); ++i)
                dprime[j].v[i] += spec.alpha_prime * gp.v[i];
        }
    }
    // delta' only shapes the generation; it is discarded here
    out.images = clamp01_sum(images, out.deltas);
    return out;
}

double clean_accuracy(const DualEncoderModel& model, const Tensor& images,
                      const std::vector<int>& labels, const Tensor& infer_features) {
    check_batch(images, labels);
    if (labels.empty()) throw std::invalid_argument("attack: empty dataset");
    auto preds = model.predict_batch(images, infer_features);
    int ok = 0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (preds[i] == labels[i]) ++ok;
    return static_cast<double>(ok) / static_cast<double>(labels.size());
}

double robust_accuracy(const DualEncoderModel& model, const Tensor& images,
                       const std::vector<int>& labels, const Tensor& infer_features,
                       const Tensor& attack_features, const AttackSpec& spec,
                       std::vector<PredictionRecord>* records, int batch_size) {
    check_batch(images, labels);
    if (labels.empty()) throw std::invalid_argument("attack: empty dataset");
    int n = images.shape.dims[0], dx = images.shape.dims[1];
    int correct = 0;
    for (int start = 0; start < n; start += batch_size) {
        int b = std::min(batch_size, n - start);
        Tensor batch(Shape{b, dx});
        std::copy(images.v.begin() + static_cast<std::ptrdiff_t>(start) * dx,
                  images.v.begin() + static_cast<std::ptrdiff_t>(start + b) * dx, batch.v.begin());
        std::vector<int> ly(labels.begin() + start, labels.begin() + start + b);
        AttackSpec batch_spec = spec;
        batch_spec.seed = Rng::derive(spec.seed, 0xB000 + static_cast<std::uint64_t>(start)).next_u64();
        AdversarialBatch adv = attack(model, batch, ly, attack_features, batch_spec);
        auto adv_preds = model.predict_batch(adv.images, infer_features);
        std::vector<int> clean_preds;
        if (records) clean_preds = model.predict_batch(batch, infer_features);
        for (int i = 0; i < b; ++i) {
            if (adv_preds[static_cast<std::size_t>(i)] == ly[static_cast<std::size_t>(i)]) ++correct;
            if (records)
                records->push_back({start + i, ly[static_cast<std::size_t>(i)],
                                    clean_preds[static_cast<std::size_t>(i)],
                                    adv_preds[static_cast<std::size_t>(i)]});
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace aptlab
