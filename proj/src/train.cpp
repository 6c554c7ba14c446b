#include "aptlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "aptlab/io.hpp"
#include "aptlab/rng.hpp"

namespace aptlab {

std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::Constant: return "constant";
        case Strategy::OnTheFly: return "on-the-fly";
        case Strategy::Perturbed: return "perturbed";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (epochs < 0) throw std::invalid_argument("train: negative epoch count");
    if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
    if (lr < 0.0) throw std::invalid_argument("train: negative learning rate");
    adversary.validate();
    if (strategy == Strategy::Constant) {
        if (anchor.tokens.empty())
            throw std::invalid_argument("train: constant strategy requires an anchor prompt");
        if (adversary.random_start)
            throw std::invalid_argument(
                "train: constant strategy requires a deterministic adversary (no random start)");
    }
    if (strategy == Strategy::Perturbed && adversary.alpha_prime <= 0.0)
        throw std::invalid_argument("train: perturbed strategy requires alpha' > 0");
}

void PerturbationCache::warm(const DualEncoderModel& model, const Tensor& class_embeddings,
                             const HandPrompt& anchor) {
    if (warmed) return;
    anchor_features = anchor.encode_all(model, class_embeddings);
    warmed = true;
}

double cosine_lr(double lr0, int step, int total_steps) {
    if (total_steps <= 0) return lr0;
    return lr0 * (1.0 + std::cos(M_PI * static_cast<double>(step) / total_steps)) / 2.0;
}

Batch make_batch(const Dataset& ds, const std::vector<int>& ids) {
    int dx = ds.spec.input_dim;
    Batch b;
    b.ids = ids;
    b.images = Tensor(Shape{static_cast<int>(ids.size()), dx});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        b.labels.push_back(ds.train_labels[static_cast<std::size_t>(ids[i])]);
        std::copy(ds.train_images.v.begin() + static_cast<std::ptrdiff_t>(ids[i]) * dx,
                  ds.train_images.v.begin() + static_cast<std::ptrdiff_t>(ids[i] + 1) * dx,
                  b.images.v.begin() + static_cast<std::ptrdiff_t>(i) * dx);
    }
    return b;
}

namespace {

// Adversarial images for a Constant-strategy batch: generate only the cache
// misses (one sub-batch), then assemble every row from cached deltas.
Tensor constant_adversaries(const DualEncoderModel& model, const Batch& batch,
                            const TrainConfig& cfg, PerturbationCache& cache) {
    int dx = batch.images.shape.dims[1];
    std::vector<int> missing;
    for (std::size_t i = 0; i < batch.ids.size(); ++i)
        if (!cache.deltas.count(batch.ids[i])) missing.push_back(static_cast<int>(i));
    if (!missing.empty()) {
        Tensor sub(Shape{static_cast<int>(missing.size()), dx});
        std::vector<int> sub_labels;
        for (std::size_t k = 0; k < missing.size(); ++k) {
            std::copy(batch.images.v.begin() + static_cast<std::ptrdiff_t>(missing[k]) * dx,
                      batch.images.v.begin() + static_cast<std::ptrdiff_t>(missing[k] + 1) * dx,
                      sub.v.begin() + static_cast<std::ptrdiff_t>(k) * dx);
            sub_labels.push_back(batch.labels[static_cast<std::size_t>(missing[k])]);
        }
        AdversarialBatch adv = attack(model, sub, sub_labels, cache.anchor_features, cfg.adversary);
        for (std::size_t k = 0; k < missing.size(); ++k) {
            Tensor row(Shape{dx});
            std::copy(adv.deltas.v.begin() + static_cast<std::ptrdiff_t>(k) * dx,
                      adv.deltas.v.begin() + static_cast<std::ptrdiff_t>(k + 1) * dx, row.v.begin());
            cache.deltas.emplace(batch.ids[static_cast<std::size_t>(missing[k])], std::move(row));
        }
    }
    Tensor out = batch.images;
    for (std::size_t i = 0; i < batch.ids.size(); ++i) {
        const Tensor& d = cache.deltas.at(batch.ids[i]);
        for (int t = 0; t < dx; ++t) {
            double x = out.at(static_cast<int>(i), t) + d.at(t);
            out.at(static_cast<int>(i), t) = std::min(1.0, std::max(0.0, x));
        }
    }
    return out;
}

}  // namespace

IterationMetrics train_one_iteration(PromptContext& ctx, const DualEncoderModel& model,
                                     const Batch& batch, const TrainConfig& cfg, double lr,
                                     PerturbationCache* cache) {
    cfg.validate();
    if (batch.labels.empty()) throw std::invalid_argument("train: empty batch");
    if ((cache != nullptr) != (cfg.strategy == Strategy::Constant))
        throw std::invalid_argument(
            "train: perturbation cache is required for strategy constant and forbidden otherwise");

    DiffGraph g;
    NodeId ctx_leaf = g.leaf(ctx.vectors, true);
    NodeId zt = ctx.encode_all(g, model, ctx_leaf);
    Tensor prompt_features = g.value(zt);

    Tensor adv_images;
    switch (cfg.strategy) {
        case Strategy::Constant: {
            cache->warm(model, ctx.class_embeddings, cfg.anchor);
            adv_images = constant_adversaries(model, batch, cfg, *cache);
            break;
        }
        case Strategy::OnTheFly: {
            adv_images = attack(model, batch.images, batch.labels, prompt_features, cfg.adversary).images;
            break;
        }
        case Strategy::Perturbed: {
            AttackSpec spec = cfg.adversary;
            spec.perturb_text = true;
            std::vector<Tensor> toks;
            for (int j = 0; j < ctx.num_classes(); ++j) toks.push_back(ctx.assemble(j));
            adv_images = attack(model, batch.images, batch.labels, toks, spec).images;
            break;
        }
    }

    // update on adversarial images against the clean prompt
    NodeId zv = model.encode_image(g, g.leaf(adv_images));
    NodeId loss = model.loss(g, zv, zt, batch.labels);
    g.backward(loss);
    Tensor grad = g.gradient(ctx_leaf);
    for (std::size_t i = 0; i < ctx.vectors.v.size(); ++i) ctx.vectors.v[i] -= lr * grad.v[i];

    return {g.value(loss).item(), lr};
}

TrainResult train(PromptContext ctx, const DualEncoderModel& model, const Dataset& ds,
                  const ShotSample& shots, const TrainConfig& cfg) {
    cfg.validate();
    if (shots.indices.empty()) throw std::invalid_argument("train: empty training sample");
    if (ctx.embed_dim() != model.embed_dim() || ctx.num_classes() != ds.num_classes())
        throw std::invalid_argument("train: context does not match the model and dataset");
    if (ds.spec.input_dim != model.input_dim())
        throw std::invalid_argument("train: dataset input dim does not match the image encoder");

    std::uint64_t weights_before = model.weight_checksum();
    Tensor class_embs_before = ctx.class_embeddings;

    int n = static_cast<int>(shots.indices.size());
    int iters_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    int total_steps = cfg.epochs * iters_per_epoch;

    PerturbationCache cache;
    PerturbationCache* cache_ptr = cfg.strategy == Strategy::Constant ? &cache : nullptr;
    if (cache_ptr) cache.warm(model, ctx.class_embeddings, cfg.anchor);

    TrainResult result{std::move(ctx), {}};
    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<int> order = shots.indices;
        Rng erng = Rng::derive(cfg.seed, 0xE000 + static_cast<std::uint64_t>(epoch));
        erng.shuffle(order);

        double loss_sum = 0.0;
        double last_lr = 0.0;
        for (int start = 0; start < n; start += cfg.batch_size) {
            std::vector<int> ids(order.begin() + start,
                                 order.begin() + std::min(n, start + cfg.batch_size));
            Batch batch = make_batch(ds, ids);
            double lr = cosine_lr(cfg.lr, step, total_steps);
            auto m = train_one_iteration(result.context, model, batch, cfg, lr, cache_ptr);
            loss_sum += m.loss;
            last_lr = lr;
            ++step;
        }

        EpochMetrics em;
        em.epoch = epoch + 1;
        em.lr = last_lr;
        em.train_loss = loss_sum / iters_per_epoch;
        if (cfg.eval_subset > 0) {
            // strided sample so every class is represented (test set is grouped)
            int m = std::min(cfg.eval_subset, ds.test_size());
            int dx = ds.spec.input_dim;
            Tensor sub(Shape{m, dx});
            std::vector<int> ly(static_cast<std::size_t>(m));
            for (int i = 0; i < m; ++i) {
                int src = static_cast<int>(static_cast<std::int64_t>(i) * ds.test_size() / m);
                std::copy(ds.test_images.v.begin() + static_cast<std::ptrdiff_t>(src) * dx,
                          ds.test_images.v.begin() + static_cast<std::ptrdiff_t>(src + 1) * dx,
                          sub.v.begin() + static_cast<std::ptrdiff_t>(i) * dx);
                ly[static_cast<std::size_t>(i)] = ds.test_labels[static_cast<std::size_t>(src)];
            }
            Tensor feats = result.context.encode_all(model);
            em.clean_acc = clean_accuracy(model, sub, ly, feats);
            em.robust_acc = robust_accuracy(model, sub, ly, feats, feats, cfg.adversary);
        }
        result.history.push_back(em);
    }

    if (model.weight_checksum() != weights_before)
        throw std::logic_error("train: frozen encoder weights changed during training");
    if (result.context.class_embeddings.v != class_embs_before.v)
        throw std::logic_error("train: frozen class embeddings changed during training");
    return result;
}

std::string history_csv(const std::vector<EpochMetrics>& history) {
    std::ostringstream os;
    os << "epoch,lr,train_loss,clean_acc,robust_acc\n";
    os.precision(12);
    for (const auto& e : history)
        os << e.epoch << "," << e.lr << "," << e.train_loss << "," << e.clean_acc << ","
           << e.robust_acc << "\n";
    return os.str();
}

CostPrediction cost_report(const TrainConfig& cfg, bool cache_warm) {
    cfg.validate();
    std::int64_t k = cfg.adversary.steps;
    CostPrediction p;
    // update: one forward of both encoders, one backward of the text encoder
    p.image_fwd = 1;
    p.text_fwd = 1;
    p.text_bwd = 1;
    switch (cfg.strategy) {
        case Strategy::Constant:
            if (!cache_warm) {
                p.image_fwd += k;
                p.image_bwd += k;
            }
            break;
        case Strategy::OnTheFly:
            p.image_fwd += k;
            p.image_bwd += k;
            break;
        case Strategy::Perturbed:
            p.image_fwd += k;
            p.image_bwd += k;
            p.text_fwd += k;
            p.text_bwd += k;
            break;
    }
    return p;
}

}  // namespace aptlab
