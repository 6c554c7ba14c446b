#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "aptlab/rng.hpp"
#include "aptlab/train.hpp"

using namespace aptlab;

namespace {

struct Fixture {
    DualEncoderModel model;
    Dataset ds;
    PromptContext ctx;
    HandPrompt anchor;

    static Fixture make(std::uint64_t seed = 11) {
        ModelConfig mc;
        mc.input_dim = 12;
        mc.hidden_dim = 10;
        mc.embed_dim = 8;
        mc.vocab_size = 32;
        mc.num_classes = 3;
        mc.seed = seed;
        auto model = DualEncoderModel::random_init(mc);
        SyntheticSpec sp;
        sp.num_classes = 3;
        sp.input_dim = 12;
        sp.train_per_class = 8;
        sp.test_per_class = 8;
        sp.seed = 21;
        auto ds = generate(sp, mc.vocab_size);
        auto ctx = PromptContext::init(ContextMode::UC, 4, ClassPosition::End,
                                       ds.class_embeddings(model), 3);
        HandPrompt anchor;
        anchor.tokens = {0, 3, 6, HandPrompt::kClassSlot};
        anchor.label = "a photo of a [CLASS]";
        return {std::move(model), std::move(ds), std::move(ctx), std::move(anchor)};
    }
};

TrainConfig small_config(Strategy s) {
    TrainConfig cfg;
    cfg.strategy = s;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.lr = 0.05;
    cfg.adversary = AttackSpec::training(0.05, 0);
    cfg.seed = 5;
    cfg.eval_subset = 0;
    return cfg;
}

double ctx_loss(const Fixture& fx, const PromptContext& ctx, const Batch& batch,
                const Tensor& adv_images) {
    DiffGraph g;
    NodeId zt = ctx.encode_all(g, fx.model, g.leaf(ctx.vectors));
    NodeId zv = fx.model.encode_image(g, g.leaf(adv_images));
    return g.value(fx.model.loss(g, zv, zt, batch.labels)).item();
}

}  // namespace

TEST_CASE("config validation") {
    auto cfg = small_config(Strategy::OnTheFly);
    cfg.epochs = -1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_config(Strategy::Constant);
    cfg.anchor.tokens.clear();
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_config(Strategy::Constant);
    cfg.anchor.tokens = {0, HandPrompt::kClassSlot};
    cfg.adversary.random_start = true;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_config(Strategy::Perturbed);
    cfg.adversary.alpha_prime = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("cosine schedule endpoints and midpoint") {
    CHECK(cosine_lr(0.1, 0, 100) == doctest::Approx(0.1));
    CHECK(cosine_lr(0.1, 50, 100) == doctest::Approx(0.05));
    CHECK(cosine_lr(0.1, 100, 100) == doctest::Approx(0.0).epsilon(1e-12));
    for (int s = 1; s <= 100; ++s) CHECK(cosine_lr(0.1, s, 100) <= cosine_lr(0.1, s - 1, 100));
}

TEST_CASE("lr=0 iteration leaves the context untouched") {
    auto fx = Fixture::make();
    auto cfg = small_config(Strategy::OnTheFly);
    Batch batch = make_batch(fx.ds, {0, 8, 16});
    Tensor before = fx.ctx.vectors;
    auto m = train_one_iteration(fx.ctx, fx.model, batch, cfg, 0.0, nullptr);
    CHECK(fx.ctx.vectors.v == before.v);
    CHECK(m.loss > 0.0);
}

TEST_CASE("cache mismatch with strategy is rejected") {
    auto fx = Fixture::make();
    Batch batch = make_batch(fx.ds, {0, 8});
    PerturbationCache cache;
    auto cfg = small_config(Strategy::OnTheFly);
    CHECK_THROWS_AS(train_one_iteration(fx.ctx, fx.model, batch, cfg, 0.01, &cache),
                    std::invalid_argument);
    cfg = small_config(Strategy::Constant);
    cfg.anchor = fx.anchor;
    CHECK_THROWS_AS(train_one_iteration(fx.ctx, fx.model, batch, cfg, 0.01, nullptr),
                    std::invalid_argument);
}

TEST_CASE("constant cache replays bit-identical perturbations") {
    auto fx = Fixture::make();
    auto cfg = small_config(Strategy::Constant);
    cfg.anchor = fx.anchor;
    Batch batch = make_batch(fx.ds, {0, 8, 16, 1});
    PerturbationCache cache;
    cache.warm(fx.model, fx.ctx.class_embeddings, fx.anchor);

    auto ctx1 = fx.ctx;
    (void)train_one_iteration(ctx1, fx.model, batch, cfg, 0.01, &cache);
    auto first = cache.deltas;
    // second pass, different context: deltas must not move
    (void)train_one_iteration(ctx1, fx.model, batch, cfg, 0.01, &cache);
    REQUIRE(cache.deltas.size() == first.size());
    for (const auto& [id, d] : first) CHECK(cache.deltas.at(id).v == d.v);
}

TEST_CASE("measured encoder passes equal the predicted cost, all strategies") {
    auto fx = Fixture::make();
    Batch batch = make_batch(fx.ds, {0, 8, 16});

    for (Strategy s : {Strategy::Constant, Strategy::OnTheFly, Strategy::Perturbed}) {
        CAPTURE(to_string(s));
        auto cfg = small_config(s);
        cfg.anchor = fx.anchor;
        PerturbationCache cache;
        cache.warm(fx.model, fx.ctx.class_embeddings, fx.anchor);
        PerturbationCache* cp = s == Strategy::Constant ? &cache : nullptr;
        auto ctx = fx.ctx;

        fx.model.image_counter().reset();
        fx.model.text_counter().reset();
        (void)train_one_iteration(ctx, fx.model, batch, cfg, 0.01, cp);
        auto cold = cost_report(cfg, false);
        CHECK(fx.model.image_counter().fwd == cold.image_fwd);
        CHECK(fx.model.image_counter().bwd == cold.image_bwd);
        CHECK(fx.model.text_counter().fwd == cold.text_fwd);
        CHECK(fx.model.text_counter().bwd == cold.text_bwd);

        fx.model.image_counter().reset();
        fx.model.text_counter().reset();
        (void)train_one_iteration(ctx, fx.model, batch, cfg, 0.01, cp);
        auto warm = cost_report(cfg, true);
        if (s == Strategy::Constant) {
            CHECK(fx.model.image_counter().fwd == warm.image_fwd);
            CHECK(fx.model.image_counter().bwd == warm.image_bwd);
            CHECK(fx.model.text_counter().fwd == warm.text_fwd);
            CHECK(fx.model.text_counter().bwd == warm.text_bwd);
        } else {
            CHECK(fx.model.image_counter().fwd == cold.image_fwd);
            CHECK(fx.model.image_counter().bwd == cold.image_bwd);
        }
    }
}

TEST_CASE("predicted per-iteration pass counts") {
    auto cfg = small_config(Strategy::OnTheFly);
    cfg.adversary.steps = 3;
    auto p = cost_report(cfg, false);
    CHECK(p.image_fwd == 4);
    CHECK(p.image_bwd == 3);
    CHECK(p.text_fwd == 1);
    CHECK(p.text_bwd == 1);

    cfg = small_config(Strategy::Constant);
    cfg.anchor.tokens = {0, HandPrompt::kClassSlot};
    cfg.adversary.steps = 3;
    p = cost_report(cfg, true);
    CHECK(p.image_fwd == 1);
    CHECK(p.image_bwd == 0);
    CHECK(p.text_fwd == 1);
    CHECK(p.text_bwd == 1);
    p = cost_report(cfg, false);
    CHECK(p.image_fwd == 4);
    CHECK(p.image_bwd == 3);

    cfg = small_config(Strategy::Perturbed);
    cfg.adversary.steps = 3;
    p = cost_report(cfg, false);
    CHECK(p.image_fwd == 4);
    CHECK(p.image_bwd == 3);
    CHECK(p.text_fwd == 4);
    CHECK(p.text_bwd == 4);
}

TEST_CASE("context gradient agrees with central finite differences") {
    auto fx = Fixture::make();
    Batch batch = make_batch(fx.ds, {0, 8, 16, 2});

    // fixed adversarial images so both sides evaluate the same loss
    Tensor feats = fx.ctx.encode_all(fx.model);
    auto cfg = small_config(Strategy::OnTheFly);
    Tensor adv = attack(fx.model, batch.images, batch.labels, feats, cfg.adversary).images;

    DiffGraph g;
    NodeId leaf = g.leaf(fx.ctx.vectors, true);
    NodeId zt = fx.ctx.encode_all(g, fx.model, leaf);
    NodeId zv = fx.model.encode_image(g, g.leaf(adv));
    g.backward(fx.model.loss(g, zv, zt, batch.labels));
    Tensor grad = g.gradient(leaf);

    double h = 1e-5;
    for (std::size_t i = 0; i < fx.ctx.vectors.v.size(); i += 3) {
        auto cp = fx.ctx;
        cp.vectors.v[i] += h;
        double up = ctx_loss(fx, cp, batch, adv);
        cp.vectors.v[i] -= 2 * h;
        double dn = ctx_loss(fx, cp, batch, adv);
        double fd = (up - dn) / (2 * h);
        CHECK(grad.v[i] == doctest::Approx(fd).epsilon(1e-4).scale(1.0));
    }
}

TEST_CASE("training reduces the adversarial loss") {
    auto fx = Fixture::make();
    auto shots = sample_shots(fx.ds, 8, 1);
    for (Strategy s : {Strategy::Constant, Strategy::OnTheFly, Strategy::Perturbed}) {
        CAPTURE(to_string(s));
        auto cfg = small_config(s);
        cfg.anchor = fx.anchor;
        cfg.epochs = 15;
        cfg.lr = 0.1;
        auto res = train(fx.ctx, fx.model, fx.ds, shots, cfg);
        REQUIRE(res.history.size() == 15);
        double head = (res.history[0].train_loss + res.history[1].train_loss) / 2;
        double tail = (res.history[13].train_loss + res.history[14].train_loss) / 2;
        CHECK(tail < head);
    }
}

TEST_CASE("zero epochs returns the initial context") {
    auto fx = Fixture::make();
    auto shots = sample_shots(fx.ds, 4, 1);
    auto cfg = small_config(Strategy::OnTheFly);
    cfg.epochs = 0;
    auto res = train(fx.ctx, fx.model, fx.ds, shots, cfg);
    CHECK(res.history.empty());
    CHECK(res.context.vectors.v == fx.ctx.vectors.v);
}

TEST_CASE("training is deterministic for a fixed seed") {
    auto fx = Fixture::make();
    auto shots = sample_shots(fx.ds, 4, 1);
    auto cfg = small_config(Strategy::OnTheFly);
    cfg.epochs = 3;
    cfg.eval_subset = 16;
    auto a = train(fx.ctx, fx.model, fx.ds, shots, cfg);
    auto b = train(fx.ctx, fx.model, fx.ds, shots, cfg);
    CHECK(a.context.vectors.v == b.context.vectors.v);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].robust_acc == b.history[i].robust_acc);
    }
}

TEST_CASE("history csv has a row per epoch") {
    std::vector<EpochMetrics> h = {{1, 0.1, 2.0, 0.5, 0.25}, {2, 0.05, 1.5, 0.6, 0.3}};
    auto csv = history_csv(h);
    CHECK(csv.rfind("epoch,lr,train_loss,clean_acc,robust_acc\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("encoders stay frozen across a training run") {
    auto fx = Fixture::make();
    auto before = fx.model.weight_checksum();
    auto shots = sample_shots(fx.ds, 4, 1);
    auto cfg = small_config(Strategy::Perturbed);
    (void)train(fx.ctx, fx.model, fx.ds, shots, cfg);
    CHECK(fx.model.weight_checksum() == before);
}
