#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "aptlab/baselines.hpp"
#include "aptlab/rng.hpp"

using namespace aptlab;

namespace {

struct Fixture {
    DualEncoderModel model;
    Dataset ds;
    HandPrompt prompt;

    static Fixture make(std::uint64_t seed = 11, std::uint64_t data_seed = 21) {
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
        sp.seed = data_seed;
        auto ds = generate(sp, mc.vocab_size);
        HandPrompt prompt;
        prompt.tokens = {0, 3, 6, HandPrompt::kClassSlot};
        prompt.label = "a photo of a [CLASS]";
        return {std::move(model), std::move(ds), std::move(prompt)};
    }
};

BaselineConfig small_config() {
    BaselineConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 8;
    cfg.lr = 0.05;
    cfg.adversary = AttackSpec::training(0.05, 0);
    cfg.seed = 5;
    return cfg;
}

double avp_joint_loss(const Fixture& fx, const Tensor& phi, const Tensor& clean, const Tensor& adv,
                      const std::vector<int>& labels, const Tensor& features) {
    DiffGraph g;
    NodeId p = g.leaf(phi);
    NodeId f = g.leaf(features);
    NodeId zc = fx.model.encode_image(g, g.clamp(g.add_rowvec(g.leaf(clean), p), 0.0, 1.0));
    NodeId za = fx.model.encode_image(g, g.clamp(g.add_rowvec(g.leaf(adv), p), 0.0, 1.0));
    return g.value(g.add(fx.model.loss(g, zc, f, labels), fx.model.loss(g, za, f, labels))).item();
}

}  // namespace

TEST_CASE("config validation") {
    auto cfg = small_config();
    cfg.epochs = -2;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_config();
    cfg.lr = -0.1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("paft step decay hits 0.1x at a quarter and 0.01x at half") {
    CHECK(paft_step_lr(0.1, 0, 40) == doctest::Approx(0.1));
    CHECK(paft_step_lr(0.1, 9, 40) == doctest::Approx(0.1));
    CHECK(paft_step_lr(0.1, 10, 40) == doctest::Approx(0.01));
    CHECK(paft_step_lr(0.1, 20, 40) == doctest::Approx(0.001));
    CHECK(paft_step_lr(0.1, 39, 40) == doctest::Approx(0.001));
}

TEST_CASE("lr=0 leaves the visual prompt at zero init") {
    auto fx = Fixture::make();
    auto cfg = small_config();
    cfg.lr = 0.0;
    cfg.epochs = 2;
    auto vp = train_avp(fx.model, fx.ds, sample_shots(fx.ds, 4, 1), fx.prompt, cfg);
    for (double x : vp.phi.v) CHECK(x == 0.0);
}

TEST_CASE("avp joint-loss gradient matches finite differences") {
    auto fx = Fixture::make();
    Tensor features = fx.prompt.encode_all(fx.model, fx.ds.class_embeddings(fx.model));
    Batch batch = make_batch(fx.ds, {0, 8, 16, 3});
    auto cfg = small_config();
    Tensor adv = attack(fx.model, batch.images, batch.labels, features, cfg.adversary).images;
    Rng r(9);
    Tensor phi = r.gaussian_tensor(Shape{fx.ds.spec.input_dim}, 0.0, 0.01);

    DiffGraph g;
    NodeId p = g.leaf(phi, true);
    NodeId f = g.leaf(features);
    NodeId zc = fx.model.encode_image(g, g.clamp(g.add_rowvec(g.leaf(batch.images), p), 0.0, 1.0));
    NodeId za = fx.model.encode_image(g, g.clamp(g.add_rowvec(g.leaf(adv), p), 0.0, 1.0));
    g.backward(g.add(fx.model.loss(g, zc, f, batch.labels), fx.model.loss(g, za, f, batch.labels)));
    Tensor grad = g.gradient(p);

    double h = 1e-5;
    for (std::size_t i = 0; i < phi.v.size(); ++i) {
        Tensor cp = phi;
        cp.v[i] += h;
        double up = avp_joint_loss(fx, cp, batch.images, adv, batch.labels, features);
        cp.v[i] -= 2 * h;
        double dn = avp_joint_loss(fx, cp, batch.images, adv, batch.labels, features);
        CHECK(grad.v[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-4).scale(1.0));
    }
}

TEST_CASE("avp training mutates neither weights nor the hand prompt") {
    auto fx = Fixture::make();
    auto before = fx.model.weight_checksum();
    auto tokens = fx.prompt.tokens;
    auto cfg = small_config();
    cfg.epochs = 2;
    (void)train_avp(fx.model, fx.ds, sample_shots(fx.ds, 4, 1), fx.prompt, cfg);
    CHECK(fx.model.weight_checksum() == before);
    CHECK(fx.prompt.tokens == tokens);
}

TEST_CASE("zero head gives uniform logits and exact chance accuracy") {
    auto fx = Fixture::make();
    auto head = LinearHead::zeros(3, fx.model.embed_dim());
    auto preds = head.predict(fx.model, fx.ds.test_images);
    for (int p : preds) CHECK(p == 0);  // ties resolve to the lowest class
    double acc = head_clean_accuracy(fx.model, head, fx.ds.test_images, fx.ds.test_labels);
    CHECK(acc == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("head gradient matches finite differences") {
    auto fx = Fixture::make();
    Batch batch = make_batch(fx.ds, {0, 8, 16, 5});
    Rng r(13);
    LinearHead head;
    head.weight = r.gaussian_tensor(Shape{3, fx.model.embed_dim()}, 0.0, 0.1);
    head.bias = r.gaussian_tensor(Shape{3}, 0.0, 0.1);

    auto loss_at = [&](const LinearHead& hd) {
        DiffGraph g;
        NodeId z = fx.model.encode_image(g, g.leaf(batch.images));
        Tensor wt(Shape{fx.model.embed_dim(), 3});
        for (int j = 0; j < 3; ++j)
            for (int t = 0; t < fx.model.embed_dim(); ++t) wt.at(t, j) = hd.weight.at(j, t);
        NodeId logits = g.add_rowvec(g.matmul(z, g.leaf(wt)), g.leaf(hd.bias));
        return g.value(g.mean(g.nll(g.softmax(logits), batch.labels))).item();
    };

    DiffGraph g;
    NodeId z = fx.model.encode_image(g, g.leaf(batch.images));
    Tensor wt(Shape{fx.model.embed_dim(), 3});
    for (int j = 0; j < 3; ++j)
        for (int t = 0; t < fx.model.embed_dim(); ++t) wt.at(t, j) = head.weight.at(j, t);
    NodeId wleaf = g.leaf(wt, true);
    NodeId bleaf = g.leaf(head.bias, true);
    g.backward(g.mean(g.nll(g.softmax(g.add_rowvec(g.matmul(z, wleaf), bleaf)), batch.labels)));
    Tensor gw = g.gradient(wleaf);
    Tensor gb = g.gradient(bleaf);

    double h = 1e-5;
    for (int j = 0; j < 3; ++j)
        for (int t = 0; t < fx.model.embed_dim(); t += 2) {
            auto cp = head;
            cp.weight.at(j, t) += h;
            double up = loss_at(cp);
            cp.weight.at(j, t) -= 2 * h;
            double dn = loss_at(cp);
            CHECK(gw.at(t, j) == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-4).scale(1.0));
        }
    for (int j = 0; j < 3; ++j) {
        auto cp = head;
        cp.bias.at(j) += h;
        double up = loss_at(cp);
        cp.bias.at(j) -= 2 * h;
        double dn = loss_at(cp);
        CHECK(gb.at(j) == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-4).scale(1.0));
    }
}

TEST_CASE("paft ignores the text encoder entirely") {
    auto fx = Fixture::make();
    auto cfg = small_config();
    cfg.lr = 0.1;
    cfg.epochs = 4;
    fx.model.text_counter().reset();
    auto head = train_paft(fx.model, fx.ds, sample_shots(fx.ds, 8, 1), cfg);
    (void)head_robust_accuracy(fx.model, head, fx.ds.test_images, fx.ds.test_labels, cfg.adversary);
    CHECK(fx.model.text_counter().fwd == 0);
    CHECK(fx.model.text_counter().bwd == 0);
}

TEST_CASE("paft training lifts accuracy above chance") {
    auto fx = Fixture::make();
    auto cfg = small_config();
    cfg.lr = 0.1;
    cfg.epochs = 12;
    auto head = train_paft(fx.model, fx.ds, sample_shots(fx.ds, 8, 1), cfg);
    double acc = head_clean_accuracy(fx.model, head, fx.ds.test_images, fx.ds.test_labels);
    CHECK(acc > 1.0 / 3.0 + 0.15);
}

TEST_CASE("standard prompt tuning equals the adversarial loop at zero budget") {
    auto fx = Fixture::make();
    auto ctx = PromptContext::init(ContextMode::UC, 4, ClassPosition::End,
                                   fx.ds.class_embeddings(fx.model), 3);
    auto shots = sample_shots(fx.ds, 4, 1);
    TrainConfig cfg;
    cfg.strategy = Strategy::OnTheFly;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.lr = 0.05;
    cfg.adversary = AttackSpec::training(0.05, 0);
    cfg.seed = 5;
    cfg.eval_subset = 0;

    auto std_res = train_standard_prompt(ctx, fx.model, fx.ds, shots, cfg);
    TrainConfig zero = cfg;
    zero.adversary.eps = 0.0;
    zero.adversary.alpha = 0.0;
    auto apt_res = train(ctx, fx.model, fx.ds, shots, zero);
    CHECK(std_res.context.vectors.v == apt_res.context.vectors.v);

    zero.epochs = 0;
    auto none = train_standard_prompt(ctx, fx.model, fx.ds, shots, zero);
    CHECK(none.context.vectors.v == ctx.vectors.v);
}

TEST_CASE("checkpoints round-trip bit for bit") {
    Rng r(31);
    VisualPrompt vp;
    vp.phi = r.gaussian_tensor(Shape{12}, 0.0, 0.3);
    vp.save("/tmp/aptlab_test.aptv");
    auto vp2 = VisualPrompt::load("/tmp/aptlab_test.aptv");
    CHECK(vp2.phi.v == vp.phi.v);
    CHECK(vp2.phi.shape.dims == vp.phi.shape.dims);

    LinearHead h;
    h.weight = r.gaussian_tensor(Shape{3, 8}, 0.0, 0.5);
    h.bias = r.gaussian_tensor(Shape{3}, 0.0, 0.5);
    h.save("/tmp/aptlab_test.aptl");
    auto h2 = LinearHead::load("/tmp/aptlab_test.aptl");
    CHECK(h2.weight.v == h.weight.v);
    CHECK(h2.bias.v == h.bias.v);
    std::remove("/tmp/aptlab_test.aptv");
    std::remove("/tmp/aptlab_test.aptl");

    CHECK_THROWS_AS(VisualPrompt::load("/tmp/aptlab_test.aptv"), std::runtime_error);
}
