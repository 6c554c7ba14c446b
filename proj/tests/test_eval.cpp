#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>

#include "aptlab/eval.hpp"
#include "aptlab/rng.hpp"

using namespace aptlab;

namespace {

struct Fixture {
    DualEncoderModel model;
    Dataset ds;
    HandPrompt hand;

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
        HandPrompt hand;
        hand.tokens = {0, 3, 6, HandPrompt::kClassSlot};
        hand.label = "a photo of a [CLASS]";
        return {std::move(model), std::move(ds), std::move(hand)};
    }
};

SweepConfig sweep_config(const Fixture& fx) {
    SweepConfig cfg;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 8;
    cfg.train.lr = 0.05;
    cfg.train.adversary = AttackSpec::training(0.05, 0);
    cfg.train.eval_subset = 0;
    cfg.baseline.epochs = 2;
    cfg.baseline.batch_size = 8;
    cfg.baseline.adversary = AttackSpec::training(0.05, 0);
    cfg.eval_attack = AttackSpec::training(0.05, 0);  // cheap eval for unit tests
    cfg.hand = fx.hand;
    cfg.context_len = 4;
    return cfg;
}

}  // namespace

TEST_CASE("single prompt gives a 1x1 matrix with zero relative delta") {
    auto fx = Fixture::make();
    auto probes = probe_prompts(fx.model, fx.ds, 1);
    std::vector<LabeledPrompt> one = {probes[0]};
    auto m = prompt_sensitivity_matrix(fx.model, fx.ds, one, AttackSpec::training(0.05, 3));
    CHECK(m.row_labels.size() == 1);
    CHECK(m.cells.shape.dims == std::vector<int>({1, 1}));
    CHECK(m.relative_delta(0, 0) == 0.0);
    CHECK(m.diagonal_is_row_min(0));
}

TEST_CASE("empty prompt set rejected") {
    auto fx = Fixture::make();
    CHECK_THROWS_AS(prompt_sensitivity_matrix(fx.model, fx.ds, {}, AttackSpec::training(0.05, 3)),
                    std::invalid_argument);
}

TEST_CASE("eps=0 makes every row constant") {
    auto fx = Fixture::make();
    auto probes = probe_prompts(fx.model, fx.ds, 1);
    AttackSpec s;
    s.eps = 0.0;
    s.alpha = 0.0;
    s.steps = 2;
    auto m = prompt_sensitivity_matrix(fx.model, fx.ds, probes, s);
    for (int r = 0; r < m.cells.shape.dims[0]; ++r)
        for (int c = 1; c < m.cells.shape.dims[1]; ++c)
            CHECK(m.cells.at(r, c) == m.cells.at(r, 0));
}

TEST_CASE("matrix csv round-trips exactly") {
    auto fx = Fixture::make();
    auto probes = probe_prompts(fx.model, fx.ds, 1);
    auto m = prompt_sensitivity_matrix(fx.model, fx.ds, probes, AttackSpec::training(0.08, 5));
    auto m2 = RobustnessMatrix::from_csv(m.to_csv());
    CHECK(m2.row_labels == m.row_labels);
    CHECK(m2.col_labels == m.col_labels);
    CHECK(m2.cells.v == m.cells.v);
}

TEST_CASE("probe set: 4 templated + 2 random prompts, deterministic per seed") {
    auto fx = Fixture::make();
    auto a = probe_prompts(fx.model, fx.ds, 7);
    auto b = probe_prompts(fx.model, fx.ds, 7);
    auto c = probe_prompts(fx.model, fx.ds, 8);
    REQUIRE(a.size() == 6);
    CHECK(a[0].label == "a photo of a [CLASS]");
    CHECK(a[4].label == "random-1");
    CHECK(a[5].label == "random-2");
    for (std::size_t i = 0; i < 6; ++i) CHECK(a[i].features.v == b[i].features.v);
    CHECK(a[4].features.v != c[4].features.v);
    // templates are seed-independent
    for (std::size_t i = 0; i < 4; ++i) CHECK(a[i].features.v == c[i].features.v);
}

TEST_CASE("transfer with the learned prompt as probe equals matched robustness") {
    auto fx = Fixture::make();
    Tensor learned = fx.hand.encode_all(fx.model, fx.ds.class_embeddings(fx.model));
    std::vector<LabeledPrompt> probes = {{"self", learned}};
    auto rep = transfer_eval(fx.model, learned, probes, fx.ds, AttackSpec::training(0.08, 5));
    REQUIRE(rep.transfer.size() == 1);
    CHECK(rep.transfer[0] == rep.matched);
}

TEST_CASE("eps=0 transfer equals clean accuracy everywhere") {
    auto fx = Fixture::make();
    Tensor learned = fx.hand.encode_all(fx.model, fx.ds.class_embeddings(fx.model));
    auto probes = probe_prompts(fx.model, fx.ds, 3);
    AttackSpec s;
    s.eps = 0.0;
    s.alpha = 0.0;
    s.steps = 2;
    auto rep = transfer_eval(fx.model, learned, probes, fx.ds, s);
    double clean = clean_accuracy(fx.model, fx.ds.test_images, fx.ds.test_labels, learned);
    CHECK(rep.matched == doctest::Approx(clean));
    for (double t : rep.transfer) CHECK(t == doctest::Approx(clean));
}

TEST_CASE("sweep rejects zero shots and empty lists") {
    auto fx = Fixture::make();
    auto cfg = sweep_config(fx);
    CHECK_THROWS_AS(shot_sweep(Method::HEP, fx.model, fx.ds, {0}, {1}, cfg),
                    std::invalid_argument);
    CHECK_THROWS_AS(shot_sweep(Method::HEP, fx.model, fx.ds, {}, {1}, cfg),
                    std::invalid_argument);
    CHECK_THROWS_AS(shot_sweep(Method::HEP, fx.model, fx.ds, {1}, {}, cfg),
                    std::invalid_argument);
}

TEST_CASE("hand prompt row is shot-independent") {
    auto fx = Fixture::make();
    auto cfg = sweep_config(fx);
    auto rep = shot_sweep(Method::HEP, fx.model, fx.ds, {1, 4}, {1, 2}, cfg);
    REQUIRE(rep.cells.size() == 4);
    REQUIRE(rep.summary.size() == 2);
    CHECK(rep.summary[0].robust_mean == rep.summary[1].robust_mean);
    CHECK(rep.summary[0].clean_mean == rep.summary[1].clean_mean);
}

TEST_CASE("sweep covers every cell and trains each method") {
    auto fx = Fixture::make();
    auto cfg = sweep_config(fx);
    for (Method m : {Method::AptUC, Method::AptCSC, Method::AVP, Method::PAFT}) {
        CAPTURE(to_string(m));
        auto rep = shot_sweep(m, fx.model, fx.ds, {2}, {1, 2}, cfg);
        CHECK(rep.method == to_string(m));
        REQUIRE(rep.cells.size() == 2);
        CHECK(rep.cells[0].seed == 1);
        CHECK(rep.cells[1].seed == 2);
        for (const auto& c : rep.cells) {
            CHECK(c.clean_acc >= 0.0);
            CHECK(c.clean_acc <= 1.0);
            CHECK(c.robust_acc <= c.clean_acc + 1.0);
        }
    }
}

TEST_CASE("report json parses and is reproducible") {
    auto fx = Fixture::make();
    auto cfg = sweep_config(fx);
    auto a = shot_sweep(Method::HEP, fx.model, fx.ds, {1}, {1, 2}, cfg);
    auto b = shot_sweep(Method::HEP, fx.model, fx.ds, {1}, {1, 2}, cfg);
    a.runtime_seconds = b.runtime_seconds = 0.0;  // wall time is the one exempt field
    a.config_json = b.config_json = "{\"eps\": 0.05}";
    CHECK(a.to_json() == b.to_json());
    CHECK(a.to_json().find("\"method\"") != std::string::npos);
}

TEST_CASE("zero shift matches source metrics within sampling noise") {
    auto fx = Fixture::make();
    auto ctx = PromptContext::init(ContextMode::UC, 4, ClassPosition::End,
                                   fx.ds.class_embeddings(fx.model), 3);
    AttackSpec s = AttackSpec::training(0.05, 9);
    auto target = shift(fx.ds, 0.0, 1.0, 99);
    auto src = shift_eval(fx.model, ctx, fx.ds, s);
    auto dst = shift_eval(fx.model, ctx, target, s);
    CHECK(std::abs(src.clean_acc - dst.clean_acc) < 0.35);
    CHECK(std::abs(src.robust_acc - dst.robust_acc) < 0.35);
}

TEST_CASE("novel-class targets reject class-specific methods with N/A") {
    auto fx = Fixture::make();
    auto target = shift(fx.ds, 0.1, 1.0, 5);
    target.novel_classes = true;
    auto csc = PromptContext::init(ContextMode::CSC, 4, ClassPosition::End,
                                   fx.ds.class_embeddings(fx.model), 3);
    CHECK_THROWS_AS(shift_eval(fx.model, csc, target, AttackSpec::training(0.05, 1)),
                    NotApplicableError);
    auto head = LinearHead::zeros(3, fx.model.embed_dim());
    CHECK_THROWS_AS(shift_eval(fx.model, head, target, AttackSpec::training(0.05, 1)),
                    NotApplicableError);
    // a unified context still applies
    auto uc = PromptContext::init(ContextMode::UC, 4, ClassPosition::End,
                                  fx.ds.class_embeddings(fx.model), 3);
    auto m = shift_eval(fx.model, uc, target, AttackSpec::training(0.05, 1));
    CHECK(m.clean_acc >= 0.0);
}

TEST_CASE("accuracy is reproducible from the prediction log records") {
    auto fx = Fixture::make();
    Tensor feats = fx.hand.encode_all(fx.model, fx.ds.class_embeddings(fx.model));
    std::vector<PredictionRecord> recs;
    double acc = robust_accuracy(fx.model, fx.ds.test_images, fx.ds.test_labels, feats, feats,
                                 AttackSpec::training(0.08, 2), &recs);
    REQUIRE(static_cast<int>(recs.size()) == fx.ds.test_size());
    int ok = 0;
    for (const auto& r : recs)
        if (r.adv_pred == r.label) ++ok;
    CHECK(acc == doctest::Approx(static_cast<double>(ok) / recs.size()));
    auto log = predictions_log(recs);
    CHECK(std::count(log.begin(), log.end(), '\n') == fx.ds.test_size() + 1);
}

TEST_CASE("thread cap does not change results") {
    auto fx = Fixture::make();
    auto probes = probe_prompts(fx.model, fx.ds, 1);
    AttackSpec s = AttackSpec::training(0.08, 5);
    setenv("APT_LAB_THREADS", "1", 1);
    CHECK(eval_threads() == 1);
    auto serial = prompt_sensitivity_matrix(fx.model, fx.ds, probes, s);
    setenv("APT_LAB_THREADS", "3", 1);
    CHECK(eval_threads() == 3);
    auto parallel = prompt_sensitivity_matrix(fx.model, fx.ds, probes, s);
    unsetenv("APT_LAB_THREADS");
    CHECK(serial.cells.v == parallel.cells.v);
}
