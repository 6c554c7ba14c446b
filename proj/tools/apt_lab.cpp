#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "aptlab/baselines.hpp"
#include "aptlab/eval.hpp"
#include "aptlab/rng.hpp"

using namespace aptlab;
using nlohmann::ordered_json;

namespace {

double parse_eps(const std::string& s) {
    auto slash = s.find('/');
    try {
        if (slash == std::string::npos) return std::stod(s);
        double num = std::stod(s.substr(0, slash));
        double den = std::stod(s.substr(slash + 1));
        if (den == 0.0) throw std::invalid_argument("zero denominator");
        return num / den;
    } catch (const std::exception&) {
        throw std::invalid_argument("cannot parse budget '" + s + "' (use 0.0157 or 4/255)");
    }
}

DualEncoderModel load_or_default_model(const std::string& path) {
    if (path.empty()) return DualEncoderModel::random_init(ModelConfig{});
    return DualEncoderModel::load(path);
}

void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream os(p);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    os << content;
}

void emit_config(const std::string& out_dir, const ordered_json& cfg) {
    std::filesystem::create_directories(out_dir);
    std::string text = cfg.dump(2) + "\n";
    std::cout << "resolved config:\n" << text;
    write_file(std::filesystem::path(out_dir) / "config.resolved.json", text);
}

HandPrompt parse_prompt(const DualEncoderModel& model, const Dataset& ds,
                        const std::string& text) {
    auto names = vocabulary_names(model.vocab_size(), ds.num_classes());
    HandPrompt p;
    p.label = text;
    std::istringstream is(text);
    std::string w;
    while (is >> w) {
        if (w == "[CLASS]") {
            p.tokens.push_back(HandPrompt::kClassSlot);
            continue;
        }
        auto it = std::find(names.begin(), names.end(), w);
        if (it == names.end())
            throw std::invalid_argument("prompt word '" + w + "' not in the lexicon");
        p.tokens.push_back(static_cast<int>(it - names.begin()));
    }
    (void)p.class_slot();  // validates exactly one [CLASS]
    return p;
}

ContextMode parse_mode(const std::string& s) {
    if (s == "uc") return ContextMode::UC;
    if (s == "csc") return ContextMode::CSC;
    throw std::invalid_argument("unknown context mode '" + s + "' (uc|csc)");
}

ClassPosition parse_position(const std::string& s) {
    if (s == "front") return ClassPosition::Front;
    if (s == "middle") return ClassPosition::Middle;
    if (s == "end") return ClassPosition::End;
    throw std::invalid_argument("unknown class position '" + s + "' (front|middle|end)");
}

Strategy parse_strategy(const std::string& s) {
    if (s == "constant") return Strategy::Constant;
    if (s == "on-the-fly") return Strategy::OnTheFly;
    if (s == "perturbed") return Strategy::Perturbed;
    throw std::invalid_argument("unknown strategy '" + s + "' (constant|on-the-fly|perturbed)");
}

ordered_json cost_json(const CostPrediction& p) {
    return {{"image_fwd", p.image_fwd},
            {"image_bwd", p.image_bwd},
            {"text_fwd", p.text_fwd},
            {"text_bwd", p.text_bwd}};
}

struct CommonAttackFlags {
    std::string eps = "4/255";
    int steps = 100;
    double alpha = -1.0;  // -1: eps/4 for evaluation commands
    bool no_random_start = false;
    std::uint64_t seed = 0;

    void add(CLI::App* cmd) {
        cmd->add_option("--eps", eps, "attack budget, decimal or fraction like 4/255");
        cmd->add_option("--steps", steps, "PGD iterations");
        cmd->add_option("--alpha", alpha, "PGD step size (default eps/4)");
        cmd->add_flag("--no-random-start", no_random_start, "start from a zero perturbation");
        cmd->add_option("--seed", seed, "attack randomness seed");
    }

    AttackSpec resolve() const {
        AttackSpec s;
        s.eps = parse_eps(eps);
        s.steps = steps;
        s.alpha = alpha < 0.0 ? s.eps / 4.0 : alpha;
        s.random_start = !no_random_start;
        s.seed = seed;
        return s;
    }

    ordered_json json(const AttackSpec& s) const {
        return {{"eps", s.eps},
                {"steps", s.steps},
                {"alpha", s.alpha},
                {"random_start", s.random_start},
                {"seed", s.seed}};
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"adversarial prompt tuning lab"};
    app.require_subcommand(1);
    std::function<void()> action;

    // gen-data
    {
        auto* cmd = app.add_subcommand("gen-data", "generate a synthetic dataset");
        auto opts = std::make_shared<SyntheticSpec>();
        auto out = std::make_shared<std::string>("run");
        auto vocab = std::make_shared<int>(64);
        cmd->add_option("--classes", opts->num_classes);
        cmd->add_option("--dim", opts->input_dim);
        cmd->add_option("--sigma", opts->noise_sigma);
        cmd->add_option("--train-per-class", opts->train_per_class);
        cmd->add_option("--test-per-class", opts->test_per_class);
        cmd->add_option("--seed", opts->seed);
        cmd->add_option("--vocab", *vocab, "vocabulary size the lexicon must fit");
        cmd->add_option("--out", *out, "run directory");
        cmd->callback([=, &action] {
            action = [=] {
                emit_config(*out, {{"command", "gen-data"},
                                   {"classes", opts->num_classes},
                                   {"dim", opts->input_dim},
                                   {"sigma", opts->noise_sigma},
                                   {"train_per_class", opts->train_per_class},
                                   {"test_per_class", opts->test_per_class},
                                   {"vocab", *vocab},
                                   {"seed", opts->seed},
                                   {"out", *out}});
                auto ds = generate(*opts, *vocab);
                auto path = std::filesystem::path(*out) / "data.aptd";
                ds.save(path.string());
                std::cout << "wrote " << path.string() << " (" << ds.train_size() << " train, "
                          << ds.test_size() << " test)\n";
            };
        });
    }

    // train
    {
        auto* cmd = app.add_subcommand("train", "adversarial prompt tuning");
        struct Flags {
            std::string data, model, out = "run";
            std::string strategy = "on-the-fly", mode = "uc", position = "end";
            std::string eps = "4/255", anchor = "a photo of a [CLASS]";
            int m = 16, shots = 16, steps = 3, epochs = 50, batch_size = 32, eval_subset = 128;
            double alpha = -1.0, alpha_prime = 0.01, lr = 0.002;
            std::uint64_t seed = 0;
        };
        auto f = std::make_shared<Flags>();
        cmd->add_option("--data", f->data, "dataset file")->required();
        cmd->add_option("--model", f->model, "model checkpoint (default: fresh seed-42 model)");
        cmd->add_option("--out", f->out, "run directory");
        cmd->add_option("--strategy", f->strategy, "constant|on-the-fly|perturbed");
        cmd->add_option("--mode", f->mode, "uc|csc");
        cmd->add_option("--m", f->m, "context length");
        cmd->add_option("--position", f->position, "front|middle|end");
        cmd->add_option("--shots", f->shots, "training examples per class");
        cmd->add_option("--eps", f->eps, "training attack budget");
        cmd->add_option("--steps", f->steps, "training attack iterations");
        cmd->add_option("--alpha", f->alpha, "attack step size (default 2*eps/steps)");
        cmd->add_option("--alpha-prime", f->alpha_prime, "text step size (perturbed strategy)");
        cmd->add_option("--epochs", f->epochs);
        cmd->add_option("--batch-size", f->batch_size);
        cmd->add_option("--lr", f->lr, "initial learning rate (cosine schedule)");
        cmd->add_option("--eval-subset", f->eval_subset, "test examples per epoch metric (0 off)");
        cmd->add_option("--anchor", f->anchor, "attack prompt for the constant strategy");
        cmd->add_option("--seed", f->seed);
        cmd->callback([=, &action] {
            action = [=] {
                auto model = load_or_default_model(f->model);
                auto ds = Dataset::load(f->data);
                TrainConfig tc;
                tc.strategy = parse_strategy(f->strategy);
                tc.epochs = f->epochs;
                tc.batch_size = f->batch_size;
                tc.lr = f->lr;
                tc.seed = f->seed;
                tc.eval_subset = f->eval_subset;
                tc.adversary.eps = parse_eps(f->eps);
                tc.adversary.steps = f->steps;
                tc.adversary.alpha =
                    f->alpha < 0.0 ? 2.0 * tc.adversary.eps / f->steps : f->alpha;
                tc.adversary.alpha_prime = f->alpha_prime;
                tc.adversary.random_start = false;
                tc.adversary.seed = f->seed;
                tc.anchor = parse_prompt(model, ds, f->anchor);
                tc.validate();
                emit_config(f->out,
                            {{"command", "train"},
                             {"data", f->data},
                             {"model", f->model.empty() ? "default" : f->model},
                             {"strategy", f->strategy},
                             {"mode", f->mode},
                             {"m", f->m},
                             {"position", f->position},
                             {"shots", f->shots},
                             {"epochs", f->epochs},
                             {"batch_size", f->batch_size},
                             {"lr", f->lr},
                             {"eval_subset", f->eval_subset},
                             {"anchor", f->anchor},
                             {"seed", f->seed},
                             {"adversary",
                              {{"eps", tc.adversary.eps},
                               {"steps", tc.adversary.steps},
                               {"alpha", tc.adversary.alpha},
                               {"alpha_prime", tc.adversary.alpha_prime}}},
                             {"out", f->out}});
                auto ctx = PromptContext::init(parse_mode(f->mode), f->m,
                                               parse_position(f->position),
                                               ds.class_embeddings(model),
                                               Rng::derive(f->seed, 0xC122ull).next_u64());
                auto shots = sample_shots(ds, f->shots, f->seed);
                auto res = train(std::move(ctx), model, ds, shots, tc);
                auto dir = std::filesystem::path(f->out);
                res.context.save((dir / "ctx.aptc").string());
                write_file(dir / "history.csv", history_csv(res.history));
                if (!res.history.empty())
                    std::cout << "final epoch: loss " << res.history.back().train_loss
                              << " clean " << res.history.back().clean_acc << " robust "
                              << res.history.back().robust_acc << "\n";
                std::cout << "wrote " << (dir / "ctx.aptc").string() << " and history.csv\n";
            };
        });
    }

    // attack
    {
        auto* cmd = app.add_subcommand("attack", "PGD evaluation of a prompt");
        struct Flags {
            std::string data, model, ctx, prompt = "a photo of a [CLASS]", out = "run";
            CommonAttackFlags atk;
        };
        auto f = std::make_shared<Flags>();
        cmd->add_option("--data", f->data)->required();
        cmd->add_option("--model", f->model);
        cmd->add_option("--ctx", f->ctx, "learned context checkpoint (default: hand prompt)");
        cmd->add_option("--prompt", f->prompt, "hand prompt when no context is given");
        cmd->add_option("--out", f->out);
        f->atk.add(cmd);
        cmd->callback([=, &action] {
            action = [=] {
                auto model = load_or_default_model(f->model);
                auto ds = Dataset::load(f->data);
                AttackSpec spec = f->atk.resolve();
                spec.validate();
                emit_config(f->out, {{"command", "attack"},
                                     {"data", f->data},
                                     {"model", f->model.empty() ? "default" : f->model},
                                     {"ctx", f->ctx},
                                     {"prompt", f->prompt},
                                     {"attack", f->atk.json(spec)},
                                     {"out", f->out}});
                Tensor feats =
                    f->ctx.empty()
                        ? parse_prompt(model, ds, f->prompt)
                              .encode_all(model, ds.class_embeddings(model))
                        : PromptContext::load(f->ctx, ds.class_embeddings(model))
                              .encode_all(model);
                std::vector<PredictionRecord> recs;
                double clean = clean_accuracy(model, ds.test_images, ds.test_labels, feats);
                double robust = robust_accuracy(model, ds.test_images, ds.test_labels, feats,
                                                feats, spec, &recs);
                write_file(std::filesystem::path(f->out) / "predictions.log",
                           predictions_log(recs));
                std::cout << "clean accuracy  " << clean << "\n"
                          << "robust accuracy " << robust << "\n";
            };
        });
    }

    // eval-matrix
    {
        auto* cmd = app.add_subcommand("eval-matrix",
                                       "inference-prompt x attack-prompt robustness matrix");
        struct Flags {
            std::string data, model, ctx, prompts, out = "run";
            std::uint64_t probe_seed = 0;
            CommonAttackFlags atk;
        };
        auto f = std::make_shared<Flags>();
        cmd->add_option("--data", f->data)->required();
        cmd->add_option("--model", f->model);
        cmd->add_option("--ctx", f->ctx, "add a learned context as prompt 'learned'");
        cmd->add_option("--prompts", f->prompts, "JSON file of {label, tokens[]} prompts");
        cmd->add_option("--probe-seed", f->probe_seed, "seed for the default 6-probe set");
        cmd->add_option("--out", f->out);
        f->atk.add(cmd);
        cmd->callback([=, &action] {
            action = [=] {
                auto model = load_or_default_model(f->model);
                auto ds = Dataset::load(f->data);
                AttackSpec spec = f->atk.resolve();
                spec.validate();
                emit_config(f->out, {{"command", "eval-matrix"},
                                     {"data", f->data},
                                     {"model", f->model.empty() ? "default" : f->model},
                                     {"ctx", f->ctx},
                                     {"prompts", f->prompts},
                                     {"probe_seed", f->probe_seed},
                                     {"attack", f->atk.json(spec)},
                                     {"out", f->out}});
                std::vector<LabeledPrompt> prompts;
                if (f->prompts.empty()) {
                    prompts = probe_prompts(model, ds, f->probe_seed);
                } else {
                    std::ifstream is(f->prompts);
                    if (!is) throw std::runtime_error("cannot read " + f->prompts);
                    nlohmann::json j;
                    is >> j;
                    for (const auto& e : j) {
                        HandPrompt p;
                        p.label = e.at("label").get<std::string>();
                        p.tokens = e.at("tokens").get<std::vector<int>>();
                        prompts.push_back(
                            {p.label, p.encode_all(model, ds.class_embeddings(model))});
                    }
                }
                if (!f->ctx.empty())
                    prompts.push_back(
                        {"learned",
                         PromptContext::load(f->ctx, ds.class_embeddings(model)).encode_all(model)});
                auto m = prompt_sensitivity_matrix(model, ds, prompts, spec);
                write_file(std::filesystem::path(f->out) / "matrix.csv", m.to_csv());
                int diag_min = 0;
                for (std::size_t r = 0; r < m.row_labels.size(); ++r)
                    if (m.diagonal_is_row_min(static_cast<int>(r))) ++diag_min;
                std::cout << "wrote matrix.csv; matched diagonal is the row minimum for "
                          << diag_min << "/" << m.row_labels.size() << " rows\n";
            };
        });
    }

    // transfer-eval
    {
        auto* cmd = app.add_subcommand("transfer-eval",
                                       "robustness under adversaries from other prompts");
        struct Flags {
            std::string data, model, ctx, out = "run";
            std::uint64_t probe_seed = 0;
            CommonAttackFlags atk;
        };
        auto f = std::make_shared<Flags>();
        cmd->add_option("--data", f->data)->required();
        cmd->add_option("--model", f->model);
        cmd->add_option("--ctx", f->ctx, "learned context checkpoint")->required();
        cmd->add_option("--probe-seed", f->probe_seed);
        cmd->add_option("--out", f->out);
        f->atk.add(cmd);
        cmd->callback([=, &action] {
            action = [=] {
                auto model = load_or_default_model(f->model);
                auto ds = Dataset::load(f->data);
                AttackSpec spec = f->atk.resolve();
                spec.validate();
                emit_config(f->out, {{"command", "transfer-eval"},
                                     {"data", f->data},
                                     {"model", f->model.empty() ? "default" : f->model},
                                     {"ctx", f->ctx},
                                     {"probe_seed", f->probe_seed},
                                     {"attack", f->atk.json(spec)},
                                     {"out", f->out}});
                Tensor learned =
                    PromptContext::load(f->ctx, ds.class_embeddings(model)).encode_all(model);
                auto probes = probe_prompts(model, ds, f->probe_seed);
                auto rep = transfer_eval(model, learned, probes, ds, spec);
                ordered_json j;
                j["matched"] = rep.matched;
                j["transfer"] = ordered_json::array();
                for (std::size_t i = 0; i < probes.size(); ++i)
                    j["transfer"].push_back(
                        {{"prompt", probes[i].label}, {"robust_acc", rep.transfer[i]}});
                write_file(std::filesystem::path(f->out) / "report.json", j.dump(2) + "\n");
                std::cout << "matched robustness " << rep.matched << "; wrote report.json\n";
            };
        });
    }

    // shot-sweep
    {
        auto* cmd = app.add_subcommand("shot-sweep", "method x shots x seeds grid");
        struct Flags {
            std::string data, model, method = "apt-uc", out = "run";
            std::string strategy = "on-the-fly", mode = "uc", position = "end";
            std::string train_eps = "4/255", eval_eps = "4/255";
            std::string hand = "a photo of a [CLASS]";
            std::vector<int> shots = {1, 4, 16};
            std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
            int m = 16, epochs = 50, batch_size = 32, train_steps = 3, eval_steps = 100;
            double lr = 0.002, baseline_lr = 0.1, alpha_prime = 0.01;
        };
        auto f = std::make_shared<Flags>();
        cmd->add_option("--data", f->data)->required();
        cmd->add_option("--model", f->model);
        cmd->add_option("--method", f->method, "apt-uc|apt-csc|avp|paft|hep");
        cmd->add_option("--shots", f->shots, "shot counts")->delimiter(',');
        cmd->add_option("--seeds", f->seeds, "seed list")->delimiter(',');
        cmd->add_option("--strategy", f->strategy);
        cmd->add_option("--m", f->m);
        cmd->add_option("--position", f->position);
        cmd->add_option("--epochs", f->epochs);
        cmd->add_option("--batch-size", f->batch_size);
        cmd->add_option("--lr", f->lr);
        cmd->add_option("--baseline-lr", f->baseline_lr);
        cmd->add_option("--train-eps", f->train_eps);
        cmd->add_option("--train-steps", f->train_steps);
        cmd->add_option("--alpha-prime", f->alpha_prime, "text step size (perturbed strategy)");
        cmd->add_option("--eval-eps", f->eval_eps);
        cmd->add_option("--eval-steps", f->eval_steps);
        cmd->add_option("--hand", f->hand, "hand prompt for hep/avp/constant anchor");
        cmd->add_option("--out", f->out);
        cmd->callback([=, &action] {
            action = [=] {
                auto model = load_or_default_model(f->model);
                auto ds = Dataset::load(f->data);
                SweepConfig cfg;
                cfg.train.strategy = parse_strategy(f->strategy);
                cfg.train.epochs = f->epochs;
                cfg.train.batch_size = f->batch_size;
                cfg.train.lr = f->lr;
                double teps = parse_eps(f->train_eps);
                cfg.train.adversary = AttackSpec::training(teps, 0);
                cfg.train.adversary.steps = f->train_steps;
                cfg.train.adversary.alpha = 2.0 * teps / f->train_steps;
                cfg.train.adversary.alpha_prime = f->alpha_prime;
                cfg.baseline.epochs = f->epochs;
                cfg.baseline.batch_size = f->batch_size;
                cfg.baseline.lr = f->baseline_lr;
                cfg.baseline.adversary = cfg.train.adversary;
                cfg.eval_attack = AttackSpec::evaluation(parse_eps(f->eval_eps), 0);
                cfg.eval_attack.steps = f->eval_steps;
                cfg.hand = parse_prompt(model, ds, f->hand);
                cfg.context_len = f->m;
                cfg.position = parse_position(f->position);
                ordered_json cj = {{"command", "shot-sweep"},
                                   {"data", f->data},
                                   {"model", f->model.empty() ? "default" : f->model},
                                   {"method", f->method},
                                   {"shots", f->shots},
                                   {"seeds", f->seeds},
                                   {"strategy", f->strategy},
                                   {"m", f->m},
                                   {"position", f->position},
                                   {"epochs", f->epochs},
                                   {"batch_size", f->batch_size},
                                   {"lr", f->lr},
                                   {"baseline_lr", f->baseline_lr},
                                   {"train_eps", teps},
                                   {"train_steps", f->train_steps},
                                   {"eval_eps", cfg.eval_attack.eps},
                                   {"eval_steps", f->eval_steps},
                                   {"hand", f->hand},
                                   {"out", f->out}};
                emit_config(f->out, cj);
                auto rep = shot_sweep(method_from_string(f->method), model, ds, f->shots,
                                      f->seeds, cfg);
                rep.config_json = cj.dump();
                write_file(std::filesystem::path(f->out) / "report.json", rep.to_json());
                for (const auto& s : rep.summary)
                    std::cout << f->method << " " << s.shots << "-shot: clean " << s.clean_mean
                              << " +- " << s.clean_sd << ", robust " << s.robust_mean << " +- "
                              << s.robust_sd << "\n";
            };
        });
    }

    // shift-eval
    {
        auto* cmd = app.add_subcommand("shift-eval",
                                       "evaluate trained artifacts under distribution shift");
        struct Flags {
            std::string data, model, ctx, head, out = "run";
            double offset = 0.1, noise_mult = 1.0;
            bool novel = false;
            std::uint64_t shift_seed = 1;
            CommonAttackFlags atk;
        };
        auto f = std::make_shared<Flags>();
        cmd->add_option("--data", f->data, "source dataset")->required();
        cmd->add_option("--model", f->model);
        cmd->add_option("--ctx", f->ctx, "learned context checkpoint");
        cmd->add_option("--head", f->head, "linear head checkpoint");
        cmd->add_option("--offset", f->offset, "per-dim mean offset");
        cmd->add_option("--noise-mult", f->noise_mult);
        cmd->add_flag("--novel", f->novel, "mark the target as a novel-class dataset");
        cmd->add_option("--shift-seed", f->shift_seed);
        cmd->add_option("--out", f->out);
        f->atk.add(cmd);
        cmd->callback([=, &action] {
            action = [=] {
                if (f->ctx.empty() == f->head.empty())
                    throw std::invalid_argument("shift-eval needs exactly one of --ctx / --head");
                auto model = load_or_default_model(f->model);
                auto ds = Dataset::load(f->data);
                AttackSpec spec = f->atk.resolve();
                spec.validate();
                emit_config(f->out, {{"command", "shift-eval"},
                                     {"data", f->data},
                                     {"model", f->model.empty() ? "default" : f->model},
                                     {"ctx", f->ctx},
                                     {"head", f->head},
                                     {"offset", f->offset},
                                     {"noise_mult", f->noise_mult},
                                     {"novel", f->novel},
                                     {"shift_seed", f->shift_seed},
                                     {"attack", f->atk.json(spec)},
                                     {"out", f->out}});
                auto target = shift(ds, f->offset, f->noise_mult, f->shift_seed);
                target.novel_classes = f->novel;
                ShiftMetrics m;
                if (!f->ctx.empty()) {
                    auto ctx = PromptContext::load(f->ctx, ds.class_embeddings(model));
                    m = shift_eval(model, ctx, target, spec);
                } else {
                    m = shift_eval(model, LinearHead::load(f->head), target, spec);
                }
                ordered_json j = {{"clean_acc", m.clean_acc}, {"robust_acc", m.robust_acc}};
                write_file(std::filesystem::path(f->out) / "report.json", j.dump(2) + "\n");
                std::cout << "shifted clean " << m.clean_acc << ", robust " << m.robust_acc
                          << "\n";
            };
        });
    }

    // decode-context
    {
        auto* cmd = app.add_subcommand("decode-context",
                                       "nearest vocabulary word per context vector");
        struct Flags {
            std::string ctx, data, model, out = "run";
        };
        auto f = std::make_shared<Flags>();
        cmd->add_option("ctx", f->ctx, "context checkpoint")->required();
        cmd->add_option("--data", f->data)->required();
        cmd->add_option("--model", f->model);
        cmd->add_option("--out", f->out);
        cmd->callback([=, &action] {
            action = [=] {
                auto model = load_or_default_model(f->model);
                auto ds = Dataset::load(f->data);
                emit_config(f->out, {{"command", "decode-context"},
                                     {"ctx", f->ctx},
                                     {"data", f->data},
                                     {"model", f->model.empty() ? "default" : f->model},
                                     {"out", f->out}});
                auto ctx = PromptContext::load(f->ctx, ds.class_embeddings(model));
                auto names = vocabulary_names(model.vocab_size(), ds.num_classes());
                auto text = nearest_words_json(ctx, model.vocab(), names);
                write_file(std::filesystem::path(f->out) / "decoded.json", text);
                std::cout << text;
            };
        });
    }

    // cost-report
    {
        auto* cmd = app.add_subcommand("cost-report",
                                       "predicted encoder passes per training iteration");
        struct Flags {
            std::string strategy = "on-the-fly", eps = "4/255", out;
            int steps = 3;
        };
        auto f = std::make_shared<Flags>();
        cmd->add_option("--strategy", f->strategy, "constant|on-the-fly|perturbed");
        cmd->add_option("--steps", f->steps, "attack iterations K");
        cmd->add_option("--eps", f->eps);
        cmd->add_option("--out", f->out, "also write cost.json to this run directory");
        cmd->callback([=, &action] {
            action = [=] {
                TrainConfig tc;
                tc.strategy = parse_strategy(f->strategy);
                tc.adversary = AttackSpec::training(parse_eps(f->eps), 0);
                tc.adversary.steps = f->steps;
                tc.adversary.alpha = 2.0 * tc.adversary.eps / f->steps;
                tc.anchor.tokens = {0, HandPrompt::kClassSlot};
                ordered_json j = {{"strategy", f->strategy},
                                  {"steps", f->steps},
                                  {"per_iteration", cost_json(cost_report(tc, false))}};
                if (tc.strategy == Strategy::Constant)
                    j["per_iteration_warm_cache"] = cost_json(cost_report(tc, true));
                std::string text = j.dump(2) + "\n";
                if (!f->out.empty()) {
                    emit_config(f->out, {{"command", "cost-report"},
                                         {"strategy", f->strategy},
                                         {"steps", f->steps},
                                         {"out", f->out}});
                    write_file(std::filesystem::path(f->out) / "cost.json", text);
                }
                std::cout << text;
            };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        action();
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NotApplicableError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
