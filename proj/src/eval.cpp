#include "aptlab/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "aptlab/rng.hpp"

namespace aptlab {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

void parallel_for(int n, const std::function<void(int)>& fn) {
    int workers = std::min(n, eval_threads());
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (int i = w; i < n; i += workers) fn(i);
        });
    for (auto& t : pool) t.join();
}

}  // namespace

int eval_threads() {
    if (const char* env = std::getenv("APT_LAB_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

double RobustnessMatrix::row_min(int r) const {
    double m = cells.at(r, 0);
    for (int c = 1; c < cells.shape.dims[1]; ++c) m = std::min(m, cells.at(r, c));
    return m;
}

double RobustnessMatrix::relative_delta(int r, int c) const { return cells.at(r, c) - row_min(r); }

bool RobustnessMatrix::diagonal_is_row_min(int r) const {
    return cells.at(r, r) == row_min(r);
}

std::string RobustnessMatrix::to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "inference\\attack";
    for (const auto& c : col_labels) os << "," << c;
    os << "\n";
    for (std::size_t r = 0; r < row_labels.size(); ++r) {
        os << row_labels[r];
        for (int c = 0; c < cells.shape.dims[1]; ++c) os << "," << cells.at(static_cast<int>(r), c);
        os << "\n";
    }
    return os.str();
}

RobustnessMatrix RobustnessMatrix::from_csv(const std::string& csv) {
    std::istringstream is(csv);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("matrix csv: empty input");
    auto header = split_csv_line(line);
    RobustnessMatrix m;
    m.col_labels.assign(header.begin() + 1, header.end());
    std::vector<double> vals;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto parts = split_csv_line(line);
        if (parts.size() != header.size())
            throw std::runtime_error("matrix csv: ragged row '" + line + "'");
        m.row_labels.push_back(parts[0]);
        for (std::size_t i = 1; i < parts.size(); ++i) vals.push_back(std::stod(parts[i]));
    }
    if (m.row_labels.empty()) throw std::runtime_error("matrix csv: no rows");
    m.cells = Tensor(Shape{static_cast<int>(m.row_labels.size()),
                           static_cast<int>(m.col_labels.size())},
                     std::move(vals));
    return m;
}

RobustnessMatrix prompt_sensitivity_matrix(const DualEncoderModel& model, const Dataset& ds,
                                           const std::vector<LabeledPrompt>& prompts,
                                           const AttackSpec& spec) {
    if (prompts.empty()) throw std::invalid_argument("matrix: empty prompt set");
    for (const auto& p : prompts)
        if (p.features.shape.dims[0] != ds.num_classes())
            throw std::invalid_argument("matrix: prompt '" + p.label +
                                        "' does not cover every class");
    int n = static_cast<int>(prompts.size());
    RobustnessMatrix m;
    for (const auto& p : prompts) {
        m.row_labels.push_back(p.label);
        m.col_labels.push_back(p.label);
    }
    m.cells = Tensor(Shape{n, n});
    parallel_for(n * n, [&](int cell) {
        int r = cell / n, c = cell % n;
        AttackSpec cs = spec;
        cs.seed = Rng::derive(spec.seed, 0xC000 + static_cast<std::uint64_t>(cell)).next_u64();
        m.cells.at(r, c) = robust_accuracy(model, ds.test_images, ds.test_labels,
                                           prompts[static_cast<std::size_t>(r)].features,
                                           prompts[static_cast<std::size_t>(c)].features, cs);
    });
    return m;
}

std::vector<LabeledPrompt> probe_prompts(const DualEncoderModel& model, const Dataset& ds,
                                         std::uint64_t seed) {
    auto names = vocabulary_names(model.vocab_size(), ds.num_classes());
    std::unordered_map<std::string, int> id;
    for (std::size_t i = 0; i < names.size(); ++i) id.emplace(names[i], static_cast<int>(i));
    auto tok = [&](const std::string& w) {
        auto it = id.find(w);
        if (it == id.end()) throw std::logic_error("probe prompts: word '" + w + "' not in lexicon");
        return it->second;
    };

    Tensor class_embs = ds.class_embeddings(model);
    std::vector<LabeledPrompt> out;
    auto add = [&](const std::string& label, std::vector<int> tokens) {
        HandPrompt p;
        p.tokens = std::move(tokens);
        p.label = label;
        out.push_back({label, p.encode_all(model, class_embs)});
    };
    constexpr int S = HandPrompt::kClassSlot;
    add("a photo of a [CLASS]", {tok("a"), tok("photo"), tok("of"), tok("a"), S});
    add("a picture of a [CLASS]", {tok("a"), tok("picture"), tok("of"), tok("a"), S});
    add("an image of the [CLASS]", {tok("an"), tok("image"), tok("of"), tok("the"), S});
    add("this is a [CLASS]", {tok("this"), tok("is"), tok("a"), S});

    Rng rng = Rng::derive(seed, 0x70726f62ull);  // "prob"
    int plain_vocab = model.vocab_size() - ds.num_classes();
    for (int k = 0; k < 2; ++k) {
        std::vector<int> tokens;
        for (int i = 0; i < 4; ++i) tokens.push_back(rng.uniform_int(plain_vocab));
        tokens.push_back(S);
        add("random-" + std::to_string(k + 1), std::move(tokens));
    }
    return out;
}

TransferReport transfer_eval(const DualEncoderModel& model, const Tensor& learned_features,
                             const std::vector<LabeledPrompt>& probes, const Dataset& ds,
                             const AttackSpec& spec) {
    TransferReport rep;
    rep.matched = robust_accuracy(model, ds.test_images, ds.test_labels, learned_features,
                                  learned_features, spec);
    rep.probes = probes;
    rep.transfer.resize(probes.size());
    parallel_for(static_cast<int>(probes.size()), [&](int i) {
        rep.transfer[static_cast<std::size_t>(i)] =
            robust_accuracy(model, ds.test_images, ds.test_labels, learned_features,
                            probes[static_cast<std::size_t>(i)].features, spec);
    });
    return rep;
}

std::string to_string(Method m) {
    switch (m) {
        case Method::AptUC: return "apt-uc";
        case Method::AptCSC: return "apt-csc";
        case Method::AVP: return "avp";
        case Method::PAFT: return "paft";
        case Method::HEP: return "hep";
    }
    return "?";
}

Method method_from_string(const std::string& s) {
    if (s == "apt-uc") return Method::AptUC;
    if (s == "apt-csc") return Method::AptCSC;
    if (s == "avp") return Method::AVP;
    if (s == "paft") return Method::PAFT;
    if (s == "hep") return Method::HEP;
    throw std::invalid_argument("unknown method '" + s + "'");
}

CellMetrics evaluate_cell(Method method, const DualEncoderModel& model, const Dataset& ds,
                          int shots, std::uint64_t seed, const SweepConfig& cfg) {
    if (shots < 1) throw std::invalid_argument("sweep: shots must be >= 1");
    CellMetrics cell;
    cell.shots = shots;
    cell.seed = seed;
    AttackSpec eval_spec = cfg.eval_attack;
    eval_spec.seed = Rng::derive(seed, 0xEAA1ull).next_u64();

    switch (method) {
        case Method::AptUC:
        case Method::AptCSC: {
            auto mode = method == Method::AptUC ? ContextMode::UC : ContextMode::CSC;
            auto ctx = PromptContext::init(mode, cfg.context_len, cfg.position,
                                           ds.class_embeddings(model),
                                           Rng::derive(seed, 0xC122ull).next_u64());
            TrainConfig tc = cfg.train;
            tc.seed = seed;
            tc.eval_subset = 0;
            tc.anchor = cfg.hand;
            auto res = train(std::move(ctx), model, ds, sample_shots(ds, shots, seed), tc);
            Tensor feats = res.context.encode_all(model);
            cell.clean_acc = clean_accuracy(model, ds.test_images, ds.test_labels, feats);
            cell.robust_acc =
                robust_accuracy(model, ds.test_images, ds.test_labels, feats, feats, eval_spec);
            break;
        }
        case Method::AVP: {
            BaselineConfig bc = cfg.baseline;
            bc.seed = seed;
            auto vp = train_avp(model, ds, sample_shots(ds, shots, seed), cfg.hand, bc);
            Tensor feats = cfg.hand.encode_all(model, ds.class_embeddings(model));
            cell.clean_acc = avp_clean_accuracy(model, vp, ds.test_images, ds.test_labels, feats);
            cell.robust_acc =
                avp_robust_accuracy(model, vp, ds.test_images, ds.test_labels, feats, eval_spec);
            break;
        }
        case Method::PAFT: {
            BaselineConfig bc = cfg.baseline;
            bc.seed = seed;
            auto head = train_paft(model, ds, sample_shots(ds, shots, seed), bc);
            cell.clean_acc = head_clean_accuracy(model, head, ds.test_images, ds.test_labels);
            cell.robust_acc =
                head_robust_accuracy(model, head, ds.test_images, ds.test_labels, eval_spec);
            break;
        }
        case Method::HEP: {
            Tensor feats = cfg.hand.encode_all(model, ds.class_embeddings(model));
            cell.clean_acc = clean_accuracy(model, ds.test_images, ds.test_labels, feats);
            cell.robust_acc =
                robust_accuracy(model, ds.test_images, ds.test_labels, feats, feats, eval_spec);
            break;
        }
    }
    return cell;
}

ExperimentReport shot_sweep(Method method, const DualEncoderModel& model, const Dataset& ds,
                            const std::vector<int>& shots_list,
                            const std::vector<std::uint64_t>& seeds, const SweepConfig& cfg) {
    if (shots_list.empty()) throw std::invalid_argument("sweep: empty shots list");
    for (int s : shots_list)
        if (s < 1) throw std::invalid_argument("sweep: shots must be >= 1");
    if (seeds.empty()) throw std::invalid_argument("sweep: empty seed list");

    auto t0 = std::chrono::steady_clock::now();
    ExperimentReport rep;
    rep.method = to_string(method);
    rep.seeds = seeds;

    if (method == Method::HEP) {
        // no training: one evaluation per seed, copied across shot counts
        std::vector<CellMetrics> per_seed(seeds.size());
        parallel_for(static_cast<int>(seeds.size()), [&](int i) {
            per_seed[static_cast<std::size_t>(i)] = evaluate_cell(
                method, model, ds, shots_list[0], seeds[static_cast<std::size_t>(i)], cfg);
        });
        for (int shots : shots_list)
            for (auto cell : per_seed) {
                cell.shots = shots;
                rep.cells.push_back(cell);
            }
    } else {
        int n = static_cast<int>(shots_list.size() * seeds.size());
        rep.cells.resize(static_cast<std::size_t>(n));
        parallel_for(n, [&](int i) {
            int si = i / static_cast<int>(seeds.size());
            int ki = i % static_cast<int>(seeds.size());
            rep.cells[static_cast<std::size_t>(i)] =
                evaluate_cell(method, model, ds, shots_list[static_cast<std::size_t>(si)],
                              seeds[static_cast<std::size_t>(ki)], cfg);
        });
    }

    for (int shots : shots_list) {
        ShotSummary s;
        s.shots = shots;
        double n = 0;
        for (const auto& c : rep.cells)
            if (c.shots == shots) {
                s.clean_mean += c.clean_acc;
                s.robust_mean += c.robust_acc;
                n += 1;
            }
        s.clean_mean /= n;
        s.robust_mean /= n;
        for (const auto& c : rep.cells)
            if (c.shots == shots) {
                s.clean_sd += (c.clean_acc - s.clean_mean) * (c.clean_acc - s.clean_mean);
                s.robust_sd += (c.robust_acc - s.robust_mean) * (c.robust_acc - s.robust_mean);
            }
        s.clean_sd = n > 1 ? std::sqrt(s.clean_sd / (n - 1)) : 0.0;
        s.robust_sd = n > 1 ? std::sqrt(s.robust_sd / (n - 1)) : 0.0;
        rep.summary.push_back(s);
    }
    rep.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

std::string ExperimentReport::to_json() const {
    nlohmann::ordered_json j;
    j["method"] = method;
    if (!config_json.empty())
        j["config"] = nlohmann::ordered_json::parse(config_json);
    j["seeds"] = seeds;
    j["cells"] = nlohmann::ordered_json::array();
    for (const auto& c : cells)
        j["cells"].push_back({{"shots", c.shots},
                              {"seed", c.seed},
                              {"clean_acc", c.clean_acc},
                              {"robust_acc", c.robust_acc}});
    j["summary"] = nlohmann::ordered_json::array();
    for (const auto& s : summary)
        j["summary"].push_back({{"shots", s.shots},
                                {"clean_mean", s.clean_mean},
                                {"clean_sd", s.clean_sd},
                                {"robust_mean", s.robust_mean},
                                {"robust_sd", s.robust_sd}});
    j["runtime_seconds"] = runtime_seconds;
    return j.dump(2) + "\n";
}

ShiftMetrics shift_eval(const DualEncoderModel& model, const PromptContext& ctx,
                        const Dataset& target, const AttackSpec& spec) {
    if (target.novel_classes && ctx.mode == ContextMode::CSC)
        throw NotApplicableError(
            "shift eval: a class-specific context cannot transfer to novel classes (N/A)");
    PromptContext bound = ctx;
    bound.class_embeddings = target.class_embeddings(model);
    if (bound.class_embeddings.shape.dims[0] != ctx.class_embeddings.shape.dims[0] &&
        ctx.mode == ContextMode::CSC)
        throw NotApplicableError("shift eval: class count mismatch for class-specific context");
    Tensor feats = bound.encode_all(model);
    ShiftMetrics m;
    m.clean_acc = clean_accuracy(model, target.test_images, target.test_labels, feats);
    m.robust_acc =
        robust_accuracy(model, target.test_images, target.test_labels, feats, feats, spec);
    return m;
}

ShiftMetrics shift_eval(const DualEncoderModel& model, const LinearHead& head,
                        const Dataset& target, const AttackSpec& spec) {
    if (target.novel_classes)
        throw NotApplicableError(
            "shift eval: a linear head is tied to its training classes (N/A)");
    ShiftMetrics m;
    m.clean_acc = head_clean_accuracy(model, head, target.test_images, target.test_labels);
    m.robust_acc = head_robust_accuracy(model, head, target.test_images, target.test_labels, spec);
    return m;
}

std::string predictions_log(const std::vector<PredictionRecord>& records) {
    std::ostringstream os;
    os << "# example_id label clean_pred adv_pred\n";
    for (const auto& r : records)
        os << r.example_id << " " << r.label << " " << r.clean_pred << " " << r.adv_pred << "\n";
    return os.str();
}

}  // namespace aptlab
