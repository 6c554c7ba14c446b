#include "aptlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "aptlab/io.hpp"
#include "aptlab/rng.hpp"

namespace aptlab {

namespace {

constexpr std::uint16_t kDatasetVersion = 1;
constexpr double kSeparabilityGate = 0.90;

const char* kTemplateWords[] = {
    "a",    "an",    "the",   "photo",   "picture", "image",  "of",     "this",
    "is",   "that",  "shows", "drawing", "sketch",  "view",   "small",  "large",
    "one",  "some",  "scene", "object",  "thing",   "sample", "render", "shot",
};

std::string sidecar_path(const std::string& path) {
    std::string base = path;
    if (base.size() > 5 && base.substr(base.size() - 5) == ".aptd") base.resize(base.size() - 5);
    return base + ".lexicon.json";
}

// Solve A x = b for symmetric positive-definite A via Gaussian elimination.
std::vector<double> solve(std::vector<double> a, std::vector<double> b, int n) {
    for (int k = 0; k < n; ++k) {
        int piv = k;
        for (int i = k + 1; i < n; ++i)
            if (std::abs(a[static_cast<std::size_t>(i) * n + k]) >
                std::abs(a[static_cast<std::size_t>(piv) * n + k]))
                piv = i;
        if (piv != k) {
            for (int j = 0; j < n; ++j)
                std::swap(a[static_cast<std::size_t>(k) * n + j], a[static_cast<std::size_t>(piv) * n + j]);
            std::swap(b[static_cast<std::size_t>(k)], b[static_cast<std::size_t>(piv)]);
        }
        double d = a[static_cast<std::size_t>(k) * n + k];
        if (std::abs(d) < 1e-12) throw std::runtime_error("data: singular separability system");
        for (int i = k + 1; i < n; ++i) {
            double f = a[static_cast<std::size_t>(i) * n + k] / d;
            if (f == 0.0) continue;
            for (int j = k; j < n; ++j)
                a[static_cast<std::size_t>(i) * n + j] -= f * a[static_cast<std::size_t>(k) * n + j];
            b[static_cast<std::size_t>(i)] -= f * b[static_cast<std::size_t>(k)];
        }
    }
    std::vector<double> x(static_cast<std::size_t>(n));
    for (int i = n - 1; i >= 0; --i) {
        double s = b[static_cast<std::size_t>(i)];
        for (int j = i + 1; j < n; ++j) s -= a[static_cast<std::size_t>(i) * n + j] * x[static_cast<std::size_t>(j)];
        x[static_cast<std::size_t>(i)] = s / a[static_cast<std::size_t>(i) * n + i];
    }
    return x;
}

void fill_split(Tensor& images, std::vector<int>& labels, const Tensor& means,
                const SyntheticSpec& spec, int per_class, Rng& rng) {
    int c = spec.num_classes, dx = spec.input_dim;
    double sigma = spec.noise_sigma * spec.noise_multiplier;
    images = Tensor(Shape{c * per_class, dx});
    labels.assign(static_cast<std::size_t>(c) * per_class, 0);
    int row = 0;
    for (int j = 0; j < c; ++j) {
        for (int k = 0; k < per_class; ++k, ++row) {
            labels[static_cast<std::size_t>(row)] = j;
            for (int t = 0; t < dx; ++t) {
                double x = means.at(j, t) + (sigma > 0.0 ? rng.normal(0.0, sigma) : 0.0);
                images.at(row, t) = std::min(1.0, std::max(0.0, x));
            }
        }
    }
}

}  // namespace

std::vector<std::string> vocabulary_names(int vocab_size, int num_classes) {
    std::vector<std::string> names(static_cast<std::size_t>(vocab_size));
    int n_templates = static_cast<int>(std::size(kTemplateWords));
    for (int i = 0; i < vocab_size; ++i) {
        if (i < n_templates)
            names[static_cast<std::size_t>(i)] = kTemplateWords[i];
        else
            names[static_cast<std::size_t>(i)] = "tok" + std::to_string(i);
    }
    for (int j = 0; j < num_classes; ++j)
        names[static_cast<std::size_t>(class_token_id(vocab_size, num_classes, j))] =
            "class_" + std::to_string(j);
    return names;
}

int class_token_id(int vocab_size, int num_classes, int j) {
    if (vocab_size < num_classes + static_cast<int>(std::size(kTemplateWords)))
        throw std::invalid_argument("data: vocabulary too small for class lexicon");
    return vocab_size - num_classes + j;
}

Tensor Dataset::class_embeddings(const DualEncoderModel& model) const {
    int c = num_classes(), d = model.embed_dim();
    Tensor out(Shape{c, d});
    for (int j = 0; j < c; ++j) {
        Tensor row = model.vocab_entry(class_token_ids[static_cast<std::size_t>(j)]);
        std::copy(row.v.begin(), row.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(j) * d);
    }
    return out;
}

double linear_separability(const Dataset& ds) {
    int dx = ds.spec.input_dim, c = ds.num_classes();
    int n = ds.train_size(), dim = dx + 1;
    // Normal equations with a small ridge, one-vs-all targets.
    std::vector<double> xtx(static_cast<std::size_t>(dim) * dim, 0.0);
    std::vector<std::vector<double>> xty(static_cast<std::size_t>(c),
                                         std::vector<double>(static_cast<std::size_t>(dim), 0.0));
    auto feat = [&](const Tensor& images, int i, int t) {
        return t < dx ? images.at(i, t) : 1.0;
    };
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < dim; ++a) {
            double fa = feat(ds.train_images, i, a);
            for (int b = 0; b < dim; ++b) xtx[static_cast<std::size_t>(a) * dim + b] += fa * feat(ds.train_images, i, b);
            for (int j = 0; j < c; ++j)
                xty[static_cast<std::size_t>(j)][static_cast<std::size_t>(a)] +=
                    fa * (ds.train_labels[static_cast<std::size_t>(i)] == j ? 1.0 : 0.0);
        }
    for (int a = 0; a < dim; ++a) xtx[static_cast<std::size_t>(a) * dim + a] += 1e-6;
    std::vector<std::vector<double>> w(static_cast<std::size_t>(c));
    for (int j = 0; j < c; ++j) w[static_cast<std::size_t>(j)] = solve(xtx, xty[static_cast<std::size_t>(j)], dim);

    int correct = 0, m = ds.test_size();
    for (int i = 0; i < m; ++i) {
        int best = 0;
        double best_s = -1e300;
        for (int j = 0; j < c; ++j) {
            double s = 0.0;
            for (int a = 0; a < dim; ++a)
                s += w[static_cast<std::size_t>(j)][static_cast<std::size_t>(a)] * feat(ds.test_images, i, a);
            if (s > best_s) {
                best_s = s;
                best = j;
            }
        }
        if (best == ds.test_labels[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / m;
}

Dataset generate(const SyntheticSpec& spec, int vocab_size) {
    if (spec.num_classes < 2 || spec.input_dim < 1 || spec.train_per_class < 1 ||
        spec.test_per_class < 1 || spec.noise_sigma < 0.0)
        throw std::invalid_argument("data: invalid synthetic spec");
    Dataset ds;
    ds.spec = spec;
    Rng mrng = Rng::derive(spec.seed, 0x6d65616eull);  // "mean"
    ds.means = mrng.uniform_tensor(Shape{spec.num_classes, spec.input_dim}, 0.2, 0.8);
    Rng trng = Rng::derive(spec.seed, 0x74726e00ull);
    fill_split(ds.train_images, ds.train_labels, ds.means, spec, spec.train_per_class, trng);
    Rng erng = Rng::derive(spec.seed, 0x74737400ull);
    fill_split(ds.test_images, ds.test_labels, ds.means, spec, spec.test_per_class, erng);
    for (int j = 0; j < spec.num_classes; ++j) {
        ds.class_names.push_back("class_" + std::to_string(j));
        ds.class_token_ids.push_back(class_token_id(vocab_size, spec.num_classes, j));
    }
    double sep = linear_separability(ds);
    if (sep < kSeparabilityGate)
        throw std::runtime_error("data: generated task fails separability gate (" +
                                 std::to_string(sep) + " < 0.90); choose another seed");
    return ds;
}

ShotSample sample_shots(const Dataset& ds, int n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("data: shots must be >= 1");
    ShotSample s;
    s.shots = n;
    for (int j = 0; j < ds.num_classes(); ++j) {
        std::vector<int> idx;
        for (int i = 0; i < ds.train_size(); ++i)
            if (ds.train_labels[static_cast<std::size_t>(i)] == j) idx.push_back(i);
        Rng rng = Rng::derive(seed, 0x73686f74ull + static_cast<std::uint64_t>(j));
        rng.shuffle(idx);
        int take = std::min<int>(n, static_cast<int>(idx.size()));
        s.indices.insert(s.indices.end(), idx.begin(), idx.begin() + take);
    }
    std::sort(s.indices.begin(), s.indices.end());
    return s;
}

Dataset shift(const Dataset& ds, double offset, double noise_multiplier, std::uint64_t seed) {
    if (noise_multiplier < 0.0) throw std::invalid_argument("data: negative noise multiplier");
    Dataset out;
    out.spec = ds.spec;
    out.spec.shift_offset = offset;
    out.spec.noise_multiplier = noise_multiplier;
    out.spec.seed = seed;
    out.class_names = ds.class_names;
    out.class_token_ids = ds.class_token_ids;
    out.novel_classes = ds.novel_classes;
    out.means = ds.means;
    Rng drng = Rng::derive(seed, 0x73686674ull);  // "shft"
    for (auto& x : out.means.v) {
        double dir = drng.uniform() < 0.5 ? -1.0 : 1.0;
        x = std::min(1.0, std::max(0.0, x + dir * offset));
    }
    Rng trng = Rng::derive(seed, 0x74726e01ull);
    fill_split(out.train_images, out.train_labels, out.means, out.spec, out.spec.train_per_class, trng);
    Rng erng = Rng::derive(seed, 0x74737401ull);
    fill_split(out.test_images, out.test_labels, out.means, out.spec, out.spec.test_per_class, erng);
    return out;
}

void Dataset::save(const std::string& path) const {
    auto os = io::open_out(path);
    io::write_magic(os, "APTD");
    io::write_pod<std::uint16_t>(os, kDatasetVersion);
    io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(spec.num_classes));
    io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(spec.input_dim));
    io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(spec.train_per_class));
    io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(spec.test_per_class));
    io::write_pod<double>(os, spec.noise_sigma);
    io::write_pod<double>(os, spec.shift_offset);
    io::write_pod<double>(os, spec.noise_multiplier);
    io::write_pod<std::uint64_t>(os, spec.seed);
    io::write_pod<std::uint8_t>(os, novel_classes ? 1 : 0);
    io::write_doubles(os, means.v);
    io::write_doubles(os, train_images.v);
    for (int y : train_labels) io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(y));
    io::write_doubles(os, test_images.v);
    for (int y : test_labels) io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(y));

    nlohmann::json j;
    auto arr = nlohmann::json::array();
    for (std::size_t i = 0; i < class_names.size(); ++i)
        arr.push_back({{"name", class_names[i]}, {"token_id", class_token_ids[i]}});
    j["classes"] = arr;
    std::ofstream side(sidecar_path(path));
    if (!side) throw std::runtime_error("cannot write lexicon sidecar for " + path);
    side << j.dump(2) << "\n";
}

Dataset Dataset::load(const std::string& path) {
    auto is = io::open_in(path);
    io::expect_magic(is, "APTD", "dataset file");
    auto ver = io::read_pod<std::uint16_t>(is, "dataset file");
    if (ver != kDatasetVersion)
        throw std::runtime_error("dataset file: unsupported version " + std::to_string(ver));
    Dataset ds;
    ds.spec.num_classes = static_cast<int>(io::read_pod<std::uint32_t>(is, "dataset file"));
    ds.spec.input_dim = static_cast<int>(io::read_pod<std::uint32_t>(is, "dataset file"));
    ds.spec.train_per_class = static_cast<int>(io::read_pod<std::uint32_t>(is, "dataset file"));
    ds.spec.test_per_class = static_cast<int>(io::read_pod<std::uint32_t>(is, "dataset file"));
    ds.spec.noise_sigma = io::read_pod<double>(is, "dataset file");
    ds.spec.shift_offset = io::read_pod<double>(is, "dataset file");
    ds.spec.noise_multiplier = io::read_pod<double>(is, "dataset file");
    ds.spec.seed = io::read_pod<std::uint64_t>(is, "dataset file");
    ds.novel_classes = io::read_pod<std::uint8_t>(is, "dataset file") != 0;
    int c = ds.spec.num_classes, dx = ds.spec.input_dim;
    int ntr = c * ds.spec.train_per_class, nte = c * ds.spec.test_per_class;
    ds.means = Tensor(Shape{c, dx}, io::read_doubles(is, static_cast<std::size_t>(c) * dx, "dataset file"));
    ds.train_images =
        Tensor(Shape{ntr, dx}, io::read_doubles(is, static_cast<std::size_t>(ntr) * dx, "dataset file"));
    ds.train_labels.resize(static_cast<std::size_t>(ntr));
    for (auto& y : ds.train_labels) y = static_cast<int>(io::read_pod<std::uint32_t>(is, "dataset file"));
    ds.test_images =
        Tensor(Shape{nte, dx}, io::read_doubles(is, static_cast<std::size_t>(nte) * dx, "dataset file"));
    ds.test_labels.resize(static_cast<std::size_t>(nte));
    for (auto& y : ds.test_labels) y = static_cast<int>(io::read_pod<std::uint32_t>(is, "dataset file"));

    std::ifstream side(sidecar_path(path));
    if (!side) throw std::runtime_error("missing lexicon sidecar for " + path);
    nlohmann::json j;
    side >> j;
    for (const auto& e : j.at("classes")) {
        ds.class_names.push_back(e.at("name").get<std::string>());
        ds.class_token_ids.push_back(e.at("token_id").get<int>());
    }
    if (static_cast<int>(ds.class_names.size()) != c)
        throw std::runtime_error("dataset file: lexicon class count mismatch");
    return ds;
}

}  // namespace aptlab
