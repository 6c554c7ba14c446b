#include "aptlab/prompt.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "aptlab/io.hpp"
#include "aptlab/rng.hpp"

namespace aptlab {

namespace {
constexpr std::uint16_t kContextVersion = 1;
constexpr double kInitSigma = 0.02;
}

std::string to_string(ContextMode m) { return m == ContextMode::UC ? "uc" : "csc"; }

std::string to_string(ClassPosition p) {
    switch (p) {
        case ClassPosition::Front: return "front";
        case ClassPosition::Middle: return "middle";
        case ClassPosition::End: return "end";
    }
    return "?";
}

std::pair<int, int> PromptContext::class_rows(int j) const {
    if (j < 0 || j >= num_classes())
        throw std::out_of_range("prompt: class index " + std::to_string(j) + " out of range");
    int base = mode == ContextMode::UC ? 0 : j * context_len;
    return {base, base + context_len};
}

int PromptContext::class_slot() const {
    switch (position) {
        case ClassPosition::Front: return 0;
        case ClassPosition::Middle: return context_len / 2;
        case ClassPosition::End: return context_len;
    }
    return context_len;
}

PromptContext PromptContext::init(ContextMode mode, int m, ClassPosition pos,
                                  const Tensor& class_embeddings, std::uint64_t seed) {
    if (m < 1) throw std::invalid_argument("prompt: context length must be >= 1");
    if (class_embeddings.shape.rank() != 2)
        throw std::invalid_argument("prompt: class embeddings must be [C,D]");
    PromptContext ctx;
    ctx.mode = mode;
    ctx.context_len = m;
    ctx.position = pos;
    ctx.class_embeddings = class_embeddings;
    int c = ctx.num_classes(), d = ctx.embed_dim();
    int rows = mode == ContextMode::UC ? m : c * m;
    Rng rng = Rng::derive(seed, 0x70726d70ull);  // "prmp"
    ctx.vectors = rng.gaussian_tensor(Shape{rows, d}, 0.0, kInitSigma);
    return ctx;
}

Tensor PromptContext::assemble(int j) const {
    auto [r0, r1] = class_rows(j);
    int d = embed_dim(), slot = class_slot();
    Tensor out(Shape{context_len + 1, d});
    int row = 0;
    for (int i = 0; i <= context_len; ++i) {
        const double* src;
        if (i == slot) {
            src = class_embeddings.v.data() + static_cast<std::size_t>(j) * d;
        } else {
            src = vectors.v.data() + static_cast<std::size_t>(r0 + row) * d;
            ++row;
        }
        std::copy(src, src + d, out.v.begin() + static_cast<std::ptrdiff_t>(i) * d);
    }
    (void)r1;
    return out;
}

NodeId PromptContext::assemble(DiffGraph& g, NodeId ctx_leaf, int j) const {
    auto [r0, r1] = class_rows(j);
    NodeId cls = g.leaf(Tensor(Shape{1, embed_dim()},
                               std::vector<double>(class_embeddings.v.begin() +
                                                       static_cast<std::ptrdiff_t>(j) * embed_dim(),
                                                   class_embeddings.v.begin() +
                                                       static_cast<std::ptrdiff_t>(j + 1) * embed_dim())));
    int slot = class_slot();
    std::vector<NodeId> parts;
    if (slot == 0) {
        parts = {cls, g.slice_rows(ctx_leaf, r0, r1)};
    } else if (slot == context_len) {
        parts = {g.slice_rows(ctx_leaf, r0, r1), cls};
    } else {
        parts = {g.slice_rows(ctx_leaf, r0, r0 + slot), cls, g.slice_rows(ctx_leaf, r0 + slot, r1)};
    }
    return g.concat_rows(parts);
}

Tensor PromptContext::encode_all(const DualEncoderModel& model) const {
    std::vector<Tensor> seqs;
    seqs.reserve(static_cast<std::size_t>(num_classes()));
    for (int j = 0; j < num_classes(); ++j) seqs.push_back(assemble(j));
    return model.encode_text_batch(seqs);
}

NodeId PromptContext::encode_all(DiffGraph& g, const DualEncoderModel& model, NodeId ctx_leaf) const {
    std::vector<NodeId> seqs;
    seqs.reserve(static_cast<std::size_t>(num_classes()));
    for (int j = 0; j < num_classes(); ++j) seqs.push_back(assemble(g, ctx_leaf, j));
    return model.encode_text_batch(g, seqs);
}

void PromptContext::save(const std::string& path) const {
    auto os = io::open_out(path);
    io::write_magic(os, "APTC");
    io::write_pod<std::uint16_t>(os, kContextVersion);
    io::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(mode));
    io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(context_len));
    io::write_pod<std::uint32_t>(os,
                                 static_cast<std::uint32_t>(mode == ContextMode::UC ? 1 : num_classes()));
    io::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(embed_dim()));
    io::write_pod<std::uint8_t>(os, static_cast<std::uint8_t>(position));
    io::write_doubles(os, vectors.v);
}

PromptContext PromptContext::load(const std::string& path, const Tensor& class_embeddings) {
    auto is = io::open_in(path);
    io::expect_magic(is, "APTC", "context checkpoint");
    auto ver = io::read_pod<std::uint16_t>(is, "context checkpoint");
    if (ver != kContextVersion)
        throw std::runtime_error("context checkpoint: unsupported version " + std::to_string(ver));
    PromptContext ctx;
    ctx.mode = static_cast<ContextMode>(io::read_pod<std::uint8_t>(is, "context checkpoint"));
    ctx.context_len = static_cast<int>(io::read_pod<std::uint32_t>(is, "context checkpoint"));
    int stored_c = static_cast<int>(io::read_pod<std::uint32_t>(is, "context checkpoint"));
    int d = static_cast<int>(io::read_pod<std::uint32_t>(is, "context checkpoint"));
    ctx.position = static_cast<ClassPosition>(io::read_pod<std::uint8_t>(is, "context checkpoint"));
    ctx.class_embeddings = class_embeddings;
    if (d != ctx.embed_dim())
        throw std::runtime_error("context checkpoint: embedding dim mismatch");
    if (ctx.mode == ContextMode::CSC && stored_c != ctx.num_classes())
        throw std::runtime_error("context checkpoint: class count mismatch");
    int rows = stored_c * ctx.context_len;
    ctx.vectors = Tensor(Shape{rows, d}, io::read_doubles(is, static_cast<std::size_t>(rows) *
                                                                  static_cast<std::size_t>(d),
                                                          "context checkpoint"));
    return ctx;
}

int HandPrompt::class_slot() const {
    int slot = -1;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] == kClassSlot) {
            if (slot >= 0) throw std::invalid_argument("prompt: multiple class slots");
            slot = static_cast<int>(i);
        }
    }
    if (slot < 0) throw std::invalid_argument("prompt: missing class slot");
    return slot;
}

Tensor HandPrompt::assemble(const DualEncoderModel& model, const Tensor& class_embeddings,
                            int j) const {
    int slot = class_slot();
    int d = model.embed_dim();
    if (j < 0 || j >= class_embeddings.shape.dims[0])
        throw std::out_of_range("prompt: class index out of range");
    Tensor out(Shape{static_cast<int>(tokens.size()), d});
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        Tensor v = static_cast<int>(i) == slot ? class_embeddings.row(j)
                                               : model.vocab_entry(tokens[i]);
        std::copy(v.v.begin(), v.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(i) * d);
    }
    return out;
}

Tensor HandPrompt::encode_all(const DualEncoderModel& model, const Tensor& class_embeddings) const {
    std::vector<Tensor> seqs;
    int c = class_embeddings.shape.dims[0];
    seqs.reserve(static_cast<std::size_t>(c));
    for (int j = 0; j < c; ++j) seqs.push_back(assemble(model, class_embeddings, j));
    return model.encode_text_batch(seqs);
}

std::vector<NearestWord> nearest_words(const PromptContext& ctx, const Tensor& vocab) {
    if (vocab.shape.rank() != 2 || vocab.shape.dims[0] < 1)
        throw std::invalid_argument("prompt: empty vocabulary");
    int v = vocab.shape.dims[0], d = vocab.shape.dims[1];
    int rows = ctx.vectors.shape.dims[0];
    std::vector<NearestWord> out(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        int best = 0;
        double best_d2 = std::numeric_limits<double>::infinity();
        for (int w = 0; w < v; ++w) {
            double d2 = 0.0;
            for (int t = 0; t < d; ++t) {
                double diff = ctx.vectors.at(r, t) - vocab.at(w, t);
                d2 += diff * diff;
            }
            if (d2 < best_d2) {
                best_d2 = d2;
                best = w;
            }
        }
        out[static_cast<std::size_t>(r)] = {best, std::sqrt(best_d2)};
    }
    return out;
}

std::string nearest_words_json(const PromptContext& ctx, const Tensor& vocab,
                               const std::vector<std::string>& vocab_names) {
    auto nw = nearest_words(ctx, vocab);
    nlohmann::json j;
    j["mode"] = to_string(ctx.mode);
    j["context_len"] = ctx.context_len;
    auto arr = nlohmann::json::array();
    for (std::size_t i = 0; i < nw.size(); ++i) {
        nlohmann::json e;
        e["vector"] = i;
        e["word_id"] = nw[i].word_id;
        if (nw[i].word_id < static_cast<int>(vocab_names.size()))
            e["word"] = vocab_names[static_cast<std::size_t>(nw[i].word_id)];
        e["distance"] = nw[i].distance;
        arr.push_back(e);
    }
    j["nearest_words"] = arr;
    return j.dump(2);
}

}  // namespace aptlab
