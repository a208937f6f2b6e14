#include "noisehgnn/encoder.hpp"

#include <algorithm>

namespace noisehgnn::encoder {

namespace nk = numkernel;

std::vector<char> keep_flags(std::size_t count, double p, std::uint64_t seed) {
    if (!(p >= 0.0 && p < 1.0)) throw DomainError("mask probability must lie in [0, 1), got " + std::to_string(p));
    std::vector<char> keep(count, 1);
    if (p == 0.0) return keep;
    Rng rng(seed);
    for (auto& k : keep) k = rng.bernoulli(p) ? 0 : 1;
    return keep;
}

Matrix mask_edges(const Matrix& a, double p, std::uint64_t seed) {
    std::size_t nnz = 0;
    for (double v : a.values()) nnz += v != 0.0;
    const auto keep = keep_flags(nnz, p, seed);
    Matrix out = a;
    std::size_t e = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out[i] == 0.0) continue;
        if (!keep[e++]) out[i] = 0.0;
    }
    return out;
}

namespace {

// Builds CSR neighborhoods from row-major entries (col ascending per row), inserting a
// self loop in column order. take[e] indexes the weight source for entry e; self loops
// take `self_slot`. Entries with keep[e] == 0 or on the diagonal are skipped.
struct Layout {
    BranchGraph graph;
    std::vector<int> take;
};

Layout build_layout(std::size_t n, std::span<const int> rows, std::span<const int> cols, std::span<const int> source,
                    int self_slot) {
    Layout out;
    BranchGraph& g = out.graph;
    g.offsets.reserve(n + 1);
    g.offsets.push_back(0);
    std::size_t e = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const int ii = static_cast<int>(i);
        bool self_done = false;
        for (; e < rows.size() && rows[e] == ii; ++e) {
            if (cols[e] == ii) continue;
            if (!self_done && cols[e] > ii) {
                g.dst.push_back(ii);
                g.src.push_back(ii);
                out.take.push_back(self_slot);
                self_done = true;
            }
            g.dst.push_back(ii);
            g.src.push_back(cols[e]);
            out.take.push_back(source[e]);
        }
        if (!self_done) {
            g.dst.push_back(ii);
            g.src.push_back(ii);
            out.take.push_back(self_slot);
        }
        g.offsets.push_back(g.dst.size());
    }
    if (e != rows.size()) throw ContractError("branch layout: entries are not in row-major order");
    return out;
}

}  // namespace

EdgeList EdgeList::from_dense(const Matrix& a) {
    if (a.rows() != a.cols()) throw DimensionError("adjacency must be square, got " + a.shape_string());
    EdgeList out;
    out.n = a.rows();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            if (a(i, j) == 0.0) continue;
            out.rows.push_back(static_cast<int>(i));
            out.cols.push_back(static_cast<int>(j));
            out.values.push_back(a(i, j));
        }
    }
    return out;
}

BranchGraph branch_from_edges(Tape& tape, const EdgeList& edges, double p, std::uint64_t seed) {
    const auto keep = keep_flags(edges.rows.size(), p, seed);
    std::vector<int> rows, cols, source;
    for (std::size_t e = 0; e < keep.size(); ++e) {
        if (!keep[e]) continue;
        rows.push_back(edges.rows[e]);
        cols.push_back(edges.cols[e]);
        source.push_back(static_cast<int>(e));
    }
    Layout layout = build_layout(edges.n, rows, cols, source, -1);
    std::vector<double> w(layout.take.size());
    for (std::size_t e = 0; e < w.size(); ++e) w[e] = layout.take[e] < 0 ? 1.0 : edges.values[layout.take[e]];
    const std::size_t count = w.size();
    layout.graph.weights = tape.constant(Matrix(count, 1, std::move(w)));
    return std::move(layout.graph);
}

BranchGraph branch_from_dense(Tape& tape, const Matrix& a_bar) { return branch_from_edges(tape, EdgeList::from_dense(a_bar), 0.0, 0); }

BranchGraph branch_from_selection(Tape& tape, const synth::KnnSelection& sel, const Tensor& weights, double p,
                                  std::uint64_t seed) {
    const Matrix& wv = weights.value();
    if (wv.rows() != sel.size() || wv.cols() != 1) throw DimensionError("branch_from_selection: weights do not match selection");
    std::size_t nonzero = 0;
    for (std::size_t e = 0; e < sel.size(); ++e) nonzero += wv[e] != 0.0;
    const auto keep = keep_flags(nonzero, p, seed);

    std::vector<int> rows, cols, source;
    std::size_t z = 0;
    for (std::size_t e = 0; e < sel.size(); ++e) {
        if (wv[e] == 0.0 || !keep[z++]) continue;
        rows.push_back(sel.rows[e]);
        cols.push_back(sel.cols[e]);
        source.push_back(static_cast<int>(e));
    }
    // Self loops read an appended constant 1 at index sel.size().
    Layout layout = build_layout(sel.num_rows(), rows, cols, source, static_cast<int>(sel.size()));
    const Tensor ext = nk::concat_rows(std::vector<Tensor>{weights, tape.constant(Matrix(1, 1, 1.0))});
    layout.graph.weights = nk::gather_rows(ext, layout.take);
    return std::move(layout.graph);
}

Tensor attention_coefficients(const Tensor& z, const Tensor& w, const Tensor& a_dst, const Tensor& a_src, const BranchGraph& g) {
    Tensor wz = nk::matmul(z, w);
    Tensor s_dst = nk::matmul(wz, a_dst);
    Tensor s_src = nk::matmul(wz, a_src);
    return nk::add(nk::gather_rows(s_dst, g.dst), nk::gather_rows(s_src, g.src));
}

Tensor similarity_aware_attention(const Tensor& e, const BranchGraph& g, double slope) {
    return nk::mul(nk::segment_softmax(nk::leaky_relu(e, slope), g.offsets), g.weights);
}

Tensor aggregate(const Tensor& alpha, const Tensor& z, const Tensor& w_alpha, const BranchGraph& g, double slope) {
    Tensor msg = nk::gather_rows(nk::matmul(z, w_alpha), g.src);
    return nk::leaky_relu(nk::scatter_add_rows(nk::mul_col(msg, alpha), g.dst, g.num_nodes()), slope);
}

EncoderParams EncoderParams::init(std::size_t in_dim, const EncoderConfig& cfg, Rng& rng) {
    if (cfg.layers < 1 || cfg.heads < 1 || cfg.hidden < 1) throw DomainError("encoder: layers, heads and hidden must be >= 1");
    EncoderParams p;
    p.config = cfg;
    std::size_t d_in = in_dim;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const bool last = l + 1 == cfg.layers;
        LayerParams layer;
        layer.in_dim = d_in;
        layer.out_dim = last ? cfg.hidden : cfg.hidden * cfg.heads;
        const std::string pre = "enc.l" + std::to_string(l) + ".h";
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            const std::string hp = pre + std::to_string(h) + ".";
            layer.heads.push_back({Parameter(hp + "W", nk::glorot_uniform(d_in, cfg.hidden, rng)),
                                   Parameter(hp + "a_dst", nk::glorot_uniform(cfg.hidden, 1, rng)),
                                   Parameter(hp + "a_src", nk::glorot_uniform(cfg.hidden, 1, rng)),
                                   Parameter(hp + "W_alpha", nk::glorot_uniform(d_in, cfg.hidden, rng))});
        }
        if (cfg.residual && d_in != layer.out_dim) {
            layer.shortcut = Parameter("enc.l" + std::to_string(l) + ".shortcut", nk::glorot_uniform(d_in, layer.out_dim, rng));
            layer.has_shortcut = true;
        }
        d_in = layer.out_dim;
        p.layers.push_back(std::move(layer));
    }
    return p;
}

std::vector<Parameter*> EncoderParams::parameters() {
    std::vector<Parameter*> out;
    for (auto& layer : layers) {
        for (auto& h : layer.heads) {
            out.push_back(&h.w);
            out.push_back(&h.a_dst);
            out.push_back(&h.a_src);
            out.push_back(&h.w_alpha);
        }
        if (layer.has_shortcut) out.push_back(&layer.shortcut);
    }
    return out;
}

namespace {

Tensor run(Tape& tape, const Tensor& z, const BranchGraph& g, EncoderParams& params, std::vector<Tensor>* attention) {
    if (g.num_nodes() != z.rows()) {
        throw DimensionError("encoder: branch has " + std::to_string(g.num_nodes()) + " nodes but Z has " + std::to_string(z.rows()));
    }
    const EncoderConfig& cfg = params.config;
    Tensor x = z;
    std::vector<Tensor> prev_scores;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        LayerParams& layer = params.layers[l];
        const bool last = l + 1 == params.layers.size();
        std::vector<Tensor> outs;
        std::vector<Tensor> scores;
        for (std::size_t h = 0; h < layer.heads.size(); ++h) {
            HeadParams& hp = layer.heads[h];
            Tensor e = attention_coefficients(x, tape.param(hp.w), tape.param(hp.a_dst), tape.param(hp.a_src), g);
            if (cfg.attention_residual && !prev_scores.empty()) e = nk::add(e, prev_scores[h]);
            scores.push_back(e);
            Tensor alpha = similarity_aware_attention(e, g, cfg.slope);
            if (attention && h == 0) attention->push_back(alpha);
            outs.push_back(aggregate(alpha, x, tape.param(hp.w_alpha), g, cfg.slope));
        }
        Tensor out;
        if (last) {
            out = outs[0];
            for (std::size_t h = 1; h < outs.size(); ++h) out = nk::add(out, outs[h]);
            if (outs.size() > 1) out = nk::scale(out, 1.0 / static_cast<double>(outs.size()));
        } else {
            out = outs.size() == 1 ? outs[0] : nk::concat_cols(outs);
        }
        if (cfg.residual) out = nk::add(out, layer.has_shortcut ? nk::matmul(x, tape.param(layer.shortcut)) : x);
        prev_scores = std::move(scores);
        x = out;
    }
    return x;
}

}  // namespace

Tensor encode(Tape& tape, const Tensor& z, const BranchGraph& g, EncoderParams& params) {
    return run(tape, z, g, params, nullptr);
}

Tensor layer_attention(Tape& tape, const Tensor& z, const BranchGraph& g, EncoderParams& params, std::size_t layer) {
    std::vector<Tensor> att;
    run(tape, z, g, params, &att);
    return att.at(layer);
}

std::pair<Tensor, Tensor> forward(Tape& tape, const Tensor& z, const BranchGraph& noised, const BranchGraph& synthesized,
                                  EncoderParams& params) {
    return {encode(tape, z, noised, params), encode(tape, z, synthesized, params)};
}

}  // namespace noisehgnn::encoder
