#include <doctest.h>

#include <cmath>
#include <numeric>

#include "noisehgnn/encoder.hpp"
#include "noisehgnn/errors.hpp"
#include "support.hpp"

using namespace noisehgnn;
using namespace noisehgnn::encoder;
using support::random_matrix;
namespace nk = noisehgnn::numkernel;

namespace {

double leaky(double x) { return x >= 0 ? x : 0.01 * x; }

// Neighborhood of each node in column order, self loop of weight 1 included.
std::vector<std::vector<std::pair<int, double>>> neighborhoods(const Matrix& a) {
    std::vector<std::vector<std::pair<int, double>>> out(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j)
            if (i == j || a(i, j) != 0.0) out[i].push_back({static_cast<int>(j), i == j ? 1.0 : a(i, j)});
    return out;
}

// Whole-encoder reference in plain loops. `scores` carries per-head edge scores between layers.
Matrix encoder_oracle(const Matrix& z, const Matrix& a, EncoderParams& p) {
    const auto nb = neighborhoods(a);
    const std::size_t n = z.rows();
    Matrix x = z;
    std::vector<std::vector<std::vector<double>>> prev;  // [head][node][slot]
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        auto& layer = p.layers[l];
        const bool last = l + 1 == p.layers.size();
        const std::size_t hid = p.config.hidden, heads = layer.heads.size();
        Matrix out(n, layer.out_dim);
        std::vector<std::vector<std::vector<double>>> cur(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            auto& hp = layer.heads[h];
            const Matrix wz = nk::product(x, hp.w.value), msg = nk::product(x, hp.w_alpha.value);
            cur[h].resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<double> e;
                for (std::size_t s = 0; s < nb[i].size(); ++s) {
                    const auto j = static_cast<std::size_t>(nb[i][s].first);
                    double v = 0.0;
                    for (std::size_t c = 0; c < hid; ++c) v += wz(i, c) * hp.a_dst.value[c] + wz(j, c) * hp.a_src.value[c];
                    if (p.config.attention_residual && !prev.empty()) v += prev[h][i][s];
                    e.push_back(v);
                }
                cur[h][i] = e;
                double mx = -1e300, denom = 0.0;
                for (double v : e) mx = std::max(mx, leaky(v));
                for (double v : e) denom += std::exp(leaky(v) - mx);
                for (std::size_t c = 0; c < hid; ++c) {
                    double acc = 0.0;
                    for (std::size_t s = 0; s < nb[i].size(); ++s) {
                        const double alpha = std::exp(leaky(e[s]) - mx) / denom * nb[i][s].second;
                        acc += alpha * msg(static_cast<std::size_t>(nb[i][s].first), c);
                    }
                    if (last)
                        out(i, c) += leaky(acc) / static_cast<double>(heads);
                    else
                        out(i, h * hid + c) = leaky(acc);
                }
            }
        }
        if (p.config.residual) {
            const Matrix sc = layer.has_shortcut ? nk::product(x, layer.shortcut.value) : x;
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += sc[i];
        }
        prev = std::move(cur);
        x = out;
    }
    return x;
}

Matrix symmetric_binary(std::size_t n, double density, support::Rng& rng) {
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            if (rng.bernoulli(density)) a(i, j) = a(j, i) = 1.0;
    return a;
}

BranchGraph manual_branch(Tape& tape, std::vector<int> dst, std::vector<int> src, std::vector<std::size_t> offsets,
                          std::vector<double> w) {
    BranchGraph g;
    g.dst = std::move(dst);
    g.src = std::move(src);
    g.offsets = std::move(offsets);
    const std::size_t count = w.size();
    g.weights = tape.constant(Matrix(count, 1, std::move(w)));
    return g;
}

// Dense N x N view of per-entry values of a branch.
Matrix dense_entries(const BranchGraph& g, const Matrix& values) {
    Matrix out(g.num_nodes(), g.num_nodes());
    for (std::size_t e = 0; e < g.num_entries(); ++e) out(static_cast<std::size_t>(g.dst[e]), static_cast<std::size_t>(g.src[e])) = values[e];
    return out;
}

}  // namespace

TEST_CASE("mask_edges") {
    support::Rng rng(41);
    const Matrix a = symmetric_binary(30, 0.2, rng);
    CHECK(mask_edges(a, 0.0, 5) == a);
    CHECK(mask_edges(a, 0.3, 5) == mask_edges(a, 0.3, 5));
    CHECK_THROWS_AS(mask_edges(a, 1.0, 0), DomainError);
    CHECK_THROWS_AS(mask_edges(a, -0.1, 0), DomainError);

    Matrix weighted = random_matrix(10, 10, rng, 0.1, 1.0);
    const Matrix m = mask_edges(weighted, 0.5, 3);
    for (std::size_t i = 0; i < m.size(); ++i) CHECK((m[i] == 0.0 || m[i] == weighted[i]));

    // Survivors over 100 seeds against Binomial(M, 1 - p).
    std::size_t edges = 0;
    for (double v : a.values()) edges += v != 0.0;
    const double p = 0.3, mean = static_cast<double>(edges) * (1 - p), sd = std::sqrt(static_cast<double>(edges) * p * (1 - p));
    double total = 0.0;
    int outside = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const Matrix out = mask_edges(a, p, seed);
        double kept = 0.0;
        for (double v : out.values()) kept += v != 0.0;
        total += kept;
        outside += std::abs(kept - mean) > 3.0 * sd;
    }
    CHECK(std::abs(total - 100.0 * mean) <= 3.0 * std::sqrt(100.0) * sd);
    CHECK(outside <= 3);
}

TEST_CASE("branch_from_edges equals branch_from_dense of the masked matrix") {
    support::Rng rng(42);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 3 + rng.below(20);
        Matrix a = support::random_binary(n, n, 0.3, rng);
        if (trial % 2) a = mask_edges(random_matrix(n, n, rng, 0.1, 1.0), 0.6, trial);
        const double p = trial % 3 == 0 ? 0.0 : 0.4;
        Tape tape;
        const BranchGraph x = branch_from_edges(tape, EdgeList::from_dense(a), p, 77 + trial);
        const BranchGraph y = branch_from_dense(tape, mask_edges(a, p, 77 + trial));
        CHECK(x.dst == y.dst);
        CHECK(x.src == y.src);
        CHECK(x.offsets == y.offsets);
        CHECK(x.weights.value() == y.weights.value());
        // Every node has its self loop.
        for (std::size_t i = 0; i < n; ++i) {
            bool self = false;
            for (std::size_t e = x.offsets[i]; e < x.offsets[i + 1]; ++e) self |= x.src[e] == static_cast<int>(i);
            CHECK(self);
        }
    }
}

TEST_CASE("attention_coefficients examples") {
    support::Rng rng(43);
    Tape tape;
    const BranchGraph g = manual_branch(tape, {0, 1, 2}, {1, 2, 0}, {0, 1, 2, 3}, {1, 1, 1});
    const Matrix z = random_matrix(3, 4, rng), w = random_matrix(4, 2, rng);
    const Matrix ad = random_matrix(2, 1, rng), as = random_matrix(2, 1, rng);

    const Matrix zero = attention_coefficients(tape.constant(z), tape.constant(w), tape.constant(Matrix(2, 1)), tape.constant(Matrix(2, 1)), g).value();
    CHECK(zero == Matrix(3, 1));

    const Matrix e = attention_coefficients(tape.constant(z), tape.constant(w), tape.constant(ad), tape.constant(as), g).value();
    const Matrix wz = nk::product(z, w);
    for (std::size_t k = 0; k < 3; ++k) {
        const auto i = static_cast<std::size_t>(g.dst[k]), j = static_cast<std::size_t>(g.src[k]);
        CHECK(e[k] == doctest::Approx(wz(i, 0) * ad[0] + wz(i, 1) * ad[1] + wz(j, 0) * as[0] + wz(j, 1) * as[1]).epsilon(1e-13));
    }

    // Symmetric halves with equal features give e_ij = e_ji.
    Matrix same = z;
    for (std::size_t c = 0; c < 4; ++c) same(1, c) = same(0, c);
    const BranchGraph pair = manual_branch(tape, {0, 1}, {1, 0}, {0, 1, 2}, {1, 1});
    const Matrix s = attention_coefficients(tape.constant(same), tape.constant(w), tape.constant(ad), tape.constant(ad), pair).value();
    CHECK(s[0] == s[1]);
}

TEST_CASE("similarity_aware_attention examples") {
    Tape tape;
    const BranchGraph one = manual_branch(tape, {0}, {1}, {0, 1, 1}, {1.0});
    // Node 1 has an empty neighborhood only in this hand-built graph; attention needs none for it.
    const BranchGraph one_ok = manual_branch(tape, {0}, {1}, {0, 1}, {1.0});
    CHECK(similarity_aware_attention(tape.constant(Matrix(1, 1, 2.3)), one_ok, 0.01).value()[0] == 1.0);
    CHECK_THROWS_AS(similarity_aware_attention(tape.constant(Matrix(1, 1, 2.3)), one, 0.01), ContractError);

    const BranchGraph two = manual_branch(tape, {0, 0}, {1, 2}, {0, 2}, {1.0, 1.0});
    const Matrix half = similarity_aware_attention(tape.constant(Matrix(2, 1, -0.7)), two, 0.01).value();
    CHECK(half[0] == 0.5);
    CHECK(half[1] == 0.5);

    const BranchGraph weighted = manual_branch(tape, {0}, {1}, {0, 1}, {0.8});
    CHECK(similarity_aware_attention(tape.constant(Matrix(1, 1, -4.0)), weighted, 0.01).value()[0] == doctest::Approx(0.8));
}

TEST_CASE("aggregate examples") {
    support::Rng rng(44);
    Tape tape;
    const Matrix z = random_matrix(3, 2, rng, 0.0, 1.0);
    const BranchGraph g = manual_branch(tape, {0, 0, 1, 2}, {0, 2, 1, 2}, {0, 2, 3, 4}, {1, 1, 1, 1});
    const Matrix h = aggregate(tape.constant(Matrix(4, 1, std::vector<double>{0, 1, 1, 1})), tape.constant(z), tape.constant(Matrix::identity(2)), g, 0.01).value();
    CHECK(h(0, 0) == z(2, 0));
    CHECK(h(0, 1) == z(2, 1));
    const Matrix none = aggregate(tape.constant(Matrix(4, 1)), tape.constant(z), tape.constant(random_matrix(2, 5, rng)), g, 0.01).value();
    CHECK(none == Matrix(3, 5));
}

TEST_CASE("5-node, 2-head encoder matches the per-head oracle") {
    support::Rng rng(45);
    for (bool residual : {false, true}) {
        EncoderConfig cfg{.layers = 2, .heads = 2, .hidden = 3, .residual = residual, .attention_residual = residual};
        EncoderParams p = EncoderParams::init(4, cfg, rng);
        CHECK(p.layers[0].out_dim == 6);
        CHECK(p.layers[1].out_dim == 3);
        CHECK(p.layers[0].has_shortcut == residual);
        const Matrix z = random_matrix(5, 4, rng);
        Matrix a = symmetric_binary(5, 0.5, rng);
        a(0, 4) = 0.0;
        a(4, 0) = 0.7;  // one weighted, asymmetric entry
        Tape tape;
        const Matrix h = encode(tape, tape.constant(z), branch_from_dense(tape, a), p).value();
        const Matrix oracle = encoder_oracle(z, a, p);
        REQUIRE(h.same_shape(oracle));
        for (std::size_t i = 0; i < h.size(); ++i) CHECK(h[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
    }
}

TEST_CASE("architecture shape with 2 layers, 8 heads, hidden 64") {
    support::Rng rng(46);
    EncoderParams p = EncoderParams::init(10, {.layers = 2, .heads = 8, .hidden = 64}, rng);
    CHECK(p.layers.size() == 2);
    CHECK(p.layers[0].heads.size() == 8);
    CHECK(p.layers[0].out_dim == 512);
    CHECK(p.layers[1].in_dim == 512);
    CHECK(p.layers[1].out_dim == 64);
    Tape tape;
    const Matrix h = encode(tape, tape.constant(random_matrix(6, 10, rng)), branch_from_dense(tape, symmetric_binary(6, 0.4, rng)), p).value();
    CHECK(h.rows() == 6);
    CHECK(h.cols() == 64);
    for (double v : h.values()) CHECK(std::isfinite(v));
}

TEST_CASE("binary-branch attention rows sum to one") {
    support::Rng rng(47);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 4 + rng.below(20);
        EncoderParams p = EncoderParams::init(3, {.layers = 2, .heads = 2, .hidden = 4}, rng);
        Tape tape;
        const BranchGraph g = branch_from_edges(tape, EdgeList::from_dense(symmetric_binary(n, 0.3, rng)), 0.3, rng.next_u64());
        for (std::size_t l = 0; l < 2; ++l) {
            const Matrix alpha = layer_attention(tape, tape.constant(random_matrix(n, 3, rng, -3, 3)), g, p, l).value();
            for (std::size_t i = 0; i < n; ++i) {
                double s = 0.0;
                for (std::size_t e = g.offsets[i]; e < g.offsets[i + 1]; ++e) s += alpha[e];
                CHECK(std::abs(s - 1.0) <= 1e-12);
            }
        }
    }
}

TEST_CASE("synthesized-branch attention vanishes exactly where the masked graph does") {
    support::Rng rng(48);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 5 + rng.below(15), k = 1 + rng.below(4);
        const Matrix zb = random_matrix(n, 4, rng);
        const synth::KnnSelection sel = synth::knn_select(zb, k);
        Tape tape;
        const Tensor w = synth::selection_weights(tape.constant(zb), sel);
        const std::uint64_t seed = rng.next_u64();
        const BranchGraph g = branch_from_selection(tape, sel, w, 0.3, seed);
        const Matrix masked = mask_edges(synth::to_dense(sel, w.value().values(), n), 0.3, seed);

        EncoderParams p = EncoderParams::init(4, {.layers = 1, .heads = 1, .hidden = 3}, rng);
        const Matrix alpha = layer_attention(tape, tape.constant(zb), g, p, 0).value();
        const Matrix dense = dense_entries(g, alpha);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                CHECK((dense(i, j) == 0.0) == (masked(i, j) == 0.0));
                CHECK(dense(i, j) <= masked(i, j) + 1e-15);
            }
    }
}

TEST_CASE("permuting node ids permutes the output rows") {
    support::Rng rng(49);
    EncoderParams p = EncoderParams::init(3, {.layers = 2, .heads = 2, .hidden = 3}, rng);
    const std::size_t n = 9;
    const Matrix z = random_matrix(n, 3, rng);
    const Matrix a = symmetric_binary(n, 0.35, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Matrix zp(n, 3), ap(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < 3; ++c) zp(perm[i], c) = z(i, c);
        for (std::size_t j = 0; j < n; ++j) ap(perm[i], perm[j]) = a(i, j);
    }
    Tape tape;
    const Matrix h = encode(tape, tape.constant(z), branch_from_dense(tape, a), p).value();
    const Matrix hp = encode(tape, tape.constant(zp), branch_from_dense(tape, ap), p).value();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < h.cols(); ++c) CHECK(hp(perm[i], c) == doctest::Approx(h(i, c)).epsilon(1e-12));
}

TEST_CASE("identical branches give bit-identical outputs") {
    support::Rng rng(50);
    EncoderParams p = EncoderParams::init(4, {.layers = 2, .heads = 3, .hidden = 4}, rng);
    const Matrix a = symmetric_binary(10, 0.3, rng);
    Tape tape;
    const Tensor z = tape.constant(random_matrix(10, 4, rng));
    const auto [h, h_theta] = forward(tape, z, branch_from_dense(tape, a), branch_from_edges(tape, EdgeList::from_dense(a), 0.0, 3), p);
    CHECK(h.value() == h_theta.value());
}

TEST_CASE("encoder gradients pass the finite-difference check on 12 nodes") {
    support::Rng rng(51);
    EncoderParams p = EncoderParams::init(4, {.layers = 2, .heads = 2, .hidden = 3}, rng);
    const Matrix z = random_matrix(12, 4, rng);
    const Matrix a = symmetric_binary(12, 0.25, rng);
    const Matrix zb = random_matrix(12, 3, rng);
    const synth::KnnSelection sel = synth::knn_select(zb, 3);
    auto params = p.parameters();
    const auto report = numkernel::grad_check_params(
        [&](Tape& tape) {
            const Tensor zt = tape.constant(z);
            const Tensor w = synth::selection_weights(tape.constant(zb), sel);
            const auto [h, ht] = forward(tape, zt, branch_from_dense(tape, a), branch_from_selection(tape, sel, w, 0.2, 4), p);
            return nk::add(support::weighted_sum(h), support::weighted_sum(ht));
        },
        params, 1e-4);
    INFO("error " << report.max_rel_error << " at param " << report.worst_input);
    CHECK(report.passed);
}

TEST_CASE("encoder config errors") {
    support::Rng rng(52);
    CHECK_THROWS_AS(EncoderParams::init(3, {.layers = 0}, rng), DomainError);
    EncoderParams p = EncoderParams::init(3, {.layers = 1, .heads = 1, .hidden = 2}, rng);
    Tape tape;
    CHECK_THROWS_AS(encode(tape, tape.constant(Matrix(4, 3)), branch_from_dense(tape, Matrix(5, 5)), p), DimensionError);
    CHECK_THROWS_AS(keep_flags(3, 1.0, 0), DomainError);
}
