#include "noisehgnn/hetgraph.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "noisehgnn/random.hpp"

namespace noisehgnn::hetgraph {

HeteroGraph::HeteroGraph(std::vector<std::string> type_names, std::vector<std::size_t> counts, int target_type)
    : names_(std::move(type_names)), counts_(std::move(counts)), target_type_(target_type) {
    if (names_.size() != counts_.size()) throw SpecError("HeteroGraph: type name / count length mismatch");
    if (target_type < 0 || static_cast<std::size_t>(target_type) >= names_.size()) {
        throw SpecError("HeteroGraph: target type " + std::to_string(target_type) + " out of range");
    }
    offsets_.resize(counts_.size());
    for (std::size_t t = 0; t < counts_.size(); ++t) {
        offsets_[t] = total_;
        total_ += counts_[t];
    }
    features_.resize(names_.size(), FeatureBlock::identity());
    labels_.resize(counts_[static_cast<std::size_t>(target_type)]);
}

int HeteroGraph::type_index(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw SpecError("unknown node type '" + name + "'");
    return static_cast<int>(it - names_.begin());
}

int HeteroGraph::node_type(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= total_) throw SpecError("node id " + std::to_string(id) + " out of range");
    auto it = std::upper_bound(offsets_.begin(), offsets_.end(), static_cast<std::size_t>(id));
    // Skip zero-count types sharing an offset.
    int t = static_cast<int>(it - offsets_.begin()) - 1;
    while (counts_[static_cast<std::size_t>(t)] == 0) --t;
    return t;
}

std::vector<int> HeteroGraph::target_ids() const {
    std::vector<int> ids(num_target());
    std::iota(ids.begin(), ids.end(), static_cast<int>(type_offset(target_type_)));
    return ids;
}

int HeteroGraph::add_edge_type(int src_type, int dst_type, std::string name) {
    if (src_type < 0 || dst_type < 0 || static_cast<std::size_t>(src_type) >= names_.size() ||
        static_cast<std::size_t>(dst_type) >= names_.size()) {
        throw SpecError("add_edge_type: node type out of range");
    }
    if (name.empty()) name = names_[static_cast<std::size_t>(src_type)] + "-" + names_[static_cast<std::size_t>(dst_type)];
    edge_types_.push_back({std::move(name), src_type, dst_type});
    return static_cast<int>(edge_types_.size() - 1);
}

int HeteroGraph::edge_type_index(const std::string& name) const {
    for (std::size_t i = 0; i < edge_types_.size(); ++i)
        if (edge_types_[i].name == name) return static_cast<int>(i);
    throw SpecError("unknown edge type '" + name + "'");
}

void HeteroGraph::add_edge(int src, int dst, int type) {
    if (type < 0 || static_cast<std::size_t>(type) >= edge_types_.size()) {
        throw SpecError("add_edge: unknown edge type " + std::to_string(type));
    }
    const EdgeType& sig = edge_types_[static_cast<std::size_t>(type)];
    if (node_type(src) != sig.src_type || node_type(dst) != sig.dst_type) {
        throw SpecError("add_edge: edge (" + std::to_string(src) + ", " + std::to_string(dst) + ") violates signature of '" +
                        sig.name + "'");
    }
    edges_.push_back({src, dst, type});
}

void HeteroGraph::set_features(int type, FeatureBlock block) {
    const auto t = static_cast<std::size_t>(type);
    if (!block.one_hot && block.values.rows() != counts_.at(t)) {
        throw DimensionError("set_features: type '" + names_[t] + "' has " + std::to_string(counts_[t]) + " nodes but " +
                             std::to_string(block.values.rows()) + " feature rows");
    }
    features_.at(t) = std::move(block);
}

std::size_t HeteroGraph::feature_dim(int t) const {
    const FeatureBlock& f = features(t);
    return f.one_hot ? type_count(t) : f.values.cols();
}

void HeteroGraph::set_labels(std::vector<std::vector<int>> labels, std::size_t num_classes, LabelMode mode) {
    if (labels.size() != num_target()) {
        throw DimensionError("set_labels: expected " + std::to_string(num_target()) + " label rows, got " +
                             std::to_string(labels.size()));
    }
    for (const auto& row : labels) {
        for (int c : row) {
            if (c < 0 || static_cast<std::size_t>(c) >= num_classes) throw SpecError("set_labels: class id out of range");
        }
        if (mode == LabelMode::single && row.size() > 1) throw SpecError("set_labels: single-label node with several classes");
    }
    labels_ = std::move(labels);
    num_classes_ = num_classes;
    label_mode_ = mode;
}

void HeteroGraph::set_splits(Splits splits) {
    splits_ = std::move(splits);
}

void HeteroGraph::validate() const {
    for (const Edge& e : edges_) {
        if (e.src < 0 || e.dst < 0 || static_cast<std::size_t>(e.src) >= total_ || static_cast<std::size_t>(e.dst) >= total_) {
            throw SpecError("edge endpoint out of range");
        }
        if (e.type < 0 || static_cast<std::size_t>(e.type) >= edge_types_.size()) throw SpecError("edge type out of range");
        const EdgeType& sig = edge_types_[static_cast<std::size_t>(e.type)];
        if (node_type(e.src) != sig.src_type || node_type(e.dst) != sig.dst_type) {
            throw SpecError("edge (" + std::to_string(e.src) + ", " + std::to_string(e.dst) + ") violates signature of '" +
                            sig.name + "'");
        }
    }
    std::set<int> seen;
    for (const auto* part : {&splits_.train, &splits_.val, &splits_.test}) {
        for (int i : *part) {
            if (i < 0 || static_cast<std::size_t>(i) >= num_target()) throw SpecError("split index out of range");
            if (!seen.insert(i).second) throw SpecError("split sets overlap at target node " + std::to_string(i));
            if (labels_[static_cast<std::size_t>(i)].empty() && label_mode_ == LabelMode::single) {
                throw SpecError("split node " + std::to_string(i) + " has no label");
            }
        }
    }
}

HeteroGraph apply_feature_regime(const HeteroGraph& g, int eta) {
    if (eta < 0 || eta > 2) throw SpecError("feature regime must be 0, 1 or 2");
    HeteroGraph out = g;
    for (int t = 0; t < static_cast<int>(g.num_types()); ++t) {
        if (t == g.target_type()) continue;
        if (eta == 1) out.set_features(t, FeatureBlock{Matrix(g.type_count(t), 1, 1.0), false});
        else if (eta == 2) out.set_features(t, FeatureBlock::identity());
    }
    out.set_feature_regime(eta);
    return out;
}

// ---------------------------------------------------------------------------

AdjacencyMatrix build_full_adjacency(const HeteroGraph& g, bool symmetric) {
    const std::size_t n = g.num_nodes();
    AdjacencyMatrix a(n, n);
    for (const Edge& e : g.edges()) {
        a(e.src, e.dst) = 1.0;
        if (symmetric) a(e.dst, e.src) = 1.0;
    }
    return a;
}

MetapathSpec MetapathSpec::parse(const std::string& text, const HeteroGraph& g) {
    MetapathSpec spec;
    spec.name = text;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok.erase(0, tok.find_first_not_of(" \t"));
        tok.erase(tok.find_last_not_of(" \t") + 1);
        if (tok.empty()) throw SpecError("metapath '" + text + "': empty step");
        MetapathStep step;
        if (tok.front() == '~') {
            step.reverse = true;
            tok.erase(0, 1);
        }
        const bool numeric = !tok.empty() && std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; });
        step.edge_type = numeric ? std::stoi(tok) : g.edge_type_index(tok);
        spec.steps.push_back(step);
    }
    validate_metapath(g, spec);
    return spec;
}

MetapathSpec MetapathSpec::reversed() const {
    MetapathSpec r;
    r.name = name + "^R";
    for (auto it = steps.rbegin(); it != steps.rend(); ++it) r.steps.push_back({it->edge_type, !it->reverse});
    return r;
}

std::string MetapathSpec::to_string() const {
    std::string s;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (i) s += ",";
        if (steps[i].reverse) s += "~";
        s += std::to_string(steps[i].edge_type);
    }
    return s;
}

namespace {

std::pair<int, int> step_types(const HeteroGraph& g, const MetapathStep& s) {
    const EdgeType& et = g.edge_types().at(static_cast<std::size_t>(s.edge_type));
    return s.reverse ? std::pair{et.dst_type, et.src_type} : std::pair{et.src_type, et.dst_type};
}

}  // namespace

void validate_metapath(const HeteroGraph& g, const MetapathSpec& spec) {
    if (spec.steps.empty()) throw SpecError("metapath '" + spec.name + "' has no steps");
    int at = g.target_type();
    for (std::size_t i = 0; i < spec.steps.size(); ++i) {
        const int et = spec.steps[i].edge_type;
        if (et < 0 || static_cast<std::size_t>(et) >= g.edge_types().size()) {
            throw SpecError("metapath '" + spec.name + "': unknown edge type " + std::to_string(et));
        }
        const auto [from, to] = step_types(g, spec.steps[i]);
        if (from != at) {
            throw SpecError("metapath '" + spec.name + "': step " + std::to_string(i) + " starts at type '" +
                            g.type_names()[static_cast<std::size_t>(from)] + "' but the path is at '" +
                            g.type_names()[static_cast<std::size_t>(at)] + "'");
        }
        at = to;
    }
    if (at != g.target_type()) throw SpecError("metapath '" + spec.name + "' does not end at the target type");
}

AdjacencyMatrix metapath_graph(const HeteroGraph& g, const MetapathSpec& spec) {
    validate_metapath(g, spec);
    // Per-hop CSR lists over local indices, then a frontier walk from every target node.
    struct Hop {
        std::vector<std::size_t> offsets;
        std::vector<int> next;
    };
    std::vector<Hop> hops;
    for (const MetapathStep& s : spec.steps) {
        const auto [from, to] = step_types(g, s);
        const int off_from = static_cast<int>(g.type_offset(from)), off_to = static_cast<int>(g.type_offset(to));
        std::vector<std::pair<int, int>> pairs;
        for (const Edge& e : g.edges()) {
            if (e.type != s.edge_type) continue;
            const int a = s.reverse ? e.dst : e.src;
            const int b = s.reverse ? e.src : e.dst;
            pairs.emplace_back(a - off_from, b - off_to);
        }
        std::sort(pairs.begin(), pairs.end());
        pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
        Hop h;
        h.offsets.assign(g.type_count(from) + 1, 0);
        for (const auto& [a, b] : pairs) ++h.offsets[static_cast<std::size_t>(a) + 1];
        for (std::size_t i = 1; i < h.offsets.size(); ++i) h.offsets[i] += h.offsets[i - 1];
        for (const auto& pr : pairs) h.next.push_back(pr.second);
        hops.push_back(std::move(h));
    }

    const std::size_t nt = g.num_target();
    AdjacencyMatrix reach(nt, nt);
    std::size_t widest = nt;
    for (const MetapathStep& s : spec.steps) widest = std::max(widest, g.type_count(step_types(g, s).second));
    std::vector<std::size_t> stamp(widest, 0);
    std::size_t clock = 0;
    std::vector<int> frontier, next;
    for (std::size_t u = 0; u < nt; ++u) {
        frontier.assign(1, static_cast<int>(u));
        for (const Hop& h : hops) {
            ++clock;
            next.clear();
            for (int a : frontier) {
                for (std::size_t e = h.offsets[a]; e < h.offsets[a + 1]; ++e) {
                    const int b = h.next[e];
                    if (stamp[b] == clock) continue;
                    stamp[b] = clock;
                    next.push_back(b);
                }
            }
            frontier.swap(next);
            if (frontier.empty()) break;
        }
        for (int v : frontier) reach(u, static_cast<std::size_t>(v)) = 1.0;
        reach(u, u) = 0.0;
    }
    return reach;
}

AdjacencyMatrix target_subgraph(const AdjacencyMatrix& a_theta, const HeteroGraph& g) {
    if (a_theta.rows() != g.num_nodes() || a_theta.cols() != g.num_nodes()) {
        throw DimensionError("target_subgraph: expected " + std::to_string(g.num_nodes()) + " square, got " + a_theta.shape_string());
    }
    const std::size_t nt = g.num_target(), off = g.type_offset(g.target_type());
    AdjacencyMatrix out(nt, nt);
    for (std::size_t i = 0; i < nt; ++i)
        for (std::size_t j = 0; j < nt; ++j) out(i, j) = a_theta(off + i, off + j);
    return out;
}

HomogeneityResult homogeneity_score(const AdjacencyMatrix& adj, std::span<const int> labels) {
    if (adj.rows() != adj.cols() || adj.rows() != labels.size()) {
        throw DimensionError("homogeneity_score: adjacency " + adj.shape_string() + " vs " + std::to_string(labels.size()) + " labels");
    }
    HomogeneityResult r;
    double total = 0.0;
    const std::size_t n = labels.size();
    for (std::size_t v = 0; v < n; ++v) {
        std::size_t nb = 0, same = 0;
        for (std::size_t u = 0; u < n; ++u) {
            if (adj(u, v) == 0.0) continue;
            ++nb;
            if (labels[u] == labels[v]) ++same;
        }
        if (nb == 0) {
            ++r.isolated;
            continue;
        }
        ++r.counted;
        total += static_cast<double>(same) / static_cast<double>(nb);
    }
    r.beta = r.counted ? total / static_cast<double>(r.counted) : 0.0;
    return r;
}

std::vector<int> label_keys(const HeteroGraph& g) {
    std::vector<int> keys;
    std::map<std::vector<int>, int> ids;
    for (auto row : g.labels()) {
        if (row.empty()) {
            keys.push_back(-1);
            continue;
        }
        std::sort(row.begin(), row.end());
        auto [it, _] = ids.emplace(row, static_cast<int>(ids.size()));
        keys.push_back(it->second);
    }
    return keys;
}

// ---------------------------------------------------------------------------

HeteroGraph generate_synthetic(const SyntheticConfig& cfg) {
    auto check_prob = [](double p, const char* what) {
        if (!(p >= 0.0 && p <= 1.0)) throw SpecError(std::string("generate_synthetic: ") + what + " must lie in [0, 1]");
    };
    check_prob(cfg.intra_class_link_prob, "intra_class_link_prob");
    check_prob(cfg.inter_class_link_prob, "inter_class_link_prob");
    check_prob(cfg.train_fraction + cfg.val_fraction, "train_fraction + val_fraction");
    if (cfg.classes == 0 || cfg.n_target < cfg.classes) throw SpecError("generate_synthetic: need at least one node per class");

    Rng rng(cfg.seed);
    std::vector<std::string> names{"target"};
    std::vector<std::size_t> counts{cfg.n_target};
    for (std::size_t k = 0; k < cfg.n_aux.size(); ++k) {
        names.push_back("aux" + std::to_string(k));
        counts.push_back(cfg.n_aux[k]);
    }
    HeteroGraph g(names, counts, 0);

    // Balanced classes in random order.
    std::vector<int> cls(cfg.n_target);
    for (std::size_t i = 0; i < cls.size(); ++i) cls[i] = static_cast<int>(i % cfg.classes);
    rng.shuffle(cls);

    Matrix means(cfg.classes, cfg.feature_dim);
    for (std::size_t i = 0; i < means.size(); ++i) means[i] = cfg.class_separation * rng.normal();

    Matrix x(cfg.n_target, cfg.feature_dim);
    for (std::size_t i = 0; i < cfg.n_target; ++i)
        for (std::size_t j = 0; j < cfg.feature_dim; ++j)
            x(i, j) = means(static_cast<std::size_t>(cls[i]), j) + cfg.feature_noise * rng.normal();
    g.set_features(0, FeatureBlock{std::move(x), false});

    for (std::size_t k = 0; k < cfg.n_aux.size(); ++k) {
        const int type = static_cast<int>(k + 1);
        const int et = g.add_edge_type(0, type, "target-aux" + std::to_string(k));
        Matrix ax(cfg.n_aux[k], cfg.feature_dim);
        const auto aux_off = static_cast<int>(g.type_offset(type));
        for (std::size_t a = 0; a < cfg.n_aux[k]; ++a) {
            const auto dominant = static_cast<int>(a % cfg.classes);
            for (std::size_t j = 0; j < cfg.feature_dim; ++j)
                ax(a, j) = means(static_cast<std::size_t>(dominant), j) + cfg.feature_noise * rng.normal();
            for (std::size_t t = 0; t < cfg.n_target; ++t) {
                const double p = cls[t] == dominant ? cfg.intra_class_link_prob : cfg.inter_class_link_prob;
                if (rng.bernoulli(p)) g.add_edge(static_cast<int>(t), aux_off + static_cast<int>(a), et);
            }
        }
        g.set_features(type, FeatureBlock{std::move(ax), false});
    }

    std::vector<std::vector<int>> labels(cfg.n_target);
    for (std::size_t i = 0; i < cfg.n_target; ++i) labels[i] = {cls[i]};
    g.set_labels(std::move(labels), cfg.classes, LabelMode::single);

    std::vector<int> order(cfg.n_target);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const auto n_train = static_cast<std::size_t>(cfg.train_fraction * static_cast<double>(cfg.n_target));
    const auto n_val = static_cast<std::size_t>(cfg.val_fraction * static_cast<double>(cfg.n_target));
    Splits s;
    s.train.assign(order.begin(), order.begin() + static_cast<long>(n_train));
    s.val.assign(order.begin() + static_cast<long>(n_train), order.begin() + static_cast<long>(n_train + n_val));
    s.test.assign(order.begin() + static_cast<long>(n_train + n_val), order.end());
    for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
    g.set_splits(std::move(s));
    g.set_feature_regime(0);
    g.validate();
    return g;
}

double expected_synthetic_edges(const HeteroGraph& g, const SyntheticConfig& cfg) {
    std::vector<double> per_class(cfg.classes, 0.0);
    for (const auto& row : g.labels()) per_class[static_cast<std::size_t>(row.at(0))] += 1.0;
    const double nt = static_cast<double>(g.num_target());
    double expected = 0.0;
    for (std::size_t n : cfg.n_aux) {
        for (std::size_t a = 0; a < n; ++a) {
            const double same = per_class[a % cfg.classes];
            expected += same * cfg.intra_class_link_prob + (nt - same) * cfg.inter_class_link_prob;
        }
    }
    return expected;
}

}  // namespace noisehgnn::hetgraph
