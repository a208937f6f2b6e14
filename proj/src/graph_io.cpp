#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "noisehgnn/hetgraph.hpp"
#include "noisehgnn/random.hpp"

namespace noisehgnn::hetgraph {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::stringstream ss(line);
    while (std::getline(ss, cur, sep)) out.push_back(cur);
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

long parse_long(const std::string& s, const std::string& file, std::size_t line, const char* what) {
    long v = 0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    while (b < e && (*b == ' ')) ++b;
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || p != e) throw ParseError(file, line, std::string("bad ") + what + " '" + s + "'");
    return v;
}

double parse_double(const std::string& s, const std::string& file, std::size_t line) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError(file, line, "bad feature value '" + s + "'");
    }
}

std::ifstream open_or_throw(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw ParseError(p.string(), 0, "cannot open file");
    return in;
}

struct RawLabel {
    long id;
    std::vector<int> classes;
    std::size_t line;
};

std::vector<RawLabel> read_labels(const fs::path& p, long& label_type, int& max_class, bool& multi) {
    std::vector<RawLabel> out;
    auto in = open_or_throw(p);
    std::string line;
    std::size_t ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cols = split(line, '\t');
        if (cols.size() < 4) throw ParseError(p.string(), ln, "expected 4 tab-separated columns (id, name, type, classes)");
        RawLabel r{parse_long(cols[0], p.string(), ln, "node id"), {}, ln};
        const long t = parse_long(cols[2], p.string(), ln, "node type");
        if (label_type >= 0 && t != label_type) throw ParseError(p.string(), ln, "labels span several node types");
        label_type = t;
        for (const auto& c : split(cols[3], ',')) {
            if (c.empty()) continue;
            const long cls = parse_long(c, p.string(), ln, "class id");
            if (cls < 0) throw ParseError(p.string(), ln, "negative class id");
            r.classes.push_back(static_cast<int>(cls));
            max_class = std::max(max_class, static_cast<int>(cls));
        }
        if (r.classes.size() > 1) multi = true;
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace

HeteroGraph load_hgb(const fs::path& dir, const HgbOptions& options) {
    struct RawNode {
        long id;
        long type;
        std::vector<double> feat;
        bool has_feat;
    };
    const fs::path node_path = dir / "node.dat";
    std::vector<RawNode> nodes;
    {
        auto in = open_or_throw(node_path);
        std::string line;
        std::size_t ln = 0;
        while (std::getline(in, line)) {
            ++ln;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            const auto cols = split(line, '\t');
            if (cols.size() < 3) throw ParseError(node_path.string(), ln, "expected at least 3 tab-separated columns");
            RawNode n{parse_long(cols[0], node_path.string(), ln, "node id"), parse_long(cols[2], node_path.string(), ln, "node type"),
                      {}, false};
            if (n.type < 0) throw ParseError(node_path.string(), ln, "negative node type");
            if (cols.size() >= 4 && !cols[3].empty()) {
                for (const auto& v : split(cols[3], ',')) n.feat.push_back(parse_double(v, node_path.string(), ln));
                n.has_feat = true;
            }
            nodes.push_back(std::move(n));
        }
    }
    if (nodes.empty()) throw ParseError(node_path.string(), 0, "no nodes");

    std::vector<std::size_t> order(nodes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return std::pair{nodes[a].type, nodes[a].id} < std::pair{nodes[b].type, nodes[b].id};
    });
    std::vector<long> type_ids;
    std::map<long, std::size_t> type_pos;
    std::unordered_map<long, int> remap;
    std::vector<std::size_t> counts;
    for (std::size_t k = 0; k < order.size(); ++k) {
        const RawNode& n = nodes[order[k]];
        if (!type_pos.count(n.type)) {
            type_pos[n.type] = type_ids.size();
            type_ids.push_back(n.type);
            counts.push_back(0);
        }
        ++counts[type_pos[n.type]];
        if (!remap.emplace(n.id, static_cast<int>(k)).second) {
            throw ParseError(node_path.string(), 0, "duplicate node id " + std::to_string(n.id));
        }
    }

    // Labels determine the target type.
    long label_type = -1;
    int max_class = -1;
    bool multi = false;
    const fs::path label_path = dir / "label.dat";
    auto train_labels = read_labels(label_path, label_type, max_class, multi);
    std::vector<RawLabel> test_labels;
    const fs::path test_path = dir / "label.dat.test";
    if (fs::exists(test_path)) test_labels = read_labels(test_path, label_type, max_class, multi);
    if (label_type < 0) throw ParseError(label_path.string(), 0, "no labels");
    if (!type_pos.count(label_type)) throw ParseError(label_path.string(), 0, "label node type absent from node.dat");

    std::vector<std::string> names;
    for (long t : type_ids) names.push_back(std::to_string(t));
    HeteroGraph g(names, counts, static_cast<int>(type_pos[label_type]));

    // Features per type: all rows or none.
    for (std::size_t t = 0; t < type_ids.size(); ++t) {
        const std::size_t off = g.type_offset(static_cast<int>(t));
        std::size_t with = 0, dim = 0;
        for (std::size_t k = off; k < off + counts[t]; ++k) {
            const RawNode& n = nodes[order[k]];
            if (!n.has_feat) continue;
            if (with == 0) dim = n.feat.size();
            if (n.feat.size() != dim) {
                throw ParseError(node_path.string(), 0, "node " + std::to_string(n.id) + " feature dimension differs within its type");
            }
            ++with;
        }
        if (with == 0) continue;
        if (with != counts[t]) throw ParseError(node_path.string(), 0, "type " + names[t] + " has features on only some nodes");
        Matrix x(counts[t], dim);
        for (std::size_t k = 0; k < counts[t]; ++k) {
            const auto& f = nodes[order[off + k]].feat;
            std::copy(f.begin(), f.end(), x.row(k).begin());
        }
        g.set_features(static_cast<int>(t), FeatureBlock{std::move(x), false});
    }

    const fs::path link_path = dir / "link.dat";
    {
        struct RawLink {
            int src, dst;
            long type;
            std::size_t line;
        };
        std::vector<RawLink> links;
        std::map<long, std::pair<int, int>> sig;
        std::map<long, std::size_t> sig_line;
        auto in = open_or_throw(link_path);
        std::string line;
        std::size_t ln = 0;
        while (std::getline(in, line)) {
            ++ln;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            const auto cols = split(line, '\t');
            if (cols.size() < 3) throw ParseError(link_path.string(), ln, "expected at least 3 tab-separated columns");
            const long s = parse_long(cols[0], link_path.string(), ln, "source id");
            const long d = parse_long(cols[1], link_path.string(), ln, "destination id");
            const long t = parse_long(cols[2], link_path.string(), ln, "link type");
            auto si = remap.find(s), di = remap.find(d);
            if (si == remap.end()) throw ParseError(link_path.string(), ln, "unknown source node " + std::to_string(s));
            if (di == remap.end()) throw ParseError(link_path.string(), ln, "unknown destination node " + std::to_string(d));
            const std::pair<int, int> types{g.node_type(si->second), g.node_type(di->second)};
            auto [it, fresh] = sig.emplace(t, types);
            if (!fresh && it->second != types) {
                throw ParseError(link_path.string(), ln, "link type " + std::to_string(t) + " joins different node types than at line " +
                                                             std::to_string(sig_line[t]));
            }
            if (fresh) sig_line[t] = ln;
            links.push_back({si->second, di->second, t, ln});
        }
        std::map<long, int> et_index;
        for (const auto& [t, types] : sig) et_index[t] = g.add_edge_type(types.first, types.second, std::to_string(t));
        for (const RawLink& l : links) g.add_edge(l.src, l.dst, et_index[l.type]);
    }

    const auto num_classes = static_cast<std::size_t>(max_class + 1);
    const int target_off = static_cast<int>(g.type_offset(g.target_type()));
    std::vector<std::vector<int>> labels(g.num_target());
    auto place = [&](const std::vector<RawLabel>& rows, const fs::path& p, std::vector<int>& into) {
        for (const RawLabel& r : rows) {
            auto it = remap.find(r.id);
            if (it == remap.end()) throw ParseError(p.string(), r.line, "unknown node " + std::to_string(r.id));
            const int local = it->second - target_off;
            labels[static_cast<std::size_t>(local)] = r.classes;
            into.push_back(local);
        }
    };
    std::vector<int> labeled, test;
    place(train_labels, label_path, labeled);
    place(test_labels, test_path, test);
    g.set_labels(std::move(labels), num_classes, multi ? LabelMode::multi : LabelMode::single);

    Rng rng(options.split_seed);
    rng.shuffle(labeled);
    const auto n_val = static_cast<std::size_t>(options.val_fraction * static_cast<double>(labeled.size()));
    Splits s;
    s.val.assign(labeled.begin(), labeled.begin() + static_cast<long>(n_val));
    s.train.assign(labeled.begin() + static_cast<long>(n_val), labeled.end());
    s.test = std::move(test);
    for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
    g.set_splits(std::move(s));
    try {
        g.validate();
    } catch (const SpecError& e) {
        throw ParseError(dir.string(), 0, e.what());
    }
    return g;
}

void write_hgb(const HeteroGraph& g, const fs::path& dir) {
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "node.dat");
        out.precision(17);
        for (int t = 0; t < static_cast<int>(g.num_types()); ++t) {
            const FeatureBlock& f = g.features(t);
            for (std::size_t k = 0; k < g.type_count(t); ++k) {
                out << g.type_offset(t) + k << "\tn" << g.type_offset(t) + k << '\t' << t;
                if (!f.one_hot) {
                    out << '\t';
                    const auto row = f.values.row(k);
                    for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << row[j];
                }
                out << '\n';
            }
        }
    }
    {
        std::ofstream out(dir / "link.dat");
        for (const Edge& e : g.edges()) out << e.src << '\t' << e.dst << '\t' << e.type << "\t1\n";
    }
    const std::size_t off = g.type_offset(g.target_type());
    auto write_labels = [&](const fs::path& p, std::vector<int> ids) {
        std::sort(ids.begin(), ids.end());
        std::ofstream out(p);
        for (int i : ids) {
            out << off + static_cast<std::size_t>(i) << "\tn" << off + static_cast<std::size_t>(i) << '\t' << g.target_type() << '\t';
            const auto& row = g.labels()[static_cast<std::size_t>(i)];
            for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "," : "") << row[j];
            out << '\n';
        }
    };
    std::vector<int> labeled = g.splits().train;
    labeled.insert(labeled.end(), g.splits().val.begin(), g.splits().val.end());
    write_labels(dir / "label.dat", labeled);
    write_labels(dir / "label.dat.test", g.splits().test);
}

void save_manifest(const HeteroGraph& g, const fs::path& file) {
    json j;
    j["format"] = "noisehgnn-graph";
    j["version"] = 1;
    j["target_type"] = g.target_type();
    j["feature_regime"] = g.feature_regime();
    j["label_mode"] = g.label_mode() == LabelMode::multi ? "multi" : "single";
    j["num_classes"] = g.num_classes();
    for (int t = 0; t < static_cast<int>(g.num_types()); ++t) {
        json nt;
        nt["name"] = g.type_names()[static_cast<std::size_t>(t)];
        nt["count"] = g.type_count(t);
        const FeatureBlock& f = g.features(t);
        if (f.one_hot) {
            nt["features"] = "one_hot";
        } else {
            nt["feature_dim"] = f.values.cols();
            nt["features"] = f.values.values();
        }
        j["node_types"].push_back(nt);
    }
    j["edge_types"] = json::array();
    for (const EdgeType& et : g.edge_types()) j["edge_types"].push_back({{"name", et.name}, {"src", et.src_type}, {"dst", et.dst_type}});
    j["edges"] = json::array();
    for (const Edge& e : g.edges()) j["edges"].push_back({e.src, e.dst, e.type});
    j["labels"] = g.labels();
    j["splits"] = {{"train", g.splits().train}, {"val", g.splits().val}, {"test", g.splits().test}};
    std::ofstream out(file);
    if (!out) throw ParseError(file.string(), 0, "cannot write manifest");
    out << j.dump(1) << '\n';
}

HeteroGraph load_manifest(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw ParseError(file.string(), 0, "cannot open file");
    json j;
    try {
        j = json::parse(in);
        std::vector<std::string> names;
        std::vector<std::size_t> counts;
        for (const auto& nt : j.at("node_types")) {
            names.push_back(nt.at("name").get<std::string>());
            counts.push_back(nt.at("count").get<std::size_t>());
        }
        HeteroGraph g(names, counts, j.at("target_type").get<int>());
        for (std::size_t t = 0; t < names.size(); ++t) {
            const auto& nt = j.at("node_types")[t];
            const auto& f = nt.at("features");
            if (f.is_string()) continue;
            const auto dim = nt.at("feature_dim").get<std::size_t>();
            g.set_features(static_cast<int>(t), FeatureBlock{Matrix(counts[t], dim, f.get<std::vector<double>>()), false});
        }
        for (const auto& et : j.at("edge_types")) {
            g.add_edge_type(et.at("src").get<int>(), et.at("dst").get<int>(), et.at("name").get<std::string>());
        }
        for (const auto& e : j.at("edges")) g.add_edge(e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<int>());
        g.set_labels(j.at("labels").get<std::vector<std::vector<int>>>(), j.at("num_classes").get<std::size_t>(),
                     j.at("label_mode").get<std::string>() == "multi" ? LabelMode::multi : LabelMode::single);
        Splits s;
        s.train = j.at("splits").at("train").get<std::vector<int>>();
        s.val = j.at("splits").at("val").get<std::vector<int>>();
        s.test = j.at("splits").at("test").get<std::vector<int>>();
        g.set_splits(std::move(s));
        g.set_feature_regime(j.value("feature_regime", 0));
        g.validate();
        return g;
    } catch (const json::exception& e) {
        throw ParseError(file.string(), 0, e.what());
    } catch (const SpecError& e) {
        throw ParseError(file.string(), 0, e.what());
    } catch (const DimensionError& e) {
        throw ParseError(file.string(), 0, e.what());
    }
}

}  // namespace noisehgnn::hetgraph
