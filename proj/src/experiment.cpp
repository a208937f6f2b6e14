#include "noisehgnn/experiment.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

namespace noisehgnn::experiment {

namespace fs = std::filesystem;
using numkernel::Matrix;
using training::Ablation;

// ---------------------------------------------------------------------------
// Config documents

namespace {

// Reads one JSON object, remembering which keys were consumed so leftovers can be
// reported as unknown.
class Reader {
   public:
    Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        if (!obj_.contains(key)) return;
        used_.insert(key);
        const json& v = obj_.at(key);
        const std::string where = field(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(where, "expected a boolean");
        } else if constexpr (std::is_unsigned_v<T>) {
            if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError(where, "expected a non-negative integer");
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError(where, "expected an integer");
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError(where, "expected a number");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError(where, "expected a string");
        } else if constexpr (!std::is_same_v<T, json>) {
            if (!v.is_array()) throw ConfigError(where, "expected an array");
            if constexpr (std::is_unsigned_v<typename T::value_type>) {
                for (std::size_t i = 0; i < v.size(); ++i) {
                    if (!v[i].is_number_integer() || v[i].get<std::int64_t>() < 0) {
                        throw ConfigError(where + "[" + std::to_string(i) + "]", "expected a non-negative integer");
                    }
                }
            }
        }
        try {
            out = v.get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where, "has the wrong type");
        }
    }

    bool has(const char* key) const { return obj_.contains(key); }

    Reader child(const char* key) {
        used_.insert(key);
        return Reader(obj_.at(key), field(key));
    }

    void finish() const {
        for (auto it = obj_.begin(); it != obj_.end(); ++it) {
            if (!used_.count(it.key())) throw ConfigError(field(it.key()), "unknown key");
        }
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

   private:
    const json& obj_;
    std::string path_;
    std::set<std::string> used_;
};

}  // namespace

std::string synthesizer_name(int eta) { return eta == 0 ? "mlp" : "gcn"; }

int synthesizer_eta(const std::string& name, int feature_regime) {
    if (name == "mlp") return 0;
    if (name == "gcn") return feature_regime == 2 ? 2 : 1;
    throw ConfigError("model.synthesizer", "must be mlp or gcn, got '" + name + "'");
}

void ExperimentConfig::validate() const {
    if (data.kind != "synthetic" && data.kind != "hgb" && data.kind != "manifest") {
        throw ConfigError("data.kind", "must be synthetic, hgb or manifest");
    }
    if (data.kind != "synthetic" && data.path.empty()) throw ConfigError("data.path", "required for " + data.kind + " data");
    if (!(data.val_fraction >= 0.0 && data.val_fraction < 1.0)) throw ConfigError("data.val_fraction", "must lie in [0, 1)");
    if (data.feature_regime < 0 || data.feature_regime > 2) throw ConfigError("data.feature_regime", "must be 0, 1 or 2");
    if (!(noise_ratio >= 0.0 && noise_ratio < 1.0)) throw ConfigError("noise.ratio", "must lie in [0, 1)");
    if (model.eta < 0 || model.eta > 2) throw ConfigError("model.synthesizer", "internal branch must be 0, 1 or 2");
    if (model.k < 1) throw ConfigError("model.k", "must be >= 1");
    if (model.dim < 1) throw ConfigError("model.dim", "must be >= 1");
    if (model.knn_batch != 0 && model.knn_batch < model.k + 1) throw ConfigError("model.knn_batch", "must be 0 or at least k + 1");
    if (model.encoder.layers < 1) throw ConfigError("model.encoder.layers", "must be >= 1");
    if (model.encoder.heads < 1) throw ConfigError("model.encoder.heads", "must be >= 1");
    if (model.encoder.hidden < 1) throw ConfigError("model.encoder.hidden_size", "must be >= 1");
    train.validate();
    if (seeds.empty()) throw ConfigError("seeds", "needs at least one seed");
    for (std::size_t i = 0; i < sweep_ratios.size(); ++i) {
        if (!(sweep_ratios[i] >= 0.0 && sweep_ratios[i] < 1.0)) {
            throw ConfigError("sweep.ratios[" + std::to_string(i) + "]", "must lie in [0, 1)");
        }
    }
    for (std::size_t i = 0; i < sweep_ablations.size(); ++i) {
        try {
            training::parse_ablation(sweep_ablations[i]);
        } catch (const ConfigError& e) {
            throw ConfigError("sweep.ablations[" + std::to_string(i) + "]", e.what());
        }
    }
}

json to_json(const ExperimentConfig& c) {
    const auto& s = c.data.synthetic;
    const auto& e = c.model.encoder;
    json doc;
    doc["name"] = c.name;
    doc["data"] = {{"kind", c.data.kind},
                   {"path", c.data.path},
                   {"val_fraction", c.data.val_fraction},
                   {"split_seed", c.data.split_seed},
                   {"feature_regime", c.data.feature_regime},
                   {"synthetic",
                    {{"n_target", s.n_target},
                     {"n_aux", s.n_aux},
                     {"classes", s.classes},
                     {"intra_class_link_prob", s.intra_class_link_prob},
                     {"inter_class_link_prob", s.inter_class_link_prob},
                     {"feature_dim", s.feature_dim},
                     {"feature_noise", s.feature_noise},
                     {"class_separation", s.class_separation},
                     {"train_fraction", s.train_fraction},
                     {"val_fraction", s.val_fraction},
                     {"seed", s.seed}}}};
    doc["noise"] = {{"ratio", c.noise_ratio}, {"seed", c.noise_seed ? json(*c.noise_seed) : json(nullptr)}};
    doc["model"] = {{"dim", c.model.dim},
                    {"k", c.model.k},
                    {"synthesizer", synthesizer_name(c.model.eta)},
                    {"knn_batch", c.model.knn_batch},
                    {"symmetric_knn", c.model.symmetric_knn},
                    {"separate_heads", c.model.separate_heads},
                    {"encoder",
                     {{"layers", e.layers},
                      {"heads", e.heads},
                      {"hidden_size", e.hidden},
                      {"residual", e.residual},
                      {"attention_residual", e.attention_residual},
                      {"slope", e.slope}}}};
    doc["train"] = {{"lr", c.train.lr},
                    {"weight_decay", c.train.weight_decay},
                    {"epochs", c.train.epochs},
                    {"patience", c.train.patience},
                    {"gamma", c.train.gamma},
                    {"p_A", c.train.p_a},
                    {"p_Atheta", c.train.p_atheta},
                    {"ablation", training::to_string(c.train.ablation)},
                    {"reduction", training::to_string(c.train.reduction)},
                    {"metapaths", c.train.metapaths}};
    doc["seeds"] = c.seeds;
    doc["sweep"] = {{"ratios", c.sweep_ratios}, {"ablations", c.sweep_ablations}};
    doc["homogeneity"] = {{"train", c.homogeneity_train}};
    doc["out_dir"] = c.out_dir;
    return doc;
}

ExperimentConfig config_from_json(const json& doc) {
    ExperimentConfig c;
    Reader root(doc, "");
    root.get("name", c.name);
    if (root.has("data")) {
        Reader d = root.child("data");
        d.get("kind", c.data.kind);
        d.get("path", c.data.path);
        d.get("val_fraction", c.data.val_fraction);
        d.get("split_seed", c.data.split_seed);
        d.get("feature_regime", c.data.feature_regime);
        if (d.has("synthetic")) {
            auto& s = c.data.synthetic;
            Reader r = d.child("synthetic");
            r.get("n_target", s.n_target);
            r.get("n_aux", s.n_aux);
            r.get("classes", s.classes);
            r.get("intra_class_link_prob", s.intra_class_link_prob);
            r.get("inter_class_link_prob", s.inter_class_link_prob);
            r.get("feature_dim", s.feature_dim);
            r.get("feature_noise", s.feature_noise);
            r.get("class_separation", s.class_separation);
            r.get("train_fraction", s.train_fraction);
            r.get("val_fraction", s.val_fraction);
            r.get("seed", s.seed);
            r.finish();
        }
        d.finish();
    }
    if (root.has("noise")) {
        Reader n = root.child("noise");
        n.get("ratio", c.noise_ratio);
        if (n.has("seed")) {
            json v;
            n.get("seed", v);
            if (!v.is_null()) {
                if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
                    throw ConfigError("noise.seed", "expected a non-negative integer or null");
                }
                c.noise_seed = v.get<std::uint64_t>();
            }
        }
        n.finish();
    }
    if (root.has("model")) {
        Reader m = root.child("model");
        m.get("dim", c.model.dim);
        m.get("k", c.model.k);
        if (m.has("synthesizer")) {
            std::string name;
            m.get("synthesizer", name);
            c.model.eta = synthesizer_eta(name, c.data.feature_regime);
        }
        m.get("knn_batch", c.model.knn_batch);
        m.get("symmetric_knn", c.model.symmetric_knn);
        m.get("separate_heads", c.model.separate_heads);
        if (m.has("encoder")) {
            auto& e = c.model.encoder;
            Reader r = m.child("encoder");
            r.get("layers", e.layers);
            r.get("heads", e.heads);
            r.get("hidden_size", e.hidden);
            r.get("residual", e.residual);
            r.get("attention_residual", e.attention_residual);
            r.get("slope", e.slope);
            r.finish();
        }
        m.finish();
    }
    if (root.has("train")) {
        Reader t = root.child("train");
        t.get("lr", c.train.lr);
        t.get("weight_decay", c.train.weight_decay);
        t.get("epochs", c.train.epochs);
        t.get("patience", c.train.patience);
        t.get("gamma", c.train.gamma);
        t.get("p_A", c.train.p_a);
        t.get("p_Atheta", c.train.p_atheta);
        std::string text;
        if (t.has("ablation")) {
            t.get("ablation", text);
            c.train.ablation = training::parse_ablation(text);
        }
        if (t.has("reduction")) {
            t.get("reduction", text);
            c.train.reduction = training::parse_reduction(text);
        }
        t.get("metapaths", c.train.metapaths);
        t.finish();
    }
    root.get("seeds", c.seeds);
    if (root.has("sweep")) {
        Reader s = root.child("sweep");
        s.get("ratios", c.sweep_ratios);
        s.get("ablations", c.sweep_ablations);
        s.finish();
    }
    if (root.has("homogeneity")) {
        Reader h = root.child("homogeneity");
        h.get("train", c.homogeneity_train);
        h.finish();
    }
    root.get("out_dir", c.out_dir);
    root.finish();
    c.validate();
    return c;
}

ExperimentConfig load_config(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("--config", "cannot open " + file.string());
    json doc;
    try {
        doc = json::parse(in, nullptr, true, true);
    } catch (const json::exception& e) {
        throw ConfigError("--config", file.string() + ": " + e.what());
    }
    return config_from_json(doc);
}

// ---------------------------------------------------------------------------
// Runs

hetgraph::HeteroGraph load_dataset(const ExperimentConfig& cfg) {
    hetgraph::HeteroGraph g;
    if (cfg.data.kind == "synthetic") {
        g = hetgraph::generate_synthetic(cfg.data.synthetic);
    } else if (cfg.data.kind == "hgb") {
        g = hetgraph::load_hgb(cfg.data.path, {cfg.data.val_fraction, cfg.data.split_seed});
    } else {
        g = hetgraph::load_manifest(cfg.data.path);
    }
    g = hetgraph::apply_feature_regime(g, cfg.data.feature_regime);
    g.validate();
    return g;
}

training::Seeds run_seeds(const ExperimentConfig& cfg, std::uint64_t run_seed) {
    training::Seeds s = training::Seeds::from_run(run_seed);
    if (cfg.noise_seed) s.noise = *cfg.noise_seed;
    return s;
}

RunRecord run_arm(const noise::NoiseResult& corrupted, const ExperimentConfig& cfg, Ablation ablation, std::uint64_t run_seed,
                  double ratio) {
    const auto t0 = std::chrono::steady_clock::now();
    RunRecord rec;
    rec.run_seed = run_seed;
    rec.seeds = run_seeds(cfg, run_seed);
    rec.ablation = ablation;
    rec.noise_ratio = ratio;
    rec.rewired = corrupted.rewired.size();
    rec.shortfall = corrupted.shortfall;

    training::TrainConfig tc = cfg.train;
    tc.ablation = ablation;
    const auto& g = corrupted.graph;
    const auto ctx = training::TrainingContext::build(g, cfg.model, tc);
    training::Model model = training::Model::init(g, cfg.model, rec.seeds.init);
    rec.result = training::train(ctx, model, tc, rec.seeds.mask);
    rec.test = training::evaluate_model(ctx, model, g.splits().test);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

Summary summarize(const std::vector<double>& values) {
    Summary s;
    s.n = values.size();
    if (values.empty()) return s;
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(s.n);
    if (s.n >= 2) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(s.n - 1));
    }
    return s;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

json summary_json(const Summary& s) {
    return {{"n", s.n}, {"mean", s.mean}, {"std", s.stddev ? json(*s.stddev) : json(nullptr)}};
}

std::string fixed(double v, int digits = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

std::string mean_std(const Summary& s) {
    return fixed(s.mean) + (s.stddev ? " +- " + fixed(*s.stddev) : std::string(" (n<2)"));
}

json metrics_json(const training::Metrics& m) {
    json per = json::array();
    for (const auto& c : m.per_class) {
        per.push_back({{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}, {"absent", c.absent}});
    }
    return {{"macro_f1", m.macro_f1}, {"micro_f1", m.micro_f1}, {"per_class", per}};
}

json run_json(const RunRecord& r) {
    json hist = json::array();
    for (const auto& h : r.result.history) {
        hist.push_back({{"epoch", h.epoch},
                        {"l_o", h.l_o},
                        {"l_s", h.l_s},
                        {"l_g", h.l_g},
                        {"total", h.total},
                        {"val_macro_f1", h.val_macro_f1},
                        {"val_micro_f1", h.val_micro_f1}});
    }
    return {{"run_seed", r.run_seed},
            {"seeds", {{"noise", r.seeds.noise}, {"mask", r.seeds.mask}, {"init", r.seeds.init}}},
            {"ablation", training::to_string(r.ablation)},
            {"noise_ratio", r.noise_ratio},
            {"rewired", r.rewired},
            {"shortfall", r.shortfall},
            {"best_epoch", r.result.best_epoch},
            {"best_val_macro_f1", r.result.best_val_macro_f1},
            {"stopped_early", r.result.stopped_early},
            {"test", metrics_json(r.test)},
            {"history", hist}};
}

std::string render_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> w(header.size());
    for (std::size_t c = 0; c < header.size(); ++c) w[c] = header[c].size();
    for (const auto& r : rows)
        for (std::size_t c = 0; c < r.size(); ++c) w[c] = std::max(w[c], r[c].size());
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t c = 0; c < cells.size(); ++c) os << (c ? "  " : "") << std::left << std::setw(static_cast<int>(w[c])) << cells[c];
        os << '\n';
    };
    line(header);
    std::vector<std::string> rule;
    for (std::size_t c = 0; c < w.size(); ++c) rule.push_back(std::string(w[c], '-'));
    line(rule);
    for (const auto& r : rows) line(r);
    return os.str();
}

void write_text(const fs::path& file, const std::string& text) {
    std::ofstream out(file);
    if (!out) throw Error("cannot write " + file.string());
    out << text;
}

void write_json(const fs::path& file, const json& doc) { write_text(file, doc.dump(2) + "\n"); }

void write_loss_csv(const fs::path& file, const std::vector<RunRecord>& runs) {
    std::ostringstream os;
    os << "run_seed,ablation,noise_ratio,epoch,l_o,l_s,l_g,total,val_macro_f1,val_micro_f1\n";
    os << std::setprecision(17);
    for (const auto& r : runs) {
        for (const auto& h : r.result.history) {
            os << r.run_seed << ',' << training::to_string(r.ablation) << ',' << r.noise_ratio << ',' << h.epoch << ',' << h.l_o << ','
               << h.l_s << ',' << h.l_g << ',' << h.total << ',' << h.val_macro_f1 << ',' << h.val_micro_f1 << '\n';
        }
    }
    write_text(file, os.str());
}

fs::path prepare_out(const ExperimentConfig& cfg) {
    fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    return dir;
}

double elapsed(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json timing_json(const std::vector<RunRecord>& runs, double wall) {
    json per = json::array();
    for (const auto& r : runs) per.push_back(r.seconds);
    return {{"wall_seconds", wall}, {"run_seconds", per}};
}

std::vector<double> pick(const std::vector<RunRecord>& runs, double training::Metrics::*field) {
    std::vector<double> out;
    for (const auto& r : runs) out.push_back(r.test.*field);
    return out;
}

}  // namespace

json cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = prepare_out(cfg);
    const auto clean = load_dataset(cfg);
    std::vector<RunRecord> runs;
    for (std::uint64_t seed : cfg.seeds) {
        const auto corrupted = noise::inject_error_links(clean, {cfg.noise_ratio, run_seeds(cfg, seed).noise});
        runs.push_back(run_arm(corrupted, cfg, cfg.train.ablation, seed, cfg.noise_ratio));
        log << "seed " << seed << ": test macro-F1 " << fixed(runs.back().test.macro_f1) << ", micro-F1 "
            << fixed(runs.back().test.micro_f1) << " (best epoch " << runs.back().result.best_epoch << ")\n";
    }

    json runs_doc = json::array();
    for (const auto& r : runs) runs_doc.push_back(run_json(r));
    const Summary macro = summarize(pick(runs, &training::Metrics::macro_f1));
    const Summary micro = summarize(pick(runs, &training::Metrics::micro_f1));
    json report = {{"command", "train"},
                   {"config", to_json(cfg)},
                   {"runs", runs_doc},
                   {"metrics", {{"macro_f1", summary_json(macro)}, {"micro_f1", summary_json(micro)}}},
                   {"timing", timing_json(runs, elapsed(t0))}};

    const std::string table = render_table({"ablation", "noise", "seeds", "macro-F1", "micro-F1"},
                                           {{training::to_string(cfg.train.ablation), fixed(cfg.noise_ratio, 2),
                                             std::to_string(runs.size()), mean_std(macro), mean_std(micro)}});
    log << table;
    write_json(dir / "train_report.json", report);
    write_loss_csv(dir / "train_losses.csv", runs);
    write_text(dir / "train_table.txt", table);
    return report;
}

json cmd_sweep(const ExperimentConfig& cfg, std::ostream& log) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = prepare_out(cfg);
    const auto clean = load_dataset(cfg);
    std::vector<Ablation> arms;
    for (const auto& a : cfg.sweep_ablations) arms.push_back(training::parse_ablation(a));

    std::vector<RunRecord> runs;
    json rows = json::array();
    std::vector<std::vector<std::string>> table_rows;
    std::ostringstream csv;
    csv << "noise_ratio,ablation,n,macro_f1_mean,macro_f1_std,micro_f1_mean,micro_f1_std\n" << std::setprecision(17);
    // cell[ratio][arm] holds the runs of that cell; the corrupted graph is shared by all arms of a seed.
    std::vector<std::vector<std::vector<RunRecord>>> cells(cfg.sweep_ratios.size(), std::vector<std::vector<RunRecord>>(arms.size()));
    for (std::size_t ri = 0; ri < cfg.sweep_ratios.size(); ++ri) {
        const double ratio = cfg.sweep_ratios[ri];
        for (std::uint64_t seed : cfg.seeds) {
            const auto corrupted = noise::inject_error_links(clean, {ratio, run_seeds(cfg, seed).noise});
            for (std::size_t ai = 0; ai < arms.size(); ++ai) {
                cells[ri][ai].push_back(run_arm(corrupted, cfg, arms[ai], seed, ratio));
                log << "ratio " << fixed(ratio, 2) << " seed " << seed << " " << training::to_string(arms[ai]) << ": macro-F1 "
                    << fixed(cells[ri][ai].back().test.macro_f1) << '\n';
            }
        }
        for (std::size_t ai = 0; ai < arms.size(); ++ai) {
            const auto& cell = cells[ri][ai];
            runs.insert(runs.end(), cell.begin(), cell.end());
            const Summary macro = summarize(pick(cell, &training::Metrics::macro_f1));
            const Summary micro = summarize(pick(cell, &training::Metrics::micro_f1));
            rows.push_back({{"noise_ratio", ratio},
                            {"ablation", training::to_string(arms[ai])},
                            {"macro_f1", summary_json(macro)},
                            {"micro_f1", summary_json(micro)}});
            table_rows.push_back({fixed(ratio, 2), training::to_string(arms[ai]), mean_std(macro), mean_std(micro)});
            csv << ratio << ',' << training::to_string(arms[ai]) << ',' << macro.n << ',' << macro.mean << ','
                << (macro.stddev ? std::to_string(*macro.stddev) : "") << ',' << micro.mean << ','
                << (micro.stddev ? std::to_string(*micro.stddev) : "") << '\n';
        }
    }

    // Degradation: mean macro-F1 at the first ratio minus the mean at the last ratio.
    json degradation = json::object();
    if (!cfg.sweep_ratios.empty()) {
        for (std::size_t ai = 0; ai < arms.size(); ++ai) {
            const double first = summarize(pick(cells.front()[ai], &training::Metrics::macro_f1)).mean;
            const double last = summarize(pick(cells.back()[ai], &training::Metrics::macro_f1)).mean;
            degradation[training::to_string(arms[ai])] = first - last;
        }
    }

    json runs_doc = json::array();
    for (const auto& r : runs) runs_doc.push_back(run_json(r));
    json report = {{"command", "sweep"},
                   {"config", to_json(cfg)},
                   {"runs", runs_doc},
                   {"metrics", {{"rows", rows}, {"macro_f1_degradation", degradation}}},
                   {"timing", timing_json(runs, elapsed(t0))}};
    const std::string table = render_table({"noise", "ablation", "macro-F1", "micro-F1"}, table_rows);
    log << table;
    write_json(dir / "sweep_report.json", report);
    write_text(dir / "sweep.csv", csv.str());
    write_loss_csv(dir / "sweep_losses.csv", runs);
    write_text(dir / "sweep_table.txt", table);
    return report;
}

json cmd_ablate(const ExperimentConfig& cfg, std::ostream& log) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = prepare_out(cfg);
    const auto clean = load_dataset(cfg);
    const std::vector<Ablation> arms = {Ablation::full, Ablation::no_synthesizer, Ablation::no_meta_target};

    std::vector<std::vector<RunRecord>> by_arm(arms.size());
    for (std::uint64_t seed : cfg.seeds) {
        const auto corrupted = noise::inject_error_links(clean, {cfg.noise_ratio, run_seeds(cfg, seed).noise});
        for (std::size_t ai = 0; ai < arms.size(); ++ai) {
            by_arm[ai].push_back(run_arm(corrupted, cfg, arms[ai], seed, cfg.noise_ratio));
            log << "seed " << seed << " " << training::to_string(arms[ai]) << ": macro-F1 " << fixed(by_arm[ai].back().test.macro_f1) << '\n';
        }
    }

    json rows = json::array();
    std::vector<std::vector<std::string>> table_rows;
    std::vector<RunRecord> runs;
    const auto full_macro = pick(by_arm[0], &training::Metrics::macro_f1);
    for (std::size_t ai = 0; ai < arms.size(); ++ai) {
        runs.insert(runs.end(), by_arm[ai].begin(), by_arm[ai].end());
        const auto macro_values = pick(by_arm[ai], &training::Metrics::macro_f1);
        const Summary macro = summarize(macro_values);
        const Summary micro = summarize(pick(by_arm[ai], &training::Metrics::micro_f1));
        std::vector<double> deltas;
        for (std::size_t s = 0; s < macro_values.size(); ++s) deltas.push_back(full_macro[s] - macro_values[s]);
        const Summary delta = summarize(deltas);
        rows.push_back({{"ablation", training::to_string(arms[ai])},
                        {"macro_f1", summary_json(macro)},
                        {"micro_f1", summary_json(micro)},
                        {"paired_delta_macro_f1", summary_json(delta)}});
        table_rows.push_back({training::to_string(arms[ai]), mean_std(macro), mean_std(micro), ai ? mean_std(delta) : "-"});
    }
    json runs_doc = json::array();
    for (const auto& r : runs) runs_doc.push_back(run_json(r));
    json report = {{"command", "ablate"},
                   {"config", to_json(cfg)},
                   {"runs", runs_doc},
                   {"metrics", {{"rows", rows}}},
                   {"timing", timing_json(runs, elapsed(t0))}};
    const std::string table = render_table({"ablation", "macro-F1", "micro-F1", "full minus arm (macro)"}, table_rows);
    log << table;
    write_json(dir / "ablate_report.json", report);
    write_loss_csv(dir / "ablate_losses.csv", runs);
    write_text(dir / "ablate_table.txt", table);
    return report;
}

json cmd_homogeneity(const ExperimentConfig& cfg, std::ostream& log) {
    cfg.validate();
    if (cfg.train.metapaths.empty()) throw ConfigError("train.metapaths", "homogeneity needs at least one metapath");
    const fs::path dir = prepare_out(cfg);
    const auto clean = load_dataset(cfg);
    const std::uint64_t seed = cfg.seeds.front();
    const training::Seeds seeds = run_seeds(cfg, seed);
    const auto corrupted = noise::inject_error_links(clean, {cfg.noise_ratio, seeds.noise});
    const auto& g = corrupted.graph;

    // Only labeled target nodes take part.
    const auto keys = hetgraph::label_keys(g);
    std::vector<int> labeled, key_sub;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (keys[i] < 0) continue;
        labeled.push_back(static_cast<int>(i));
        key_sub.push_back(keys[i]);
    }
    auto restrict = [&](const Matrix& a) {
        Matrix out(labeled.size(), labeled.size());
        for (std::size_t i = 0; i < labeled.size(); ++i)
            for (std::size_t j = 0; j < labeled.size(); ++j) out(i, j) = a(labeled[i], labeled[j]);
        return out;
    };

    json rows = json::array();
    std::vector<std::vector<std::string>> table_rows;
    auto add_row = [&](const std::string& name, const Matrix& adj) {
        const auto r = hetgraph::homogeneity_score(restrict(adj), key_sub);
        rows.push_back({{"graph", name}, {"beta", r.beta}, {"counted", r.counted}, {"isolated", r.isolated}});
        table_rows.push_back({name, fixed(r.beta), std::to_string(r.counted), std::to_string(r.isolated)});
    };
    for (const auto& text : cfg.train.metapaths) {
        const auto spec = hetgraph::MetapathSpec::parse(text, g);
        add_row("metapath " + spec.to_string(), hetgraph::metapath_graph(g, spec));
    }

    training::TrainConfig tc = cfg.train;
    tc.ablation = Ablation::full;
    const auto ctx = training::TrainingContext::build(g, cfg.model, tc);
    training::Model model = training::Model::init(g, cfg.model, seeds.init);
    if (cfg.homogeneity_train) training::train(ctx, model, tc, seeds.mask);
    add_row(cfg.homogeneity_train ? "target graph (trained)" : "target graph (initial)", training::target_graph(ctx, model));

    json report = {{"command", "homogeneity"},
                   {"config", to_json(cfg)},
                   {"run_seed", seed},
                   {"labeled_targets", labeled.size()},
                   {"metrics", {{"rows", rows}}}};
    const std::string table = render_table({"graph", "beta", "counted", "isolated"}, table_rows);
    log << table;
    write_json(dir / "homogeneity_report.json", report);
    write_text(dir / "homogeneity_table.txt", table);
    return report;
}

void cmd_gen_synthetic(const ExperimentConfig& cfg, const fs::path& out, std::ostream& log) {
    const auto g = hetgraph::generate_synthetic(cfg.data.synthetic);
    if (out.extension() == ".json") {
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        hetgraph::save_manifest(g, out);
    } else {
        hetgraph::write_hgb(g, out);
    }
    log << "wrote " << g.num_nodes() << " nodes, " << g.edges().size() << " edges to " << out.string() << '\n';
}

json cmd_validate_data(const ExperimentConfig& cfg, std::ostream& log) {
    const auto g = load_dataset(cfg);
    json types = json::array();
    for (std::size_t t = 0; t < g.num_types(); ++t) {
        const int ti = static_cast<int>(t);
        types.push_back({{"name", g.type_names()[t]}, {"count", g.type_count(ti)}, {"feature_dim", g.feature_dim(ti)},
                         {"one_hot", g.features(ti).one_hot}});
    }
    json metapaths = json::array();
    for (const auto& text : cfg.train.metapaths) {
        const auto spec = hetgraph::MetapathSpec::parse(text, g);
        hetgraph::validate_metapath(g, spec);
        metapaths.push_back(spec.to_string());
    }
    json doc = {{"nodes", g.num_nodes()},
                {"edges", g.edges().size()},
                {"edge_types", g.edge_types().size()},
                {"types", types},
                {"target_type", g.type_names()[static_cast<std::size_t>(g.target_type())]},
                {"classes", g.num_classes()},
                {"label_mode", g.label_mode() == hetgraph::LabelMode::single ? "single" : "multi"},
                {"splits", {{"train", g.splits().train.size()}, {"val", g.splits().val.size()}, {"test", g.splits().test.size()}}},
                {"metapaths", metapaths}};
    log << doc.dump(2) << '\n';
    return doc;
}

}  // namespace noisehgnn::experiment
