#include "noisehgnn/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <utility>

#include <json.hpp>

namespace noisehgnn::training {

namespace nk = numkernel;

std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::no_synthesizer: return "no_synthesizer";
        case Ablation::no_meta_target: return "no_meta_target";
    }
    return "full";
}

Ablation parse_ablation(const std::string& text) {
    if (text == "full") return Ablation::full;
    if (text == "no_synthesizer") return Ablation::no_synthesizer;
    if (text == "no_meta_target") return Ablation::no_meta_target;
    throw ConfigError("train.ablation", "unknown ablation '" + text + "' (full, no_synthesizer, no_meta_target)");
}

std::string to_string(CosineReduction r) { return r == CosineReduction::row ? "row" : "frobenius"; }

CosineReduction parse_reduction(const std::string& text) {
    if (text == "row") return CosineReduction::row;
    if (text == "frobenius") return CosineReduction::frobenius;
    throw ConfigError("train.reduction", "unknown reduction '" + text + "' (row, frobenius)");
}

Seeds Seeds::from_run(std::uint64_t run_seed) { return {mix_seed(run_seed, 1), mix_seed(run_seed, 2), mix_seed(run_seed, 3)}; }

void TrainConfig::validate() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr", "must be a finite value >= 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay", "must be >= 0");
    if (epochs < 1) throw ConfigError("train.epochs", "must be >= 1");
    if (patience > epochs) throw ConfigError("train.patience", "must not exceed train.epochs");
    if (!(gamma >= 1.0) || !std::isfinite(gamma)) throw ConfigError("train.gamma", "must be >= 1");
    if (!(p_a >= 0.0 && p_a < 1.0)) throw ConfigError("train.p_A", "must lie in [0, 1)");
    if (!(p_atheta >= 0.0 && p_atheta < 1.0)) throw ConfigError("train.p_Atheta", "must lie in [0, 1)");
    if (ablation == Ablation::full && metapaths.empty()) {
        throw ConfigError("train.metapaths", "the full model needs at least one metapath");
    }
}

namespace {

ClassifierParams init_head(const std::string& prefix, std::size_t in, std::size_t classes, Rng& rng) {
    return {Parameter(prefix + ".W", nk::glorot_uniform(in, classes, rng)), Parameter(prefix + ".b", Matrix(1, classes))};
}

}  // namespace

Model Model::init(const HeteroGraph& g, const ModelConfig& cfg, std::uint64_t init_seed) {
    if (g.num_classes() == 0) throw ContractError("Model::init: graph has no classes");
    Rng rng(init_seed);
    Model m;
    m.config = cfg;
    m.synthesizer = synth::SynthesizerParams::init(g, cfg.dim, cfg.k, cfg.eta, rng);
    m.encoder = encoder::EncoderParams::init(cfg.dim, cfg.encoder, rng);
    m.head = init_head("head", m.encoder.output_dim(), g.num_classes(), rng);
    if (cfg.separate_heads) m.head_theta = init_head("head_theta", m.encoder.output_dim(), g.num_classes(), rng);
    return m;
}

std::vector<Parameter*> Model::parameters() {
    std::vector<Parameter*> out = synthesizer.parameters();
    for (Parameter* p : encoder.parameters()) out.push_back(p);
    out.push_back(&head.weight);
    out.push_back(&head.bias);
    if (config.separate_heads) {
        out.push_back(&head_theta.weight);
        out.push_back(&head_theta.bias);
    }
    return out;
}

std::vector<Parameter*> Model::trainable(Ablation ablation) {
    if (ablation != Ablation::no_synthesizer) return parameters();
    std::vector<Parameter*> out;
    for (auto& p : synthesizer.type_weight) out.push_back(&p);
    for (auto& p : synthesizer.type_bias) out.push_back(&p);
    for (Parameter* p : encoder.parameters()) out.push_back(p);
    out.push_back(&head.weight);
    out.push_back(&head.bias);
    return out;
}

Tensor predict(const Tensor& h_target, ClassifierParams& head, LabelMode mode) {
    Tape& tape = h_target.tape();
    Tensor logits = nk::add_row(nk::matmul(h_target, tape.param(head.weight)), tape.param(head.bias));
    return mode == LabelMode::single ? nk::softmax_rows(logits) : nk::sigmoid(logits);
}

Predictions predict_heads(const Tensor& h_target, const Tensor& h_theta_target, ClassifierParams& head,
                          ClassifierParams& head_theta, LabelMode mode) {
    ClassifierParams& second = head_theta.weight.value.empty() ? head : head_theta;
    return {predict(h_target, head, mode), predict(h_theta_target, second, mode)};
}

Tensor classification_loss(const Tensor& pred, const std::vector<std::vector<int>>& labels, std::span<const int> split,
                           LabelMode mode) {
    if (split.empty()) throw ContractError("classification_loss: empty split");
    Tape& tape = pred.tape();
    const std::size_t c = pred.cols();
    Matrix y(split.size(), c);
    for (std::size_t r = 0; r < split.size(); ++r) {
        const auto& lab = labels.at(static_cast<std::size_t>(split[r]));
        if (lab.empty()) throw ContractError("classification_loss: node " + std::to_string(split[r]) + " has no label");
        if (mode == LabelMode::single) {
            y(r, static_cast<std::size_t>(lab.front())) = 1.0;
        } else {
            for (int k : lab) y(r, static_cast<std::size_t>(k)) = 1.0;
        }
    }
    Tensor p = nk::clamp(nk::gather_rows(pred, split), kProbClamp, 1.0 - kProbClamp);
    Tensor yt = tape.constant(y);
    const double n = static_cast<double>(split.size());
    if (mode == LabelMode::single) return nk::scale(nk::sum(nk::mul(yt, nk::log(p))), -1.0 / n);
    Tensor one_minus_y = tape.constant([&] {
        Matrix m = y;
        for (std::size_t i = 0; i < m.size(); ++i) m[i] = 1.0 - m[i];
        return m;
    }());
    Tensor log_q = nk::log(nk::add_scalar(nk::scale(p, -1.0), 1.0));
    Tensor ll = nk::add(nk::mul(yt, nk::log(p)), nk::mul(one_minus_y, log_q));
    return nk::scale(nk::sum(ll), -1.0 / (n * static_cast<double>(c)));
}

Tensor contrastive_loss(const Tensor& a_phi, const Tensor& a_hat_theta, double gamma, CosineReduction reduction) {
    if (!a_phi.value().same_shape(a_hat_theta.value())) {
        throw DimensionError("contrastive_loss: " + a_phi.value().shape_string() + " vs " + a_hat_theta.value().shape_string());
    }
    if (!(gamma >= 1.0)) throw DomainError("contrastive_loss: gamma must be >= 1");
    Tape& tape = a_phi.tape();
    const Matrix& x = a_phi.value();
    const Matrix& y = a_hat_theta.value();
    auto sharpen = [gamma](const Tensor& cos) {
        Tensor d = nk::clamp(nk::add_scalar(nk::scale(cos, -1.0), 1.0), 0.0, 2.0);
        return gamma == 1.0 ? d : nk::power(d, gamma);
    };

    if (reduction == CosineReduction::frobenius) {
        bool x_zero = true, y_zero = true;
        for (std::size_t i = 0; i < x.size(); ++i) {
            x_zero = x_zero && x[i] == 0.0;
            y_zero = y_zero && y[i] == 0.0;
        }
        if (x_zero && y_zero) return tape.constant(Matrix(1, 1));
        if (x_zero || y_zero) return tape.constant(Matrix(1, 1, 1.0));
        Tensor dot = nk::sum(nk::mul(a_phi, a_hat_theta));
        Tensor nn = nk::mul(nk::sum(nk::mul(a_phi, a_phi)), nk::sum(nk::mul(a_hat_theta, a_hat_theta)));
        return sharpen(nk::mul(dot, nk::power(nn, -0.5)));
    }

    const std::size_t n = x.rows();
    if (n == 0) throw DimensionError("contrastive_loss: empty matrices");
    Matrix live(n, 1, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto rx = x.row(i), ry = y.row(i);
        const bool zx = std::all_of(rx.begin(), rx.end(), [](double v) { return v == 0.0; });
        const bool zy = std::all_of(ry.begin(), ry.end(), [](double v) { return v == 0.0; });
        if (zx && zy) live[i] = 0.0;
    }
    Tensor cos = nk::row_sum(nk::mul(nk::row_normalize(a_phi, synth::kNormEps), nk::row_normalize(a_hat_theta, synth::kNormEps)));
    Tensor terms = nk::mul(sharpen(cos), tape.constant(std::move(live)));
    return nk::scale(nk::sum(terms), 1.0 / static_cast<double>(n));
}

Tensor total_loss(const Tensor& l_o, const Tensor& l_s, const Tensor& l_g, Ablation ablation, int epoch) {
    auto finite = [epoch](const Tensor& t, const char* name) {
        if (!std::isfinite(t.value()[0])) throw DivergenceError(epoch, name);
    };
    finite(l_o, "L_o");
    if (ablation == Ablation::no_synthesizer) return l_o;
    finite(l_s, "L_s");
    Tensor total = nk::add(l_o, l_s);
    if (ablation == Ablation::no_meta_target) return total;
    finite(l_g, "L_g");
    return nk::add(total, l_g);
}

std::vector<std::vector<int>> decide(const Matrix& probs, LabelMode mode) {
    std::vector<std::vector<int>> out(probs.rows());
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        const auto r = probs.row(i);
        if (mode == LabelMode::single) {
            out[i].push_back(static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin()));
        } else {
            for (std::size_t c = 0; c < r.size(); ++c)
                if (r[c] >= 0.5) out[i].push_back(static_cast<int>(c));
        }
    }
    return out;
}

Metrics evaluate(const Matrix& probs, const std::vector<std::vector<int>>& labels, std::span<const int> split,
                 std::size_t num_classes, LabelMode mode) {
    if (split.empty()) throw ContractError("evaluate: empty split");
    if (probs.cols() != num_classes) throw DimensionError("evaluate: probability columns do not match class count");
    const auto decided = decide(probs, mode);
    std::vector<std::size_t> tp(num_classes), fp(num_classes), fn(num_classes);
    for (int node : split) {
        const auto i = static_cast<std::size_t>(node);
        std::vector<char> truth(num_classes, 0), guess(num_classes, 0);
        const auto& lab = labels.at(i);
        if (mode == LabelMode::single) {
            if (!lab.empty()) truth[static_cast<std::size_t>(lab.front())] = 1;
        } else {
            for (int c : lab) truth[static_cast<std::size_t>(c)] = 1;
        }
        for (int c : decided.at(i)) guess[static_cast<std::size_t>(c)] = 1;
        for (std::size_t c = 0; c < num_classes; ++c) {
            tp[c] += truth[c] && guess[c];
            fp[c] += !truth[c] && guess[c];
            fn[c] += truth[c] && !guess[c];
        }
    }
    auto f1 = [](double t, double p, double n) { return t == 0.0 ? 0.0 : 2.0 * t / (2.0 * t + p + n); };
    Metrics m;
    std::size_t stp = 0, sfp = 0, sfn = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        ClassScore s;
        s.support = tp[c] + fn[c];
        s.absent = tp[c] + fp[c] + fn[c] == 0;
        s.precision = tp[c] + fp[c] ? static_cast<double>(tp[c]) / static_cast<double>(tp[c] + fp[c]) : 0.0;
        s.recall = s.support ? static_cast<double>(tp[c]) / static_cast<double>(s.support) : 0.0;
        s.f1 = f1(static_cast<double>(tp[c]), static_cast<double>(fp[c]), static_cast<double>(fn[c]));
        m.macro_f1 += s.f1;
        m.per_class.push_back(s);
        stp += tp[c];
        sfp += fp[c];
        sfn += fn[c];
    }
    m.macro_f1 /= static_cast<double>(num_classes);
    m.micro_f1 = f1(static_cast<double>(stp), static_cast<double>(sfp), static_cast<double>(sfn));
    return m;
}

namespace {

encoder::EdgeList symmetric_edges(const HeteroGraph& g) {
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(2 * g.edges().size());
    for (const auto& e : g.edges()) {
        pairs.emplace_back(e.src, e.dst);
        pairs.emplace_back(e.dst, e.src);
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
    encoder::EdgeList out;
    out.n = g.num_nodes();
    for (const auto& [r, c] : pairs) {
        out.rows.push_back(r);
        out.cols.push_back(c);
        out.values.push_back(1.0);
    }
    return out;
}

synth::KnnOptions knn_options(const Model& model, std::uint64_t seed) {
    return {model.config.knn_batch, seed, model.config.symmetric_knn};
}

// Target block of a synthesized selection as an n_target x n_target tensor.
Tensor target_block(const TrainingContext& ctx, const synth::KnnSelection& sel, const Tensor& weights) {
    const HeteroGraph& g = *ctx.graph;
    const int off = static_cast<int>(g.type_offset(g.target_type()));
    const int nt = static_cast<int>(g.num_target());
    std::vector<int> take, rows, cols;
    for (std::size_t e = 0; e < sel.size(); ++e) {
        const int r = sel.rows[e] - off, c = sel.cols[e] - off;
        if (r < 0 || r >= nt || c < 0 || c >= nt) continue;
        take.push_back(static_cast<int>(e));
        rows.push_back(r);
        cols.push_back(c);
    }
    Tape& tape = weights.tape();
    if (take.empty()) return tape.constant(Matrix(g.num_target(), g.num_target()));
    return nk::scatter_entries(nk::gather_rows(weights, take), rows, cols, g.num_target(), g.num_target());
}

}  // namespace

TrainingContext TrainingContext::build(const HeteroGraph& g, const ModelConfig& model, const TrainConfig& cfg) {
    TrainingContext ctx;
    ctx.graph = &g;
    ctx.adjacency = symmetric_edges(g);
    if (model.eta != 0) ctx.propagation = synth::gcn_propagation(g.num_nodes(), ctx.adjacency.rows, ctx.adjacency.cols);
    for (const auto& text : cfg.metapaths) {
        ctx.a_phi.push_back(hetgraph::metapath_graph(g, hetgraph::MetapathSpec::parse(text, g)));
    }
    ctx.target_ids = g.target_ids();
    return ctx;
}

namespace {

// Overflowing activations turn into NaN probabilities, which the losses would reject
// as a domain error rather than as divergence.
const Tensor& finite_or_diverge(const Tensor& t, std::size_t epoch, const char* name) {
    for (double v : t.value().values()) {
        if (!std::isfinite(v)) throw DivergenceError(static_cast<int>(epoch), name);
    }
    return t;
}

}  // namespace

Tensor training_objective(Tape& tape, const TrainingContext& ctx, Model& model, const TrainConfig& cfg,
                          std::uint64_t mask_seed, std::size_t epoch, StepLosses* losses, const synth::KnnSelection* frozen,
                          synth::KnnSelection* selection) {
    const HeteroGraph& g = *ctx.graph;
    const synth::Propagation* prop = model.config.eta != 0 ? &ctx.propagation : nullptr;
    const bool use_synth = cfg.ablation != Ablation::no_synthesizer;
    const LabelMode mode = g.label_mode();
    const auto& train_idx = g.splits().train;
    const std::uint64_t salt = 3 * static_cast<std::uint64_t>(epoch);

    synth::SynthesisOnTape s;
    Tensor z;
    if (use_synth) {
        s = synth::synthesize_on_tape(tape, g, model.synthesizer, prop, knn_options(model, mix_seed(mask_seed, salt + 2)), frozen);
        if (selection) *selection = s.base_selection;
        z = s.z;
    } else {
        z = synth::project_nodes(tape, g, model.synthesizer);
    }

    const auto noised = encoder::branch_from_edges(tape, ctx.adjacency, cfg.p_a, mix_seed(mask_seed, salt));
    Tensor h = nk::gather_rows(encoder::encode(tape, z, noised, model.encoder), ctx.target_ids);
    Tensor l_o = classification_loss(finite_or_diverge(predict(h, model.head, mode), epoch, "y"), g.labels(), train_idx, mode);

    Tensor l_s, l_g;
    if (use_synth) {
        const auto synthesized = encoder::branch_from_selection(tape, s.selection, s.weights, cfg.p_atheta, mix_seed(mask_seed, salt + 1));
        Tensor h_theta = nk::gather_rows(encoder::encode(tape, z, synthesized, model.encoder), ctx.target_ids);
        ClassifierParams& head = model.config.separate_heads ? model.head_theta : model.head;
        l_s = classification_loss(finite_or_diverge(predict(h_theta, head, mode), epoch, "y_theta"), g.labels(), train_idx, mode);
    }
    if (cfg.ablation == Ablation::full) {
        Tensor a_hat = target_block(ctx, s.selection, s.weights);
        for (const Matrix& a_phi : ctx.a_phi) {
            Tensor term = contrastive_loss(tape.constant(a_phi), a_hat, cfg.gamma, cfg.reduction);
            l_g = l_g.valid() ? nk::add(l_g, term) : term;
        }
        if (ctx.a_phi.size() > 1) l_g = nk::scale(l_g, 1.0 / static_cast<double>(ctx.a_phi.size()));
    }

    Tensor total = total_loss(l_o, l_s, l_g, cfg.ablation, static_cast<int>(epoch));
    if (losses) {
        losses->l_o = l_o.value()[0];
        losses->l_s = l_s.valid() ? l_s.value()[0] : 0.0;
        losses->l_g = l_g.valid() ? l_g.value()[0] : 0.0;
        losses->total = total.value()[0];
    }
    return total;
}

Matrix infer(const TrainingContext& ctx, Model& model) {
    Tape tape;
    Tensor z = synth::project_nodes(tape, *ctx.graph, model.synthesizer);
    const auto noised = encoder::branch_from_edges(tape, ctx.adjacency, 0.0, 0);
    Tensor h = nk::gather_rows(encoder::encode(tape, z, noised, model.encoder), ctx.target_ids);
    return predict(h, model.head, ctx.graph->label_mode()).value();
}

Metrics evaluate_model(const TrainingContext& ctx, Model& model, std::span<const int> split) {
    const HeteroGraph& g = *ctx.graph;
    return evaluate(infer(ctx, model), g.labels(), split, g.num_classes(), g.label_mode());
}

TrainResult train(const TrainingContext& ctx, Model& model, const TrainConfig& cfg, std::uint64_t mask_seed) {
    cfg.validate();
    const HeteroGraph& g = *ctx.graph;
    if (g.splits().train.empty()) throw ContractError("train: empty training split");
    if (cfg.ablation == Ablation::full && ctx.a_phi.empty()) throw ContractError("train: context holds no metapath graphs");

    nk::Adam opt({cfg.lr, cfg.weight_decay});
    const auto params = model.trainable(cfg.ablation);
    const auto all = model.parameters();
    std::vector<Matrix> best;
    auto snapshot = [&] {
        best.clear();
        for (Parameter* p : all) best.push_back(p->value);
    };

    TrainResult result;
    const bool has_val = !g.splits().val.empty();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        {
            Tape tape;
            StepLosses l;
            Tensor loss = training_objective(tape, ctx, model, cfg, mask_seed, epoch, &l);
            tape.backward(loss);
            opt.step(params);
            rec.l_o = l.l_o;
            rec.l_s = l.l_s;
            rec.l_g = l.l_g;
            rec.total = l.total;
        }
        for (Parameter* p : params) {
            for (double v : p->value.values()) {
                if (!std::isfinite(v)) throw DivergenceError(static_cast<int>(epoch), "parameter " + p->name);
            }
        }
        if (has_val) {
            const Metrics m = evaluate_model(ctx, model, g.splits().val);
            rec.val_macro_f1 = m.macro_f1;
            rec.val_micro_f1 = m.micro_f1;
        }
        result.history.push_back(rec);

        if (epoch == 0 || (has_val && rec.val_macro_f1 > result.best_val_macro_f1) || !has_val) {
            result.best_epoch = epoch;
            result.best_val_macro_f1 = rec.val_macro_f1;
            snapshot();
        } else if (epoch - result.best_epoch >= cfg.patience) {
            result.stopped_early = true;
            break;
        }
    }
    for (std::size_t i = 0; i < all.size(); ++i) all[i]->value = best[i];
    return result;
}

Matrix target_graph(const TrainingContext& ctx, Model& model) {
    Tape tape;
    const synth::Propagation* prop = model.config.eta != 0 ? &ctx.propagation : nullptr;
    auto s = synth::synthesize_on_tape(tape, *ctx.graph, model.synthesizer, prop, knn_options(model, 0));
    return target_block(ctx, s.selection, s.weights).value();
}

void save_checkpoint(Model& model, const std::filesystem::path& file) {
    nlohmann::json doc;
    doc["format"] = "noisehgnn-checkpoint";
    doc["version"] = 1;
    nlohmann::json table = nlohmann::json::array();
    for (Parameter* p : model.parameters()) {
        table.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}, {"values", p->value.values()}});
    }
    doc["parameters"] = std::move(table);
    std::ofstream out(file);
    if (!out) throw Error("cannot write " + file.string());
    out << doc.dump() << '\n';
}

void load_checkpoint(Model& model, const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ParseError(file.string(), 0, "cannot open checkpoint");
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(file.string(), 0, e.what());
    }
    if (doc.value("format", "") != "noisehgnn-checkpoint" || doc.value("version", 0) != 1) {
        throw ParseError(file.string(), 0, "not a version 1 checkpoint");
    }
    std::map<std::string, const nlohmann::json*> by_name;
    for (const auto& entry : doc.at("parameters")) by_name[entry.at("name").get<std::string>()] = &entry;
    for (Parameter* p : model.parameters()) {
        const auto it = by_name.find(p->name);
        if (it == by_name.end()) throw ParseError(file.string(), 0, "missing parameter " + p->name);
        const auto& e = *it->second;
        const auto rows = e.at("rows").get<std::size_t>(), cols = e.at("cols").get<std::size_t>();
        if (rows != p->value.rows() || cols != p->value.cols()) {
            throw DimensionError("checkpoint parameter " + p->name + " is " + std::to_string(rows) + "x" + std::to_string(cols) +
                                 ", model expects " + p->value.shape_string());
        }
        auto values = e.at("values").get<std::vector<double>>();
        if (values.size() != rows * cols) throw ParseError(file.string(), 0, "value count mismatch for " + p->name);
        p->value = Matrix(rows, cols, std::move(values));
    }
}

}  // namespace noisehgnn::training
