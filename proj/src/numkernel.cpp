#include "noisehgnn/numkernel.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <sstream>

namespace noisehgnn::numkernel {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap view(const Matrix& m) { return ConstMap(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())); }
MutMap view(Matrix& m) { return MutMap(m.data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())); }

void require_same_tape(const Tensor& a, const Tensor& b, const char* op) {
    if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": operands recorded on different tapes");
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
    }
}

void check_index(std::span<const int> index, std::size_t bound, const char* op) {
    for (int i : index) {
        if (i < 0 || static_cast<std::size_t>(i) >= bound) {
            throw DimensionError(std::string(op) + ": index " + std::to_string(i) + " out of range " + std::to_string(bound));
        }
    }
}

// Unary entrywise op with derivative expressed through (x, y).
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, const char* tag, Fwd fwd, Deriv deriv) {
    const Matrix& x = a.value();
    Matrix y(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
    const int pa = a.id();
    return a.tape().record(tag, std::move(y), {pa}, [pa, deriv](Tape& t, int self) {
        const Matrix& g = t.grad_of(self);
        const Matrix& xv = t.value(pa);
        const Matrix& yv = t.value(self);
        Matrix& ga = t.grad_acc(pa);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(xv[i], yv[i]);
    });
}

}  // namespace

// ---------------------------------------------------------------------------
// Matrix

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows * cols) {
        throw DimensionError("Matrix: " + std::to_string(values_.size()) + " values for shape (" + std::to_string(rows) +
                             ", " + std::to_string(cols) + ")");
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("Matrix::from_rows: ragged rows");
        v.insert(v.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(v));
}

std::string Matrix::shape_string() const {
    std::ostringstream os;
    os << "(" << rows_ << ", " << cols_ << ")";
    return os.str();
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
}

void Matrix::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

Matrix product(const Matrix& a, const Matrix& b, bool ta, bool tb) {
    const std::size_t inner_a = ta ? a.rows() : a.cols();
    const std::size_t inner_b = tb ? b.cols() : b.rows();
    if (inner_a != inner_b) {
        throw DimensionError("matmul: shape mismatch " + a.shape_string() + (ta ? "^T" : "") + " x " + b.shape_string() +
                             (tb ? "^T" : ""));
    }
    Matrix out(ta ? a.cols() : a.rows(), tb ? b.rows() : b.cols());
    if (out.empty() || inner_a == 0) return out;
    auto o = view(out);
    if (!ta && !tb) o.noalias() = view(a) * view(b);
    else if (ta && !tb) o.noalias() = view(a).transpose() * view(b);
    else if (!ta && tb) o.noalias() = view(a) * view(b).transpose();
    else o.noalias() = view(a).transpose() * view(b).transpose();
    return out;
}

Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in + fan_out, 1)));
    Matrix m(fan_in, fan_out);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-limit, limit);
    return m;
}

// ---------------------------------------------------------------------------
// Tensor / Tape

const Matrix& Tensor::value() const {
    if (!tape_) throw ContractError("Tensor: empty handle");
    tape_->check(*this);
    return tape_->nodes_[id_].value;
}

bool Tensor::requires_grad() const {
    value();
    return tape_->nodes_[id_].requires_grad;
}

Tape& Tensor::tape() const {
    if (!tape_) throw ContractError("Tensor: empty handle");
    return *tape_;
}

bool Tensor::valid() const noexcept {
    return tape_ && generation_ == tape_->generation_ && id_ >= 0 && static_cast<std::size_t>(id_) < tape_->nodes_.size();
}

void Tape::check(const Tensor& t) const {
    if (t.generation_ != generation_ || t.id_ < 0 || static_cast<std::size_t>(t.id_) >= nodes_.size()) {
        throw ContractError("Tensor: handle invalidated by Tape::clear()");
    }
}

Tensor Tape::constant(Matrix value) {
    nodes_.push_back(Node{"constant", {}, std::move(value), {}, {}, nullptr, false});
    return Tensor(this, static_cast<int>(nodes_.size() - 1), generation_);
}

Tensor Tape::input(Matrix value) {
    nodes_.push_back(Node{"input", {}, std::move(value), {}, {}, nullptr, true});
    return Tensor(this, static_cast<int>(nodes_.size() - 1), generation_);
}

Tensor Tape::param(Parameter& p) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].param == &p) return Tensor(this, static_cast<int>(i), generation_);
    }
    nodes_.push_back(Node{"param:" + p.name, {}, p.value, {}, {}, &p, true});
    return Tensor(this, static_cast<int>(nodes_.size() - 1), generation_);
}

Tensor Tape::record(const char* tag, Matrix value, std::vector<int> parents, BackwardFn fn) {
    bool rg = false;
    for (int p : parents) rg = rg || nodes_[p].requires_grad;
    nodes_.push_back(Node{tag, std::move(parents), std::move(value), {}, rg ? std::move(fn) : BackwardFn{}, nullptr, rg});
    return Tensor(this, static_cast<int>(nodes_.size() - 1), generation_);
}

Matrix& Tape::grad_acc(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::backward(const Tensor& loss) {
    check(loss);
    const Matrix& lv = nodes_[loss.id_].value;
    if (lv.rows() != 1 || lv.cols() != 1) throw ContractError("backward: loss must be 1x1, got " + lv.shape_string());
    if (backward_done_) throw ContractError("backward: already called on this record; clear() it first");
    backward_done_ = true;

    grad_acc(loss.id_)[0] = 1.0;
    for (int id = loss.id_; id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
        n.backward(*this, id);
    }
    for (Node& n : nodes_) {
        if (!n.param) continue;
        n.param->grad = n.grad.empty() ? Matrix(n.value.rows(), n.value.cols()) : n.grad;
    }
}

Matrix Tape::grad(const Tensor& t) const {
    check(t);
    const Node& n = nodes_[t.id_];
    return n.grad.empty() ? Matrix(n.value.rows(), n.value.cols()) : n.grad;
}

void Tape::clear() {
    nodes_.clear();
    ++generation_;
    backward_done_ = false;
}

// ---------------------------------------------------------------------------
// Ops

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_same_tape(a, b, "matmul");
    Matrix out = product(a.value(), b.value());
    const int pa = a.id(), pb = b.id();
    return a.tape().record("matmul", std::move(out), {pa, pb}, [pa, pb](Tape& t, int self) {
        const Matrix& g = t.grad_of(self);
        if (t.needs_grad(pa)) view(t.grad_acc(pa)).noalias() += view(g) * view(t.value(pb)).transpose();
        if (t.needs_grad(pb)) view(t.grad_acc(pb)).noalias() += view(t.value(pa)).transpose() * view(g);
    });
}

Tensor transpose(const Tensor& a) {
    const int pa = a.id();
    return a.tape().record("transpose", a.value().transposed(), {pa}, [pa](Tape& t, int self) {
        view(t.grad_acc(pa)) += view(t.grad_of(self)).transpose();
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_tape(a, b, "add");
    require_same_shape(a.value(), b.value(), "add");
    Matrix out = a.value();
    view(out) += view(b.value());
    const int pa = a.id(), pb = b.id();
    return a.tape().record("add", std::move(out), {pa, pb}, [pa, pb](Tape& t, int self) {
        if (t.needs_grad(pa)) view(t.grad_acc(pa)) += view(t.grad_of(self));
        if (t.needs_grad(pb)) view(t.grad_acc(pb)) += view(t.grad_of(self));
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_tape(a, b, "sub");
    require_same_shape(a.value(), b.value(), "sub");
    Matrix out = a.value();
    view(out) -= view(b.value());
    const int pa = a.id(), pb = b.id();
    return a.tape().record("sub", std::move(out), {pa, pb}, [pa, pb](Tape& t, int self) {
        if (t.needs_grad(pa)) view(t.grad_acc(pa)) += view(t.grad_of(self));
        if (t.needs_grad(pb)) view(t.grad_acc(pb)) -= view(t.grad_of(self));
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_tape(a, b, "mul");
    require_same_shape(a.value(), b.value(), "mul");
    Matrix out = a.value();
    view(out).array() *= view(b.value()).array();
    const int pa = a.id(), pb = b.id();
    return a.tape().record("mul", std::move(out), {pa, pb}, [pa, pb](Tape& t, int self) {
        const auto g = view(t.grad_of(self)).array();
        if (t.needs_grad(pa)) view(t.grad_acc(pa)).array() += g * view(t.value(pb)).array();
        if (t.needs_grad(pb)) view(t.grad_acc(pb)).array() += g * view(t.value(pa)).array();
    });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
    require_same_tape(a, row, "add_row");
    const Matrix& x = a.value();
    const Matrix& r = row.value();
    if (r.rows() != 1 || r.cols() != x.cols()) {
        throw DimensionError("add_row: shape mismatch " + x.shape_string() + " vs " + r.shape_string());
    }
    Matrix out = x;
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += r[j];
    const int pa = a.id(), pr = row.id();
    return a.tape().record("add_row", std::move(out), {pa, pr}, [pa, pr](Tape& t, int self) {
        const Matrix& g = t.grad_of(self);
        if (t.needs_grad(pa)) view(t.grad_acc(pa)) += view(g);
        if (t.needs_grad(pr)) view(t.grad_acc(pr)) += view(g).colwise().sum();
    });
}

Tensor mul_col(const Tensor& a, const Tensor& col) {
    require_same_tape(a, col, "mul_col");
    const Matrix& x = a.value();
    const Matrix& c = col.value();
    if (c.cols() != 1 || c.rows() != x.rows()) {
        throw DimensionError("mul_col: shape mismatch " + x.shape_string() + " vs " + c.shape_string());
    }
    Matrix out = x;
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) *= c[i];
    const int pa = a.id(), pc = col.id();
    return a.tape().record("mul_col", std::move(out), {pa, pc}, [pa, pc](Tape& t, int self) {
        const Matrix& g = t.grad_of(self);
        const Matrix& xv = t.value(pa);
        const Matrix& cv = t.value(pc);
        if (t.needs_grad(pa)) {
            Matrix& ga = t.grad_acc(pa);
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) += g(i, j) * cv[i];
        }
        if (t.needs_grad(pc)) {
            Matrix& gc = t.grad_acc(pc);
            for (std::size_t i = 0; i < g.rows(); ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < g.cols(); ++j) s += g(i, j) * xv(i, j);
                gc[i] += s;
            }
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    return unary(a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
    return unary(a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& a) {
    return unary(
        a, "sigmoid",
        [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    return unary(
        a, "leaky_relu", [slope](double x) { return x > 0 ? x : slope * x; },
        [slope](double x, double) { return x > 0 ? 1.0 : slope; });
}

Tensor relu(const Tensor& a) {
    return unary(a, "relu", [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
    return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    const Matrix& x = a.value();
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0)) throw DomainError("log: non-positive or NaN value " + std::to_string(x[i]) + " at flat index " + std::to_string(i));
    }
    return unary(a, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor power(const Tensor& a, double gamma) {
    const bool integral = gamma == std::floor(gamma);
    const Matrix& x = a.value();
    if (!integral) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (x[i] < 0.0) throw DomainError("power: negative base with non-integer exponent");
        }
    }
    return unary(
        a, "power", [gamma](double v) { return std::pow(v, gamma); },
        [gamma](double v, double) { return gamma == 0.0 ? 0.0 : gamma * std::pow(v, gamma - 1.0); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    return unary(
        a, "clamp", [lo, hi](double v) { return std::clamp(v, lo, hi); },
        [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& a) {
    Matrix out(1, 1, view(a.value()).sum());
    const int pa = a.id();
    return a.tape().record("sum", std::move(out), {pa}, [pa](Tape& t, int self) {
        view(t.grad_acc(pa)).array() += t.grad_of(self)[0];
    });
}

Tensor mean(const Tensor& a) {
    const double n = static_cast<double>(a.value().size());
    if (n == 0) throw DimensionError("mean: empty tensor");
    return scale(sum(a), 1.0 / n);
}

Tensor row_sum(const Tensor& a) {
    const Matrix& x = a.value();
    Matrix out(x.rows(), 1);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double s = 0.0;
        for (double v : x.row(i)) s += v;
        out[i] = s;
    }
    const int pa = a.id();
    return a.tape().record("row_sum", std::move(out), {pa}, [pa](Tape& t, int self) {
        const Matrix& g = t.grad_of(self);
        Matrix& ga = t.grad_acc(pa);
        for (std::size_t i = 0; i < ga.rows(); ++i)
            for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g[i];
    });
}

Tensor row_normalize(const Tensor& a, double eps) {
    const Matrix& x = a.value();
    Matrix out(x.rows(), x.cols());
    Matrix norms(x.rows(), 1);
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double s = 0.0;
        for (double v : x.row(i)) s += v * v;
        const double n = std::sqrt(s);
        norms[i] = n;
        const double d = std::max(n, eps);
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) / d;
    }
    const int pa = a.id();
    return a.tape().record("row_normalize", std::move(out), {pa}, [pa, norms, eps](Tape& t, int self) {
        const Matrix& g = t.grad_of(self);
        const Matrix& y = t.value(self);
        Matrix& ga = t.grad_acc(pa);
        for (std::size_t i = 0; i < g.rows(); ++i) {
            const double d = std::max(norms[i], eps);
            double dot = 0.0;
            if (norms[i] > eps) {
                for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * y(i, j);
            }
            for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) += (g(i, j) - y(i, j) * dot) / d;
        }
    });
}

Tensor softmax_rows(const Tensor& a) {
    const Matrix& x = a.value();
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto r = x.row(i);
        const double m = r.empty() ? 0.0 : *std::max_element(r.begin(), r.end());
        double z = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) z += out(i, j) = std::exp(x(i, j) - m);
        for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) /= z;
    }
    const int pa = a.id();
    return a.tape().record("softmax_rows", std::move(out), {pa}, [pa](Tape& t, int self) {
        const Matrix& g = t.grad_of(self);
        const Matrix& y = t.value(self);
        Matrix& ga = t.grad_acc(pa);
        for (std::size_t i = 0; i < g.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * y(i, j);
            for (std::size_t j = 0; j < g.cols(); ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
        }
    });
}

Tensor segment_softmax(const Tensor& scores, std::span<const std::size_t> offsets) {
    const Matrix& x = scores.value();
    if (x.cols() != 1) throw DimensionError("segment_softmax: scores must be a column, got " + x.shape_string());
    if (offsets.empty() || offsets.front() != 0 || offsets.back() != x.rows()) {
        throw ContractError("segment_softmax: offsets do not partition the score vector");
    }
    Matrix out(x.rows(), 1);
    for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
        const std::size_t b = offsets[s], e = offsets[s + 1];
        if (e <= b) throw ContractError("segment_softmax: empty segment " + std::to_string(s) + " (isolated node)");
        double m = x[b];
        for (std::size_t i = b + 1; i < e; ++i) m = std::max(m, x[i]);
        double z = 0.0;
        for (std::size_t i = b; i < e; ++i) z += out[i] = std::exp(x[i] - m);
        for (std::size_t i = b; i < e; ++i) out[i] /= z;
    }
    const int pa = scores.id();
    std::vector<std::size_t> segs(offsets.begin(), offsets.end());
    return scores.tape().record("segment_softmax", std::move(out), {pa}, [pa, segs = std::move(segs)](Tape& t, int self) {
        const Matrix& g = t.grad_of(self);
        const Matrix& y = t.value(self);
        Matrix& ga = t.grad_acc(pa);
        for (std::size_t s = 0; s + 1 < segs.size(); ++s) {
            double dot = 0.0;
            for (std::size_t i = segs[s]; i < segs[s + 1]; ++i) dot += g[i] * y[i];
            for (std::size_t i = segs[s]; i < segs[s + 1]; ++i) ga[i] += y[i] * (g[i] - dot);
        }
    });
}

Tensor gather_rows(const Tensor& a, std::span<const int> index) {
    const Matrix& x = a.value();
    check_index(index, x.rows(), "gather_rows");
    Matrix out(index.size(), x.cols());
    for (std::size_t e = 0; e < index.size(); ++e) {
        const auto src = x.row(static_cast<std::size_t>(index[e]));
        std::copy(src.begin(), src.end(), out.row(e).begin());
    }
    const int pa = a.id();
    std::vector<int> idx(index.begin(), index.end());
    return a.tape().record("gather_rows", std::move(out), {pa}, [pa, idx = std::move(idx)](Tape& t, int self) {
        const Matrix& g = t.grad_of(self);
        Matrix& ga = t.grad_acc(pa);
        for (std::size_t e = 0; e < idx.size(); ++e) {
            auto dst = ga.row(static_cast<std::size_t>(idx[e]));
            const auto src = g.row(e);
            for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
        }
    });
}

Tensor scatter_add_rows(const Tensor& a, std::span<const int> index, std::size_t n_rows) {
    const Matrix& x = a.value();
    if (index.size() != x.rows()) throw DimensionError("scatter_add_rows: index length does not match rows of " + x.shape_string());
    check_index(index, n_rows, "scatter_add_rows");
    Matrix out(n_rows, x.cols());
    for (std::size_t e = 0; e < index.size(); ++e) {
        auto dst = out.row(static_cast<std::size_t>(index[e]));
        const auto src = x.row(e);
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
    const int pa = a.id();
    std::vector<int> idx(index.begin(), index.end());
    return a.tape().record("scatter_add_rows", std::move(out), {pa}, [pa, idx = std::move(idx)](Tape& t, int self) {
        const Matrix& g = t.grad_of(self);
        Matrix& ga = t.grad_acc(pa);
        for (std::size_t e = 0; e < idx.size(); ++e) {
            const auto src = g.row(static_cast<std::size_t>(idx[e]));
            auto dst = ga.row(e);
            for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
        }
    });
}

Tensor gather_entries(const Tensor& a, std::span<const int> rows, std::span<const int> cols) {
    const Matrix& x = a.value();
    if (rows.size() != cols.size()) throw DimensionError("gather_entries: rows/cols length mismatch");
    check_index(rows, x.rows(), "gather_entries");
    check_index(cols, x.cols(), "gather_entries");
    Matrix out(rows.size(), 1);
    for (std::size_t e = 0; e < rows.size(); ++e) out[e] = x(rows[e], cols[e]);
    const int pa = a.id();
    std::vector<int> r(rows.begin(), rows.end()), c(cols.begin(), cols.end());
    return a.tape().record("gather_entries", std::move(out), {pa}, [pa, r = std::move(r), c = std::move(c)](Tape& t, int self) {
        const Matrix& g = t.grad_of(self);
        Matrix& ga = t.grad_acc(pa);
        for (std::size_t e = 0; e < r.size(); ++e) ga(r[e], c[e]) += g[e];
    });
}

Tensor scatter_entries(const Tensor& v, std::span<const int> rows, std::span<const int> cols, std::size_t n_rows,
                       std::size_t n_cols) {
    const Matrix& x = v.value();
    if (x.cols() != 1 || x.rows() != rows.size() || rows.size() != cols.size()) {
        throw DimensionError("scatter_entries: values " + x.shape_string() + " do not match " + std::to_string(rows.size()) +
                             " index pairs");
    }
    check_index(rows, n_rows, "scatter_entries");
    check_index(cols, n_cols, "scatter_entries");
    Matrix out(n_rows, n_cols);
    for (std::size_t e = 0; e < rows.size(); ++e) out(rows[e], cols[e]) += x[e];
    const int pa = v.id();
    std::vector<int> r(rows.begin(), rows.end()), c(cols.begin(), cols.end());
    return v.tape().record("scatter_entries", std::move(out), {pa}, [pa, r = std::move(r), c = std::move(c)](Tape& t, int self) {
        const Matrix& g = t.grad_of(self);
        Matrix& ga = t.grad_acc(pa);
        for (std::size_t e = 0; e < r.size(); ++e) ga[e] += g(r[e], c[e]);
    });
}

Tensor gather_block(const Tensor& a, std::span<const int> rows, std::span<const int> cols) {
    const Matrix& x = a.value();
    check_index(rows, x.rows(), "gather_block");
    check_index(cols, x.cols(), "gather_block");
    Matrix out(rows.size(), cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = x(rows[i], cols[j]);
    const int pa = a.id();
    std::vector<int> r(rows.begin(), rows.end()), c(cols.begin(), cols.end());
    return a.tape().record("gather_block", std::move(out), {pa}, [pa, r = std::move(r), c = std::move(c)](Tape& t, int self) {
        const Matrix& g = t.grad_of(self);
        Matrix& ga = t.grad_acc(pa);
        for (std::size_t i = 0; i < r.size(); ++i)
            for (std::size_t j = 0; j < c.size(); ++j) ga(r[i], c[j]) += g(i, j);
    });
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no parts");
    const std::size_t rows = parts[0].rows();
    std::size_t cols = 0;
    std::vector<int> ids;
    std::vector<std::size_t> widths;
    for (const Tensor& p : parts) {
        require_same_tape(parts[0], p, "concat_cols");
        if (p.rows() != rows) throw DimensionError("concat_cols: row mismatch " + p.value().shape_string());
        ids.push_back(p.id());
        widths.push_back(p.cols());
        cols += p.cols();
    }
    Matrix out(rows, cols);
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        const Matrix& x = p.value();
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) out(i, off + j) = x(i, j);
        off += x.cols();
    }
    return parts[0].tape().record("concat_cols", std::move(out), ids, [ids, widths](Tape& t, int self) {
        const Matrix& g = t.grad_of(self);
        std::size_t o = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (t.needs_grad(ids[k])) {
                Matrix& ga = t.grad_acc(ids[k]);
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < widths[k]; ++j) ga(i, j) += g(i, o + j);
            }
            o += widths[k];
        }
    });
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("concat_rows: no parts");
    const std::size_t cols = parts[0].cols();
    std::vector<int> ids;
    std::vector<double> values;
    for (const Tensor& p : parts) {
        require_same_tape(parts[0], p, "concat_rows");
        if (p.cols() != cols) throw DimensionError("concat_rows: column mismatch " + p.value().shape_string());
        ids.push_back(p.id());
        values.insert(values.end(), p.value().values().begin(), p.value().values().end());
    }
    const std::size_t rows = values.size() / std::max<std::size_t>(cols, 1);
    Matrix out(cols ? rows : 0, cols, std::move(values));
    return parts[0].tape().record("concat_rows", std::move(out), ids, [ids](Tape& t, int self) {
        const Matrix& g = t.grad_of(self);
        std::size_t o = 0;
        for (int id : ids) {
            const std::size_t n = t.value(id).size();
            if (t.needs_grad(id)) {
                Matrix& ga = t.grad_acc(id);
                for (std::size_t i = 0; i < n; ++i) ga[i] += g[o + i];
            }
            o += n;
        }
    });
}

// ---------------------------------------------------------------------------
// Adam

void Adam::step(std::span<Parameter* const> params) {
    if (m_.empty()) {
        for (const Parameter* p : params) {
            m_.emplace_back(p->value.rows(), p->value.cols());
            v_.emplace_back(p->value.rows(), p->value.cols());
        }
    }
    if (m_.size() != params.size()) throw DimensionError("Adam::step: parameter count changed between steps");
    ++step_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Parameter& p = *params[k];
        if (!p.grad.same_shape(p.value) || !m_[k].same_shape(p.value)) {
            throw DimensionError("Adam::step: shape mismatch for '" + p.name + "' " + p.value.shape_string() + " vs grad " +
                                 p.grad.shape_string());
        }
        Matrix& m = m_[k];
        Matrix& v = v_[k];
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
            v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
            const double mh = m[i] / c1;
            const double vh = v[i] / c2;
            p.value[i] -= config_.lr * (mh / (std::sqrt(vh) + config_.eps) + config_.weight_decay * p.value[i]);
        }
    }
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckReport grad_check(const ScalarFn& f, const std::vector<Matrix>& point, double tol, double step) {
    GradCheckReport report;
    std::vector<Matrix> analytic;
    {
        Tape tape;
        std::vector<Tensor> inputs;
        for (const Matrix& m : point) inputs.push_back(tape.input(m));
        Tensor loss = f(tape, inputs);
        if (!std::isfinite(loss.value()[0])) {
            report.failure = "non-finite loss at the base point";
            return report;
        }
        tape.backward(loss);
        for (const Tensor& in : inputs) analytic.push_back(tape.grad(in));
    }

    auto evaluate = [&](const std::vector<Matrix>& at) {
        Tape tape;
        std::vector<Tensor> inputs;
        for (const Matrix& m : at) inputs.push_back(tape.constant(m));
        return f(tape, inputs).value()[0];
    };

    std::vector<Matrix> probe = point;
    for (std::size_t k = 0; k < point.size(); ++k) {
        for (std::size_t i = 0; i < point[k].size(); ++i) {
            const double x0 = point[k][i];
            probe[k][i] = x0 + step;
            const double fp = evaluate(probe);
            probe[k][i] = x0 - step;
            const double fm = evaluate(probe);
            probe[k][i] = x0;
            const double numeric = (fp - fm) / (2.0 * step);
            const double a = analytic[k][i];
            if (!std::isfinite(numeric) || !std::isfinite(a)) {
                report.failure = "non-finite gradient at input " + std::to_string(k) + " entry " + std::to_string(i);
                report.worst_input = k;
                report.worst_entry = i;
                report.passed = false;
                return report;
            }
            const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            if (err > report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_input = k;
                report.worst_entry = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_error < tol;
    return report;
}

GradCheckReport grad_check_params(const std::function<Tensor(Tape&)>& f, std::span<Parameter* const> params, double tol,
                                  double step) {
    GradCheckReport report;
    auto evaluate = [&] {
        Tape tape;
        return f(tape).value()[0];
    };
    {
        Tape tape;
        Tensor loss = f(tape);
        if (!std::isfinite(loss.value()[0])) {
            report.failure = "non-finite loss at the base point";
            return report;
        }
        tape.backward(loss);
    }
    std::vector<Matrix> analytic;
    for (const Parameter* p : params) analytic.push_back(p->grad);

    for (std::size_t k = 0; k < params.size(); ++k) {
        Matrix& v = params[k]->value;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const double x0 = v[i];
            v[i] = x0 + step;
            const double fp = evaluate();
            v[i] = x0 - step;
            const double fm = evaluate();
            v[i] = x0;
            const double numeric = (fp - fm) / (2.0 * step);
            const double a = analytic[k].same_shape(v) ? analytic[k][i] : 0.0;
            if (!std::isfinite(numeric) || !std::isfinite(a)) {
                report.failure = "non-finite gradient at parameter '" + params[k]->name + "' entry " + std::to_string(i);
                report.worst_input = k;
                report.worst_entry = i;
                return report;
            }
            const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            if (err > report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_input = k;
                report.worst_entry = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    report.passed = report.max_rel_error < tol;
    return report;
}

}  // namespace noisehgnn::numkernel
