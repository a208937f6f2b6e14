#pragma once

// Dense double-precision matrices, a reverse-mode computation record, and the
// Adam optimizer. Everything the model trains with is built from the ops here.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "noisehgnn/errors.hpp"
#include "noisehgnn/random.hpp"

namespace noisehgnn::numkernel {

/// Row-major dense matrix of doubles. Plain value type.
class Matrix {
   public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Matrix identity(std::size_t n);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return values_[r * cols_ + c]; }
    double& operator[](std::size_t i) noexcept { return values_[i]; }
    double operator[](std::size_t i) const noexcept { return values_[i]; }

    std::span<double> row(std::size_t r) noexcept { return {values_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {values_.data() + r * cols_, cols_}; }

    double* data() noexcept { return values_.data(); }
    const double* data() const noexcept { return values_.data(); }
    const std::vector<double>& values() const noexcept { return values_; }

    bool same_shape(const Matrix& other) const noexcept { return rows_ == other.rows_ && cols_ == other.cols_; }
    std::string shape_string() const;

    Matrix transposed() const;
    void fill(double v);

    friend bool operator==(const Matrix&, const Matrix&) = default;

   private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

/// Plain (unrecorded) product op(a) * op(b); `ta`/`tb` select a transpose.
Matrix product(const Matrix& a, const Matrix& b, bool ta = false, bool tb = false);

/// Glorot/Xavier uniform fan_in x fan_out matrix.
Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// Learnable leaf. `grad` has the shape of `value` after every backward pass.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}
};

class Tape;

/// Handle to a value recorded on a Tape. Becomes invalid when the tape is cleared.
class Tensor {
   public:
    Tensor() = default;

    const Matrix& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    bool requires_grad() const;
    Tape& tape() const;
    int id() const noexcept { return id_; }
    bool valid() const noexcept;

   private:
    friend class Tape;
    Tensor(Tape* tape, int id, std::uint64_t generation) : tape_(tape), id_(id), generation_(generation) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
    std::uint64_t generation_ = 0;
};

/// The computation record. Nodes are appended in evaluation order, so parents
/// always precede children and reverse iteration is a valid backward schedule.
class Tape {
   public:
    using BackwardFn = std::function<void(Tape&, int self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf without gradient.
    Tensor constant(Matrix value);
    /// Leaf with gradient that is not a Parameter; gradient readable via grad().
    Tensor input(Matrix value);
    /// Leaf bound to a Parameter; the same Parameter maps to the same node.
    Tensor param(Parameter& p);

    /// Record an op result. `fn` runs during backward only when the node requires grad.
    Tensor record(const char* tag, Matrix value, std::vector<int> parents, BackwardFn fn);

    /// Propagate d(loss)/d(node) to every node; writes Parameter::grad for bound parameters.
    /// Throws ContractError if `loss` is not 1x1 or if backward already ran since clear().
    void backward(const Tensor& loss);

    /// Gradient of the last backward pass w.r.t. `t` (zeros if unreachable).
    Matrix grad(const Tensor& t) const;

    void clear();
    std::size_t size() const noexcept { return nodes_.size(); }
    std::uint64_t generation() const noexcept { return generation_; }

    // Accessors used by op backward rules.
    const Matrix& value(int id) const { return nodes_[id].value; }
    const Matrix& grad_of(int id) const { return nodes_[id].grad; }
    /// Gradient accumulator for `id`, zero-initialized on first use.
    Matrix& grad_acc(int id);
    bool needs_grad(int id) const { return nodes_[id].requires_grad; }
    const std::vector<int>& parents(int id) const { return nodes_[id].parents; }
    const std::string& tag(int id) const { return nodes_[id].tag; }

   private:
    friend class Tensor;

    struct Node {
        std::string tag;
        std::vector<int> parents;
        Matrix value;
        Matrix grad;
        BackwardFn backward;
        Parameter* param = nullptr;
        bool requires_grad = false;
    };

    void check(const Tensor& t) const;

    std::vector<Node> nodes_;
    std::uint64_t generation_ = 1;
    bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Recorded ops. Every binary op requires both operands on the same tape.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// a (r x c) + row (1 x c) broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
/// a (r x c) with row i scaled by col(i, 0); col is r x 1.
Tensor mul_col(const Tensor& a, const Tensor& col);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

inline constexpr double kLeakySlope = 0.01;

Tensor sigmoid(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = kLeakySlope);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
/// Throws DomainError on any non-positive entry.
Tensor log(const Tensor& a);
/// Entrywise a^gamma. Negative bases are a DomainError unless gamma is an integer.
Tensor power(const Tensor& a, double gamma);
/// Entrywise clamp; gradient is zero where the clamp is active.
Tensor clamp(const Tensor& a, double lo, double hi);

/// Sum of all entries as 1x1.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// r x 1 row sums.
Tensor row_sum(const Tensor& a);
/// Each row divided by max(||row||, eps).
Tensor row_normalize(const Tensor& a, double eps = 1e-12);
/// Softmax along each row.
Tensor softmax_rows(const Tensor& a);

/// Softmax of an E x 1 score column within each segment [offsets[s], offsets[s+1]).
/// Throws ContractError for an empty segment or offsets that do not cover the scores.
Tensor segment_softmax(const Tensor& scores, std::span<const std::size_t> offsets);

/// out(e, :) = a(index[e], :).
Tensor gather_rows(const Tensor& a, std::span<const int> index);
/// out(index[e], :) += a(e, :), out has `n_rows` rows.
Tensor scatter_add_rows(const Tensor& a, std::span<const int> index, std::size_t n_rows);
/// E x 1 column of a(rows[e], cols[e]).
Tensor gather_entries(const Tensor& a, std::span<const int> rows, std::span<const int> cols);
/// n_rows x n_cols matrix with v(e) added at (rows[e], cols[e]).
Tensor scatter_entries(const Tensor& v, std::span<const int> rows, std::span<const int> cols, std::size_t n_rows,
                       std::size_t n_cols);
/// Sub-matrix a[rows][cols].
Tensor gather_block(const Tensor& a, std::span<const int> rows, std::span<const int> cols);
/// Horizontal concatenation; all parts share the row count.
Tensor concat_cols(std::span<const Tensor> parts);
/// Vertical concatenation; all parts share the column count.
Tensor concat_rows(std::span<const Tensor> parts);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
    double lr = 5e-4;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with decoupled weight decay:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
class Adam {
   public:
    explicit Adam(AdamConfig config) : config_(config) {}

    /// Moments are created on the first step; later steps must see the same shapes.
    void step(std::span<Parameter* const> params);

    long steps() const noexcept { return step_; }
    const AdamConfig& config() const noexcept { return config_; }
    void set_lr(double lr) noexcept { config_.lr = lr; }
    const Matrix& first_moment(std::size_t i) const { return m_.at(i); }
    const Matrix& second_moment(std::size_t i) const { return v_.at(i); }

   private:
    AdamConfig config_;
    long step_ = 0;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
};

// ---------------------------------------------------------------------------
// Gradient checking

using ScalarFn = std::function<Tensor(Tape&, std::span<const Tensor>)>;

struct GradCheckReport {
    bool passed = false;
    double max_rel_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_entry = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::string failure;  // set when a non-finite value was met
};

/// Compares recorded gradients of `f` at `point` against central differences.
/// Per entry the error is |analytic - numeric| / max(1, |analytic|, |numeric|).
GradCheckReport grad_check(const ScalarFn& f, const std::vector<Matrix>& point, double tol, double step = 1e-5);

/// Same comparison for a loss built from Parameters: analytic gradients come from one
/// backward pass, numeric ones from perturbing each Parameter entry in place.
/// `worst_input` indexes `params`.
GradCheckReport grad_check_params(const std::function<Tensor(Tape&)>& f, std::span<Parameter* const> params, double tol,
                                  double step = 1e-5);

}  // namespace noisehgnn::numkernel
