#include <doctest.h>

#include <cmath>
#include <numeric>

#include "noisehgnn/errors.hpp"
#include "noisehgnn/numkernel.hpp"
#include "support.hpp"

using namespace noisehgnn;
using namespace noisehgnn::numkernel;
using support::random_matrix;

namespace {

Matrix value_of(const Tensor& t) { return t.value(); }

// A 1x1 op whose backward reports twice the true derivative of x^2.
Tensor wrong_square(const Tensor& x) {
    Matrix v(x.rows(), x.cols());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.value()[i] * x.value()[i];
    const int xi = x.id();
    return x.tape().record("wrong_square", std::move(v), {xi}, [xi](Tape& t, int self) {
        Matrix& g = t.grad_acc(xi);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 4.0 * t.value(xi)[i] * t.grad_of(self)[i];
    });
}

}  // namespace

TEST_CASE("matmul: identity, zero and shape error") {
    Rng rng(1);
    Tape tape;
    const Matrix m = random_matrix(3, 4, rng);
    CHECK(value_of(matmul(tape.constant(Matrix::identity(3)), tape.constant(m))) == m);
    const Matrix z = value_of(matmul(tape.constant(Matrix(2, 3)), tape.constant(m)));
    CHECK(z == Matrix(2, 4));
    try {
        matmul(tape.constant(Matrix(2, 3)), tape.constant(Matrix(2, 3)));
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("(2, 3)") != std::string::npos);
    }
}

TEST_CASE("matmul: gradient of sum equals ones x b^T") {
    Rng rng(2);
    const Matrix a = random_matrix(5, 4, rng), b = random_matrix(4, 3, rng);
    Tape tape;
    Tensor ta = tape.input(a);
    tape.backward(sum(matmul(ta, tape.constant(b))));
    const Matrix expected = product(Matrix(5, 3, 1.0), b, false, true);
    const Matrix got = tape.grad(ta);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(expected[i]).epsilon(1e-12));

    // Central differences agree as well.
    const auto report = grad_check([&](Tape&, std::span<const Tensor> x) { return sum(matmul(x[0], x[1])); }, {a, b}, 1e-4);
    CHECK(report.passed);
}

TEST_CASE("elementwise examples") {
    Tape tape;
    CHECK(value_of(leaky_relu(tape.constant(Matrix(1, 1, -1.0))))[0] == doctest::Approx(-0.01));
    CHECK(value_of(sigmoid(tape.constant(Matrix(1, 1, 0.0))))[0] == 0.5);
    CHECK(value_of(power(tape.constant(Matrix(1, 1, 0.5)), 2.0))[0] == doctest::Approx(0.25));
    CHECK_THROWS_AS(log(tape.constant(Matrix(1, 2, 0.0))), DomainError);
    CHECK_THROWS_AS(log(tape.constant(Matrix(1, 1, -1.0))), DomainError);
    CHECK_THROWS_AS(log(tape.constant(Matrix(1, 1, std::nan("")))), DomainError);
    CHECK_THROWS_AS(add(tape.constant(Matrix(2, 2)), tape.constant(Matrix(2, 3))), DimensionError);
    CHECK_THROWS_AS(mul(tape.constant(Matrix(2, 2)), tape.constant(Matrix(3, 2))), DimensionError);
}

TEST_CASE("segment_softmax examples") {
    Tape tape;
    const std::vector<std::size_t> one = {0, 1};
    CHECK(value_of(segment_softmax(tape.constant(Matrix(1, 1, 7.3)), one))[0] == 1.0);

    const std::vector<std::size_t> two = {0, 2};
    const Matrix eq = value_of(segment_softmax(tape.constant(Matrix(2, 1, 0.4)), two));
    CHECK(eq[0] == 0.5);
    CHECK(eq[1] == 0.5);

    const std::vector<std::size_t> three = {0, 3};
    const Matrix r = value_of(segment_softmax(tape.constant(Matrix(3, 1, std::vector<double>{1, 2, 3})), three));
    const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (int i = 0; i < 3; ++i) CHECK(r[static_cast<std::size_t>(i)] == doctest::Approx(std::exp(i + 1.0) / z).epsilon(1e-14));

    const std::vector<std::size_t> empty_seg = {0, 2, 2, 3};
    CHECK_THROWS_AS(segment_softmax(tape.constant(Matrix(3, 1)), empty_seg), ContractError);
}

TEST_CASE("segment_softmax sums to one per segment (property)") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::size_t> offsets = {0};
        const std::size_t segs = 1 + rng.below(8);
        for (std::size_t s = 0; s < segs; ++s) offsets.push_back(offsets.back() + 1 + rng.below(6));
        Tape tape;
        const Matrix out = value_of(segment_softmax(tape.constant(random_matrix(offsets.back(), 1, rng, -30, 30)), offsets));
        for (std::size_t s = 0; s < segs; ++s) {
            double total = 0.0;
            for (std::size_t e = offsets[s]; e < offsets[s + 1]; ++e) {
                CHECK(out[e] > 0.0);
                total += out[e];
            }
            CHECK(std::abs(total - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("backward: analytic derivative and contracts") {
    Tape tape;
    Tensor x = tape.input(Matrix(1, 1, 3.0));
    Tensor loss = mul(x, x);
    tape.backward(loss);
    CHECK(tape.grad(x)[0] == 6.0);
    CHECK_THROWS_AS(tape.backward(loss), ContractError);

    Tape t2;
    Tensor y = t2.input(Matrix(2, 1, 1.0));
    CHECK_THROWS_AS(t2.backward(y), ContractError);

    t2.clear();
    CHECK_THROWS_AS(y.value(), ContractError);
}

TEST_CASE("backward: sum(sigmoid(W x)) matches finite differences") {
    Rng rng(4);
    const auto report = grad_check([](Tape&, std::span<const Tensor> v) { return sum(sigmoid(matmul(v[0], v[1]))); },
                                   {random_matrix(4, 3, rng), random_matrix(3, 2, rng)}, 1e-4);
    CHECK(report.passed);
    CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("parameters receive gradients of their own shape") {
    Rng rng(5);
    Parameter w("w", random_matrix(3, 2, rng));
    Parameter unused("u", random_matrix(4, 4, rng));
    Tape tape;
    tape.param(unused);
    tape.backward(sum(matmul(tape.constant(random_matrix(5, 3, rng)), tape.param(w))));
    CHECK(w.grad.same_shape(w.value));
    CHECK(unused.grad.same_shape(unused.value));
    CHECK(unused.grad == Matrix(4, 4));
}

TEST_CASE("backward is linear over independent subgraphs") {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix a = random_matrix(3, 3, rng), b = random_matrix(3, 3, rng);
        auto f = [](const Tensor& x) { return sum(sigmoid(matmul(x, x))); };
        auto g = [](const Tensor& x) { return sum(exp(scale(x, 0.3))); };

        Tape t1;
        Tensor x1 = t1.input(a), y1 = t1.input(b);
        t1.backward(add(f(x1), g(y1)));

        Tape tf, tg;
        Tensor xf = tf.input(a);
        tf.backward(f(xf));
        Tensor yg = tg.input(b);
        tg.backward(g(yg));

        const Matrix gx = t1.grad(x1), gy = t1.grad(y1), ex = tf.grad(xf), ey = tg.grad(yg);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            CHECK(gx[i] == doctest::Approx(ex[i]).epsilon(1e-13));
            CHECK(gy[i] == doctest::Approx(ey[i]).epsilon(1e-13));
        }
    }
}

TEST_CASE("every primitive op passes the gradient check") {
    Rng rng(7);
    for (const auto& c : support::primitive_cases()) {
        for (int trial = 0; trial < 3; ++trial) {
            std::vector<Matrix> point;
            for (auto [r, k] : c.shapes) point.push_back(random_matrix(r, k, rng, c.lo, c.hi));
            const auto report = grad_check(c.fn, point, 1e-4);
            INFO(c.name << " error " << report.max_rel_error << " " << report.failure);
            CHECK(report.passed);
        }
    }
}

TEST_CASE("grad_check: passes x*x, fails a wrong backward, reports non-finite values") {
    Rng rng(8);
    const Matrix x = random_matrix(3, 2, rng);
    CHECK(grad_check([](Tape&, std::span<const Tensor> v) { return sum(mul(v[0], v[0])); }, {x}, 1e-4).passed);

    const auto bad = grad_check([](Tape&, std::span<const Tensor> v) { return sum(wrong_square(v[0])); }, {x}, 1e-4);
    CHECK_FALSE(bad.passed);
    CHECK(bad.max_rel_error > 0.1);

    const auto nan = grad_check([](Tape&, std::span<const Tensor> v) { return sum(mul(v[0], v[0])); },
                                {Matrix(1, 2, std::vector<double>{1.0, std::nan("")})}, 1e-4);
    CHECK_FALSE(nan.passed);
    CHECK_FALSE(nan.failure.empty());
}

TEST_CASE("grad_check_params agrees with grad_check") {
    Rng rng(9);
    Parameter w("w", random_matrix(3, 2, rng));
    Parameter b("b", random_matrix(1, 2, rng));
    const Matrix x = random_matrix(4, 3, rng);
    std::vector<Parameter*> ps = {&w, &b};
    const auto report = grad_check_params(
        [&](Tape& t) { return sum(sigmoid(add_row(matmul(t.constant(x), t.param(w)), t.param(b)))); }, ps, 1e-4);
    CHECK(report.passed);
}

TEST_CASE("adam: zero gradient, sign, formula, lr 0, shape mismatch") {
    Rng rng(10);
    SUBCASE("zero gradient without decay leaves parameters unchanged") {
        Parameter p("p", random_matrix(2, 3, rng));
        const Matrix before = p.value;
        Adam opt({.lr = 0.1});
        std::vector<Parameter*> ps = {&p};
        for (int i = 0; i < 5; ++i) opt.step(ps);
        CHECK(p.value == before);
        CHECK(opt.steps() == 5);
    }
    SUBCASE("constant gradient moves against its sign") {
        Parameter p("p", Matrix(1, 2, 0.0));
        Adam opt({.lr = 0.01});
        std::vector<Parameter*> ps = {&p};
        for (int i = 0; i < 50; ++i) {
            p.grad = Matrix(1, 2, std::vector<double>{2.5, -0.3});
            opt.step(ps);
        }
        CHECK(p.value[0] < 0.0);
        CHECK(p.value[1] > 0.0);
    }
    SUBCASE("one step from known moments") {
        // Drive two steps with g1 then g2 and compare with the scalar recurrences.
        const double lr = 0.05, wd = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double g1 = 0.7, g2 = -1.3, p0 = 0.4;
        Parameter p("p", Matrix(1, 1, p0));
        Adam opt({.lr = lr, .weight_decay = wd});
        std::vector<Parameter*> ps = {&p};
        double m = 0, v = 0, x = p0;
        int t = 0;
        for (double g : {g1, g2}) {
            p.grad = Matrix(1, 1, g);
            opt.step(ps);
            ++t;
            m = b1 * m + (1 - b1) * g;
            v = b2 * v + (1 - b2) * g * g;
            const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
            x = x - lr * (mh / (std::sqrt(vh) + eps) + wd * x);
            CHECK(p.value[0] == doctest::Approx(x).epsilon(1e-14));
            CHECK(opt.first_moment(0)[0] == doctest::Approx(m).epsilon(1e-14));
            CHECK(opt.second_moment(0)[0] == doctest::Approx(v).epsilon(1e-14));
        }
    }
    SUBCASE("lr 0 leaves parameters fixed") {
        Parameter p("p", random_matrix(3, 3, rng));
        const Matrix before = p.value;
        Adam opt({.lr = 0.0, .weight_decay = 0.1});
        std::vector<Parameter*> ps = {&p};
        for (int i = 0; i < 10; ++i) {
            p.grad = random_matrix(3, 3, rng);
            opt.step(ps);
        }
        CHECK(p.value == before);
    }
    SUBCASE("moment shapes must keep matching") {
        Parameter p("p", Matrix(2, 2, 1.0));
        Adam opt({});
        std::vector<Parameter*> ps = {&p};
        opt.step(ps);
        CHECK(opt.first_moment(0).same_shape(p.value));
        p.value = Matrix(3, 2);
        p.grad = Matrix(3, 2);
        CHECK_THROWS_AS(opt.step(ps), DimensionError);
    }
}
