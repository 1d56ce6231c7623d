#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "stgait/losses.hpp"
#include "stgait/optim.hpp"

using namespace stgait;
using stgait::testing::check_gradient;
using stgait::testing::random_tensor;
using stgait::testing::T64;

namespace {

// Direct evaluation of the weighted cross-entropy formula in extended
// precision, without log-sum-exp.
long double direct_cross_entropy(const T64& logits, const std::vector<int>& y, const std::vector<double>& w) {
    const Index n = logits.dim(0), c = logits.dim(1);
    long double total = 0;
    for (Index i = 0; i < n; ++i) {
        long double z = 0;
        for (Index k = 0; k < c; ++k) z += std::exp(static_cast<long double>(logits.data()[i * c + k]));
        for (Index k = 0; k < c; ++k) {
            const long double onehot = k == y[i] ? 1.0L : 0.0L;
            const long double p = std::exp(static_cast<long double>(logits.data()[i * c + k])) / z;
            total -= (w.empty() ? 1.0L : w[k]) * std::log(p) * onehot;
        }
    }
    return total / n;
}

using Params = std::vector<std::pair<std::string, T64>>;

}  // namespace

TEST_CASE("cross entropy: uniform logits give ln 4") {
    for (int target = 0; target < 4; ++target) {
        std::vector<int> y{target};
        CHECK(std::abs(cross_entropy(T64::zeros({1, 4}), y).item() - std::log(4.0)) < 1e-12);
    }
}

TEST_CASE("cross entropy: confident correct prediction") {
    std::vector<int> y{0};
    const double l = cross_entropy(T64::from({1, 4}, {10, 0, 0, 0}), y).item();
    const long double expected = std::log1p(3.0L * std::exp(-10.0L));
    CHECK(std::abs(l - static_cast<double>(expected)) < 1e-15);
    CHECK(l == doctest::Approx(1.36e-4).epsilon(0.01));
}

TEST_CASE("cross entropy: linear in class weights") {
    std::mt19937_64 rng(21);
    T64 x = random_tensor({6, 4}, rng, -3, 3);
    std::vector<int> y{0, 1, 2, 3, 1, 0};
    CrossEntropyConfig one, two;
    two.class_weights = {2, 2, 2, 2};
    CHECK(cross_entropy(x, y, two).item() == doctest::Approx(2 * cross_entropy(x, y, one).item()).epsilon(1e-14));

    // argmin over logits unchanged: the target class is still the best single-logit bump
    for (Index k = 0; k < 4; ++k) {
        T64 bump = T64::zeros({1, 4});
        bump.mutable_data()[k] = 5.0;
        std::vector<int> t{2};
        const double l1 = cross_entropy(bump, t, one).item(), l2 = cross_entropy(bump, t, two).item();
        CHECK(l2 == doctest::Approx(2 * l1));
        if (k == 2) CHECK(l1 < cross_entropy(T64::zeros({1, 4}), t, one).item());
    }
}

TEST_CASE("cross entropy: matches high-precision direct formula") {
    std::mt19937_64 rng(22);
    std::uniform_int_distribution<int> cls(0, 3);
    for (int trial = 0; trial < 10; ++trial) {
        T64 x = random_tensor({5, 4}, rng, -8, 8);
        std::vector<int> y(5);
        for (auto& t : y) t = cls(rng);
        CrossEntropyConfig cfg;
        if (trial % 2) cfg.class_weights = {0.5, 1.5, 2.0, 0.25};
        const long double expected = direct_cross_entropy(x, y, cfg.class_weights);
        CHECK(std::abs(cross_entropy(x, y, cfg).item() - static_cast<double>(expected)) < 1e-9);
    }
}

TEST_CASE("cross entropy: gradient matches finite differences, loss non-negative") {
    std::mt19937_64 rng(23);
    T64 x = random_tensor({4, 4}, rng, -2, 2, true);
    std::vector<int> y{3, 0, 1, 1};
    CrossEntropyConfig cfg;
    cfg.class_weights = {1.0, 2.0, 0.5, 1.5};
    auto loss = [&] { return cross_entropy(x, y, cfg); };
    CHECK(check_gradient(x, loss).max_rel_err < 1e-6);
    const std::vector<int> three{0, 1, 2};
    for (int trial = 0; trial < 50; ++trial) CHECK(cross_entropy(random_tensor({3, 4}, rng, -20, 20), three).item() >= 0.0);
}

TEST_CASE("cross entropy: validation errors") {
    std::vector<int> bad{4};
    CHECK_THROWS_AS(cross_entropy(T64::zeros({1, 4}), bad), ValidationError);
    std::vector<int> neg{-1};
    CHECK_THROWS_AS(cross_entropy(T64::zeros({1, 4}), neg), ValidationError);
    std::vector<int> ok{0};
    CrossEntropyConfig zeros;
    zeros.class_weights = {0, 0, 0, 0};
    CHECK_THROWS_AS(cross_entropy(T64::zeros({1, 4}), ok, zeros), ValidationError);
}

TEST_CASE("inverse frequency weights") {
    std::vector<int> labels{0, 0, 0, 1, 2, 2};
    auto w = inverse_frequency_weights(labels, 4);
    CHECK(w[0] == doctest::Approx(6.0 / 12.0));
    CHECK(w[1] == doctest::Approx(6.0 / 4.0));
    CHECK(w[3] == 0.0);
}

TEST_CASE("SGD hand step") {
    T64 theta = T64::from({1}, {1.0}, true);
    OptimizerConfig cfg{OptimizerKind::SGD, 0.1, 0.0, 0.0};
    Optimizer<double> opt(cfg, Params{{"theta", theta}});
    backward(scale(theta, 2.0));  // g = 2
    opt.step();
    CHECK(theta[0] == doctest::Approx(0.8).epsilon(1e-15));
}

TEST_CASE("RMSProp hand step") {
    T64 theta = T64::from({1}, {0.5}, true);
    OptimizerConfig cfg{OptimizerKind::RMSProp, 0.01, 0.0, 0.0};
    Optimizer<double> opt(cfg, Params{{"theta", theta}});
    backward(scale(theta, 3.0));  // g = 3
    opt.step();
    // s = (1 - 0.99) * 9; step = lr * g / sqrt(s + eps)
    const double expected = 0.01 * 3.0 / std::sqrt(0.01 * 9.0 + 1e-8);
    CHECK(0.5 - theta[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("Adam first step moves by lr") {
    T64 theta = T64::from({1}, {0.5}, true);
    OptimizerConfig cfg{OptimizerKind::Adam, 0.01, 0.0, 0.0};
    Optimizer<double> opt(cfg, Params{{"theta", theta}});
    backward(scale(theta, -4.0));
    opt.step();
    CHECK(theta[0] - 0.5 == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("zero gradient without decay leaves parameters unchanged") {
    for (auto kind : {OptimizerKind::SGD, OptimizerKind::Adam, OptimizerKind::RMSProp}) {
        T64 theta = T64::from({2}, {0.3, -1.2}, true);
        Optimizer<double> opt({kind, 0.1, 0.9, 0.0}, Params{{"theta", theta}});
        backward(scale(sum(theta), 0.0));
        opt.step();
        CHECK(theta[0] == 0.3);
        CHECK(theta[1] == -1.2);
    }
}

TEST_CASE("weight decay shrinks the norm on zero-gradient SGD steps") {
    T64 theta = T64::from({3}, {1.0, -2.0, 0.5}, true);
    Optimizer<double> opt({OptimizerKind::SGD, 0.1, 0.9, 1e-2}, Params{{"theta", theta}});
    double norm = theta.data().norm();
    for (int i = 0; i < 20; ++i) {
        opt.zero_grad();
        backward(scale(sum(theta), 0.0));
        opt.step();
        CHECK(theta.data().norm() < norm);
        norm = theta.data().norm();
    }
}

TEST_CASE("non-finite gradient aborts the step") {
    T64 a = T64::from({1}, {1.0}, true), b = T64::from({1}, {2.0}, true);
    Optimizer<double> opt({OptimizerKind::SGD, 0.1, 0.0, 0.0}, Params{{"a", a}, {"b", b}});
    backward(add(a, scale(b, std::numeric_limits<double>::quiet_NaN())));
    CHECK_THROWS_AS(opt.step(), NumericError);
    CHECK(a[0] == 1.0);
}

TEST_CASE("property: all optimizers reach a small gradient on a convex quadratic") {
    // f(x, y) = 0.5 x^2 + y^2 starting from (1, -1.5)
    for (auto kind : {OptimizerKind::SGD, OptimizerKind::Adam, OptimizerKind::RMSProp}) {
        CAPTURE(to_string(kind));
        T64 theta = T64::from({2}, {1.0, -1.5}, true);
        T64 curvature = T64::from({2}, {0.5, 1.0});
        Optimizer<double> opt({kind, 0.01, 0.9, 0.0}, Params{{"theta", theta}});
        int reached = -1;
        for (int step = 0; step < 10000 && reached < 0; ++step) {
            opt.zero_grad();
            backward(sum(mul(curvature, mul(theta, theta))));
            if (theta.grad().norm() < 1e-6) reached = step;
            else opt.step();
        }
        CHECK(reached >= 0);
    }
}

TEST_CASE("step decay schedule") {
    StepDecay d{{250, 375, 438}, 0.1};
    CHECK(d.lr_at(0.1, 0) == 0.1);
    CHECK(d.lr_at(0.1, 250) == doctest::Approx(0.01));
    CHECK(d.lr_at(0.1, 440) == doctest::Approx(1e-4));
}
