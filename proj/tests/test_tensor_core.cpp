#include <doctest.h>

#include <cmath>
#include <omp.h>

#include "dgrd/kernels.hpp"
#include "dgrd/rng.hpp"
#include "dgrd/tensor.hpp"
#include "support/oracle.hpp"

using namespace dgrd;
namespace k = dgrd::kernels;

TEST_CASE("tensor shape and element count must agree") {
    CHECK(Tensor({2, 3}).size() == 6);
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 3}).reshaped({4, 2}), ShapeError);
    CHECK(Tensor({2, 3}, 1.5).reshaped({6}).shape() == Shape{6});
}

TEST_CASE("elementwise helpers") {
    Tensor a({3}, {1, 2, 3});
    Tensor b({3}, {1, 1, 1});
    add_scaled(a, 2.0, b);
    CHECK(a == Tensor({3}, {3, 4, 5}));
    CHECK(dot(a, b) == doctest::Approx(12));
    CHECK(squared_norm(b) == 3);
    CHECK(difference(a, b) == Tensor({3}, {2, 3, 4}));
    CHECK_THROWS_AS(dot(a, Tensor({2})), ShapeError);
    Tensor c({1}, {std::nan("")});
    CHECK_FALSE(c.all_finite());
}

TEST_CASE("rng streams are reproducible and children ignore draw position") {
    SeededRng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    SeededRng fresh(42);
    CHECK(a.child("x").next_u64() == fresh.child("x").next_u64());
    CHECK(fresh.child("x").next_u64() != fresh.child("y").next_u64());
    CHECK(fresh.child(std::uint64_t{1}).next_u64() != fresh.child(std::uint64_t{2}).next_u64());

    SeededRng u(7);
    for (int i = 0; i < 1000; ++i) {
        const double v = u.uniform();
        CHECK((v >= 0.0 && v < 1.0));
        CHECK(u.below(7) < 7);
    }
    std::vector<int> items{0, 1, 2, 3, 4, 5, 6, 7};
    SeededRng s(3);
    shuffle(items, s);
    std::vector<int> sorted = items;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
}

TEST_CASE("conv2d identity kernel and shape arithmetic") {
    SeededRng rng(1);
    const Tensor x = oracle::uniform_tensor({5, 4, 1}, rng);
    const Tensor one({1, 1, 1, 1}, 1.0);
    CHECK(k::conv2d(x, one, Tensor({1})) == x);

    CHECK(k::conv2d_output_shape({28, 28, 1}, {3, 3, 1, 32}) == Shape{26, 26, 32});
    const auto err = [&] {
        try {
            k::conv2d(Tensor({6, 6, 2}), Tensor({3, 3, 3, 4}), Tensor({4}));
        } catch (const ShapeError& e) {
            return e.axis();
        }
        return std::string{};
    }();
    CHECK(err == "channels");
    CHECK_THROWS_AS(k::conv2d(Tensor({2, 2, 1}), Tensor({3, 3, 1, 1}), Tensor({1})), ShapeError);
    CHECK_THROWS_AS(k::conv2d(Tensor({4, 4, 1}), Tensor({3, 3, 1, 2}), Tensor({3})), ShapeError);
}

TEST_CASE("dense forward examples") {
    const Tensor w({2, 2}, {1, 2, 3, 4});
    CHECK(k::dense(Tensor({2}, {1, 1}), w, Tensor({2}, {1, 1})) == Tensor({2}, {4, 8}));
    const Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const Tensor x({3}, {0.2, -0.7, 5});
    CHECK(k::dense(x, eye, Tensor({3})) == x);
    try {
        k::dense(Tensor({4}), w, Tensor({2}));
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(e.axis() == "input length");
        CHECK(e.expected() == 2);
        CHECK(e.actual() == 4);
    }
}

TEST_CASE("relu, maxpool and clip examples") {
    CHECK(k::relu(Tensor({3}, {-1, 0, 2})) == Tensor({3}, {0, 0, 2}));
    const Tensor neg({3}, {-1, -2, -3});
    CHECK(k::relu(neg) == Tensor({3}));
    CHECK(k::relu_backward(neg, Tensor({3}, 1.0)) == Tensor({3}));

    const Tensor window({2, 2, 1}, {1, 2, 3, 4});
    CHECK(k::maxpool2(window) == Tensor({1, 1, 1}, {4}));
    CHECK(k::maxpool2_backward(window, Tensor({1, 1, 1}, {1})) == Tensor({2, 2, 1}, {0, 0, 0, 1}));
    CHECK(k::maxpool2(Tensor({4, 4, 2}, 0.3)) == Tensor({2, 2, 2}, 0.3));
    // Ties go to the first cell in scan order.
    CHECK(k::maxpool2_backward(Tensor({2, 2, 1}, 0.5), Tensor({1, 1, 1}, {1})) == Tensor({2, 2, 1}, {1, 0, 0, 0}));
    CHECK_THROWS_AS(k::maxpool2(Tensor({3, 4, 1})), ShapeError);

    const Tensor c = k::clip01(Tensor({3}, {-0.1, 0.5, 1.2}));
    CHECK(c == Tensor({3}, {0, 0.5, 1}));
    CHECK(k::clip01(c) == c);
}

TEST_CASE("softmax is normalised, shift invariant and stable") {
    const Tensor uniform = k::softmax(Tensor({4}, 3.0));
    for (double p : uniform.data()) CHECK(p == doctest::Approx(0.25));

    SeededRng rng(5);
    for (int i = 0; i < 50; ++i) {
        Tensor z = oracle::uniform_tensor({10}, rng, -20, 20);
        const Tensor p = k::softmax(z);
        double sum = 0;
        for (double v : p.data()) sum += v;
        CHECK(std::abs(sum - 1.0) < 1e-9);
        Tensor shifted = z;
        for (auto& v : shifted.data()) v += 123.0;
        CHECK(oracle::relative_error(k::softmax(shifted), p) < 1e-12);
        CHECK(k::argmax(shifted) == k::argmax(z));
    }
    const auto big = k::softmax_xent(Tensor({3}, {1000, 0, -1000}), 0);
    CHECK(std::isfinite(big.loss));
    CHECK(big.probs.all_finite());
    CHECK(k::argmax(Tensor({3}, {1, 1, 0})) == 0);
}

TEST_CASE("bernoulli mask contract") {
    SeededRng rng(9);
    CHECK(k::bernoulli_mask({10}, 1.0, rng) == Tensor({10}, 1.0));
    CHECK_THROWS_AS(k::bernoulli_mask({3}, 0.0, rng), std::invalid_argument);
    CHECK_THROWS_AS(k::bernoulli_mask({3}, 1.5, rng), std::invalid_argument);

    SeededRng a(11), b(11);
    CHECK(k::bernoulli_mask({64}, 0.5, a) == k::bernoulli_mask({64}, 0.5, b));

    SeededRng big(13);
    const std::size_t n = 100000;
    const Tensor m = k::bernoulli_mask({n}, 0.5, big);
    double mean = 0;
    for (double v : m.data()) mean += v;
    mean /= static_cast<double>(n);
    CHECK(std::abs(mean - 0.5) < 3.0 * std::sqrt(0.25 / static_cast<double>(n)));
}

TEST_CASE("layer gradients agree with central finite differences") {
    for (const auto& c : oracle::gradient_oracle_suite(20, 2024)) {
        INFO(c.name << " max relative error " << c.max_error);
        CHECK(c.instances == 20);
        CHECK(c.max_error < (c.name == "softmax_xent" ? 1e-5 : 1e-4));
    }
}

TEST_CASE("parallel kernels match the serial references") {
    SeededRng rng(21);
    const Tensor x = oracle::uniform_tensor({20, 20, 8}, rng);
    const Tensor w = oracle::uniform_tensor({3, 3, 8, 16}, rng);
    const Tensor b = oracle::uniform_tensor({16}, rng);
    const Tensor g = oracle::uniform_tensor({18, 18, 16}, rng);
    const Tensor dx = oracle::uniform_tensor({300}, rng);
    const Tensor dw = oracle::uniform_tensor({40, 300}, rng);
    const Tensor db = oracle::uniform_tensor({40}, rng);
    const Tensor dg = oracle::uniform_tensor({40}, rng);
    const Tensor px = oracle::distinct_values({16, 16, 4}, rng);
    const Tensor pg = oracle::uniform_tensor({8, 8, 4}, rng);

    CHECK(oracle::relative_error(k::conv2d(x, w, b), k::serial::conv2d(x, w, b)) < 1e-12);
    const auto cp = k::conv2d_backward(x, w, g, k::GradScope::InputAndParams);
    const auto cs = k::serial::conv2d_backward(x, w, g, k::GradScope::InputAndParams);
    CHECK(oracle::relative_error(cp.input, cs.input) < 1e-12);
    CHECK(oracle::relative_error(cp.kernels, cs.kernels) < 1e-12);
    CHECK(oracle::relative_error(cp.bias, cs.bias) < 1e-12);
    CHECK(oracle::relative_error(k::dense(dx, dw, db), k::serial::dense(dx, dw, db)) < 1e-12);
    const auto dp = k::dense_backward(dx, dw, dg, k::GradScope::InputAndParams);
    const auto ds = k::serial::dense_backward(dx, dw, dg, k::GradScope::InputAndParams);
    CHECK(oracle::relative_error(dp.input, ds.input) < 1e-12);
    CHECK(oracle::relative_error(dp.weights, ds.weights) < 1e-12);
    CHECK(k::maxpool2(px) == k::serial::maxpool2(px));
    CHECK(k::maxpool2_backward(px, pg) == k::serial::maxpool2_backward(px, pg));

    // Results do not depend on the thread count.
    const int before = omp_get_max_threads();
    omp_set_num_threads(1);
    const Tensor one = k::conv2d(x, w, b);
    const auto one_back = k::conv2d_backward(x, w, g, k::GradScope::InputAndParams);
    omp_set_num_threads(4);
    CHECK(k::conv2d(x, w, b) == one);
    CHECK(k::conv2d_backward(x, w, g, k::GradScope::InputAndParams).kernels == one_back.kernels);
    omp_set_num_threads(before);
}
