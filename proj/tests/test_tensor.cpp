#include "doctest.h"

#include <cmath>
#include <vector>

#include "capcore/ops.hpp"
#include "capcore/tensor.hpp"

using namespace capcore;

namespace {

// Straight-line triple loop, the reference for matmul values.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                 int m, int k, int n) {
    std::vector<double> c(static_cast<size_t>(m * n), 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            for (int p = 0; p < k; ++p)
                c[static_cast<size_t>(i * n + j)] +=
                    a[static_cast<size_t>(i * k + p)] * b[static_cast<size_t>(p * n + j)];
    return c;
}

} // namespace

TEST_CASE("tensor construction and invariants") {
    Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t(1, 2) == 6);
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor::zeros({0, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor::from_data({2}, {1, 2}).item(), ShapeError);
}

TEST_CASE("matmul: identity, zero annihilator, reference oracle") {
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor prod = matmul(eye, a);
    CHECK(prod.data() == a.data());

    Tensor zero = Tensor::zeros({2, 2});
    Tensor z = matmul(zero, a);
    for (double v : z.data()) CHECK(v == 0.0);

    Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    Tensor c = matmul(a, b);
    auto expect = naive_matmul(a.data(), b.data(), 2, 2, 2);
    CHECK(c.data() == expect);
    CHECK(c(0, 0) == 19);
    CHECK(c(0, 1) == 22);
    CHECK(c(1, 0) == 43);
    CHECK(c(1, 1) == 50);
}

TEST_CASE("matmul rejects mismatched shapes with both shapes in the message") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({2, 2});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[2x2]") != std::string::npos);
    }
}

TEST_CASE("softmax examples and axis handling") {
    Tensor sym = softmax(Tensor::from_data({2}, {0, 0}), 0);
    CHECK(sym(0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(sym(1) == doctest::Approx(0.5).epsilon(1e-15));

    Tensor one = softmax(Tensor::from_data({1}, {5}), 0);
    CHECK(one(0) == doctest::Approx(1.0).epsilon(1e-15));

    // High-precision oracle: long double exp/sum.
    const std::vector<double> in = {1, 2, 3};
    long double s = 0.0L;
    std::vector<long double> e(3);
    for (int i = 0; i < 3; ++i) {
        e[static_cast<size_t>(i)] = expl(static_cast<long double>(in[static_cast<size_t>(i)]) - 3.0L);
        s += e[static_cast<size_t>(i)];
    }
    Tensor y = softmax(Tensor::from_data({3}, in), 0);
    for (int i = 0; i < 3; ++i) {
        CHECK(y(i) == doctest::Approx(static_cast<double>(e[static_cast<size_t>(i)] / s)).epsilon(1e-14));
    }
    CHECK(y(0) == doctest::Approx(0.09003057).epsilon(1e-7));
    CHECK(y(1) == doctest::Approx(0.24472847).epsilon(1e-7));
    CHECK(y(2) == doctest::Approx(0.66524096).epsilon(1e-7));

    CHECK_THROWS_AS(softmax(Tensor::zeros({2, 2}), 2), ShapeError);
}

TEST_CASE("softmax rows sum to one and are non-negative") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = Tensor::randn({4, 6}, rng, 3.0);
        Tensor y = softmax(x, 1);
        for (int i = 0; i < 4; ++i) {
            double s = 0.0;
            for (int j = 0; j < 6; ++j) {
                CHECK(y(i, j) >= 0.0);
                s += y(i, j);
            }
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("softmax shift invariance is exact when sums are exact") {
    // Values on a 2^-20 grid with bounded magnitude add exactly in binary64,
    // so max-subtraction sees bit-identical differences.
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> base(8);
        for (double& v : base) {
            v = static_cast<double>(static_cast<int64_t>(rng.uniform_int(16u << 20)) - (8 << 20)) * 0x1.0p-20;
        }
        const double c = static_cast<double>(static_cast<int64_t>(rng.uniform_int(16u << 20)) - (8 << 20)) * 0x1.0p-20;
        std::vector<double> shifted = base;
        for (double& v : shifted) v += c;
        Tensor y0 = softmax(Tensor::from_data({8}, base), 0);
        Tensor y1 = softmax(Tensor::from_data({8}, shifted), 0);
        CHECK(y0.data() == y1.data());
    }
}

TEST_CASE("layer_norm examples") {
    Tensor gain = Tensor::from_data({3}, {1, 1, 1});
    Tensor bias = Tensor::zeros({3});

    Tensor flat = layer_norm(Tensor::from_data({1, 3}, {2, 2, 2}), gain, bias, 1e-5);
    for (double v : flat.data()) CHECK(v == 0.0);

    Tensor g2 = Tensor::from_data({2}, {1, 1});
    Tensor b2 = Tensor::zeros({2});
    Tensor pair = layer_norm(Tensor::from_data({1, 2}, {1, -1}), g2, b2, 1e-12);
    CHECK(pair(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(pair(0, 1) == doctest::Approx(-1.0).epsilon(1e-9));

    // Direct mean/variance oracle for x = [1,2,3].
    const double mean = 2.0, var = 2.0 / 3.0;
    Tensor y = layer_norm(Tensor::from_data({1, 3}, {1, 2, 3}), gain, bias, 1e-12);
    for (int j = 0; j < 3; ++j) {
        const double expect = (static_cast<double>(j + 1) - mean) / std::sqrt(var + 1e-12);
        CHECK(y(0, j) == doctest::Approx(expect).epsilon(1e-12));
    }
    CHECK(y(0, 0) == doctest::Approx(-1.22474487).epsilon(1e-8));
    CHECK(y(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(y(0, 2) == doctest::Approx(1.22474487).epsilon(1e-8));

    CHECK_THROWS_AS(layer_norm(Tensor::zeros({1, 3}), gain, bias, 0.0), NumericError);
    CHECK_THROWS_AS(layer_norm(Tensor::zeros({1, 3}), gain, bias, -1.0), NumericError);
}

TEST_CASE("conv2d examples") {
    // 1x1 unit kernel is the identity map.
    Tensor x = Tensor::from_data({1, 2, 2}, {1, 2, 3, 4});
    Tensor unit = Tensor::from_data({1, 1, 1, 1}, {1});
    Tensor y = conv2d(x, unit, 1, 0);
    CHECK(y.data() == x.data());

    Tensor zk = Tensor::zeros({2, 1, 3, 3});
    Tensor z = conv2d(x, zk, 1, 1);
    for (double v : z.data()) CHECK(v == 0.0);

    // Direct summation oracle: all-ones 3x3 against all-ones 3x3.
    Tensor ones = Tensor::full({1, 3, 3}, 1.0);
    Tensor k9 = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor nine = conv2d(ones, k9, 1, 0);
    CHECK(nine.shape() == Shape{1, 1, 1});
    CHECK(nine.item() == 9.0);

    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 1, 4, 4}), 1, 0), ShapeError);
}

TEST_CASE("global_avg_pool examples") {
    Tensor c = Tensor::full({3, 2, 2}, 2.5);
    Tensor y = global_avg_pool(c);
    for (double v : y.data()) CHECK(v == 2.5);

    // Arithmetic-mean oracle.
    Tensor one = global_avg_pool(Tensor::from_data({1, 2, 2}, {1, 3, 5, 7}));
    CHECK(one.item() == doctest::Approx((1.0 + 3 + 5 + 7) / 4.0).epsilon(1e-15));
    CHECK(one.item() == 4.0);

    Tensor z = global_avg_pool(Tensor::zeros({2, 3, 3}));
    for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("forward ops reject non-finite results") {
    Tensor big = Tensor::full({2}, 1e308);
    CHECK_THROWS_AS(add(big, big), NumericError);
    CHECK_THROWS_AS(mul(big, big), NumericError);
}

TEST_CASE("narrow activation rounding rounds through binary32") {
    set_narrow_activations(true);
    Tensor a = Tensor::from_data({1}, {0.1});
    Tensor b = Tensor::from_data({1}, {0.2});
    Tensor c = add(a, b);
    set_narrow_activations(false);
    CHECK(c.item() == static_cast<double>(static_cast<float>(0.1 + 0.2)));
    Tensor wide = add(a, b);
    CHECK(wide.item() == 0.1 + 0.2);
}

TEST_CASE("matmul associativity and distributivity within tolerance") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = Tensor::randn({8, 8}, rng);
        Tensor b = Tensor::randn({8, 8}, rng);
        Tensor c = Tensor::randn({8, 8}, rng);
        Tensor left = matmul(matmul(a, b), c);
        Tensor right = matmul(a, matmul(b, c));
        for (int64_t i = 0; i < left.numel(); ++i) {
            CHECK(left.data()[static_cast<size_t>(i)] ==
                  doctest::Approx(right.data()[static_cast<size_t>(i)]).epsilon(1e-9));
        }
        Tensor dist_l = matmul(a, add(b, c));
        Tensor dist_r = add(matmul(a, b), matmul(a, c));
        for (int64_t i = 0; i < dist_l.numel(); ++i) {
            CHECK(dist_l.data()[static_cast<size_t>(i)] ==
                  doctest::Approx(dist_r.data()[static_cast<size_t>(i)]).epsilon(1e-9));
        }
    }
}

TEST_CASE("forward results are run-to-run deterministic") {
    auto run = [] {
        Rng rng(123);
        Tensor a = Tensor::randn({16, 16}, rng);
        Tensor b = Tensor::randn({16, 16}, rng);
        return matmul(softmax(a, 1), gelu(b));
    };
    Tensor first = run();
    Tensor second = run();
    CHECK(first.data() == second.data());
}

TEST_CASE("masked softmax zeroes forbidden entries and errors on empty rows") {
    Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    std::vector<uint8_t> allow = {1, 0, 1, 1, 1, 1};
    Tensor y = masked_softmax_rows(x, allow);
    CHECK(y(0, 1) == 0.0);
    CHECK(y(0, 0) + y(0, 2) == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<uint8_t> empty_row = {0, 0, 0, 1, 1, 1};
    CHECK_THROWS_AS(masked_softmax_rows(x, empty_row), NumericError);
}

TEST_CASE("rng determinism and state round trip") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng c(7);
    c.normal();
    std::string snap = c.state();
    std::vector<double> ahead;
    for (int i = 0; i < 10; ++i) ahead.push_back(c.normal());
    Rng d(0);
    d.set_state(snap);
    for (int i = 0; i < 10; ++i) CHECK(d.normal() == ahead[static_cast<size_t>(i)]);
}
