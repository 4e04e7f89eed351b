#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include <emgttl/tensor.hpp>
#include <emgttl/verify.hpp>

using namespace emgttl;
using ad::Tensor;
using ad::Tape;
using Catch::Approx;

using FT = Tensor<float>;
using DT = Tensor<double>;

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

TEST_CASE("matmul by identity returns the input") {
    FT a = FT::from({2, 3}, {1, 2, 3, 4, 5, 6});
    FT eye = FT::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    FT c = ad::matmul(a, eye);
    for (size_t i = 0; i < a.size(); ++i) CHECK((*c.data)[i] == (*a.data)[i]);
}

TEST_CASE("matmul hand-computed product") {
    FT a = FT::from({2, 2}, {1, 2, 3, 4});
    FT b = FT::from({2, 1}, {5, 6});
    FT c = ad::matmul(a, b);
    CHECK((*c.data)[0] == 17.0f);
    CHECK((*c.data)[1] == 39.0f);
}

TEST_CASE("matmul gradient of sum(A*B) wrt A is ones * B^T") {
    Tape<double> tape;
    DT a = tape.leaf(DT::from({2, 3}, {0.4, -1.2, 2.0, 0.7, 0.1, -0.5}));
    DT b = DT::from({3, 2}, {1, 2, 3, 4, 5, 6});
    ad::Tensor<double> loss = ad::sum(ad::matmul(a, b));
    tape.backward(loss);
    const auto& g = tape.grad(a.node);
    // dA = ones(2x2) * B^T: column j of dA carries the row sum of B's row j
    for (int r = 0; r < 2; ++r) {
        CHECK(g[static_cast<size_t>(r) * 3 + 0] == Approx(1 + 2));
        CHECK(g[static_cast<size_t>(r) * 3 + 1] == Approx(3 + 4));
        CHECK(g[static_cast<size_t>(r) * 3 + 2] == Approx(5 + 6));
    }
}

TEST_CASE("matmul rejects mismatched shapes with both named") {
    FT a = FT::zeros({2, 3});
    FT b = FT::zeros({4, 2});
    CHECK_THROWS_AS(ad::matmul(a, b), ShapeError);
    try {
        ad::matmul(a, b);
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[4x2]") != std::string::npos);
    }
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

TEST_CASE("softmax of equal logits is uniform") {
    DT x = DT::from({1, 4}, {3.3, 3.3, 3.3, 3.3});
    DT y = ad::softmax(x);
    for (size_t i = 0; i < 4; ++i) CHECK((*y.data)[i] == Approx(0.25).epsilon(1e-12));
}

TEST_CASE("softmax closed form for [0, ln 3]") {
    DT x = DT::from({1, 2}, {0.0, std::log(3.0)});
    DT y = ad::softmax(x);
    CHECK((*y.data)[0] == Approx(0.25).epsilon(1e-12));
    CHECK((*y.data)[1] == Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax is shift invariant (large-shift stability)") {
    DT x = DT::from({1, 3}, {0.1, -0.7, 1.9});
    DT xs = DT::from({1, 3}, {0.1 + 1000.0, -0.7 + 1000.0, 1.9 + 1000.0});
    DT y = ad::softmax(x);
    DT ys = ad::softmax(xs);
    for (size_t i = 0; i < 3; ++i) CHECK((*ys.data)[i] == Approx((*y.data)[i]).epsilon(1e-9));
}

TEST_CASE("softmax rows sum to one and lie in (0,1)") {
    Rng rng(42);
    DT x = DT::zeros({6, 9});
    for (auto& v : *x.data) v = rng.normal(0.0, 3.0);
    DT y = ad::softmax(x);
    for (size_t r = 0; r < 6; ++r) {
        double s = 0.0;
        for (size_t j = 0; j < 9; ++j) {
            double v = (*y.data)[r * 9 + j];
            REQUIRE(v > 0.0);
            REQUIRE(v < 1.0);
            s += v;
        }
        REQUIRE(s == Approx(1.0).margin(1e-6));
    }
}

// ---------------------------------------------------------------------------
// layer_norm
// ---------------------------------------------------------------------------

TEST_CASE("layer_norm of a constant vector is zero") {
    DT x = DT::from({1, 4}, {5.0, 5.0, 5.0, 5.0});
    DT g = DT::from({4}, {1, 1, 1, 1});
    DT b = DT::from({4}, {0, 0, 0, 0});
    DT y = ad::layer_norm(x, g, b);
    for (size_t i = 0; i < 4; ++i) CHECK(std::fabs((*y.data)[i]) < 1e-10);
}

TEST_CASE("layer_norm of [1, 3] gives [-1, 1] up to eps") {
    DT x = DT::from({1, 2}, {1.0, 3.0});
    DT g = DT::from({2}, {1, 1});
    DT b = DT::from({2}, {0, 0});
    DT y = ad::layer_norm(x, g, b);
    CHECK((*y.data)[0] == Approx(-1.0).margin(1e-4));
    CHECK((*y.data)[1] == Approx(1.0).margin(1e-4));
}

TEST_CASE("layer_norm output has mean 0 and variance 1 pre-affine") {
    Rng rng(9);
    size_t rows = 5, d = 16;
    DT x = DT::zeros({rows, d});
    for (auto& v : *x.data) v = rng.normal(0.0, 2.5);
    DT g = DT::from({d}, std::vector<double>(d, 1.0));
    DT b = DT::from({d}, std::vector<double>(d, 0.0));
    DT y = ad::layer_norm(x, g, b);
    for (size_t r = 0; r < rows; ++r) {
        double mu = 0.0, var = 0.0;
        for (size_t j = 0; j < d; ++j) mu += (*y.data)[r * d + j];
        mu /= static_cast<double>(d);
        for (size_t j = 0; j < d; ++j) {
            double c = (*y.data)[r * d + j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        REQUIRE(std::fabs(mu) < 1e-6);
        REQUIRE(var == Approx(1.0).margin(1e-4));
    }
}

// ---------------------------------------------------------------------------
// gelu / dropout
// ---------------------------------------------------------------------------

TEST_CASE("gelu point values") {
    DT x = DT::from({3}, {0.0, 10.0, 1.0});
    DT y = ad::gelu(x);
    CHECK((*y.data)[0] == 0.0);
    CHECK((*y.data)[1] == Approx(10.0).margin(1e-6));
    CHECK((*y.data)[2] == Approx(0.8413447460685429).epsilon(1e-10));  // 1 * Phi(1)
}

TEST_CASE("dropout with p = 0 or inference mode is the identity") {
    Rng rng(4);
    FT x = FT::zeros({50});
    for (auto& v : *x.data) v = static_cast<float>(rng.normal());
    FT y0 = ad::dropout(x, 0.0, true, 1);
    FT yi = ad::dropout(x, 0.9, false, 1);
    for (size_t i = 0; i < x.size(); ++i) {
        CHECK((*y0.data)[i] == (*x.data)[i]);
        CHECK((*yi.data)[i] == (*x.data)[i]);
    }
}

TEST_CASE("dropout keeps the mean within 3 sigma at p = 0.5") {
    size_t n = 100000;
    DT x = DT::from({n}, std::vector<double>(n, 1.0));
    DT y = ad::dropout(x, 0.5, true, 77);
    double mean = 0.0;
    for (double v : *y.data) mean += v;
    mean /= static_cast<double>(n);
    // each element is 0 or 2 with probability 1/2: sd of the mean = 1/sqrt(n)
    double sigma = 1.0 / std::sqrt(static_cast<double>(n));
    CHECK(std::fabs(mean - 1.0) < 3.0 * sigma);
}

TEST_CASE("dropout is deterministic in the seed and validates p") {
    FT x = FT::from({8}, {1, 2, 3, 4, 5, 6, 7, 8});
    FT a = ad::dropout(x, 0.4, true, 123);
    FT b = ad::dropout(x, 0.4, true, 123);
    CHECK(*a.data == *b.data);
    CHECK_THROWS_AS(ad::dropout(x, 1.0, true, 1), ConfigError);
    CHECK_THROWS_AS(ad::dropout(x, -0.1, true, 1), ConfigError);
}

// ---------------------------------------------------------------------------
// cross_entropy
// ---------------------------------------------------------------------------

TEST_CASE("cross-entropy of uniform logits is ln K") {
    size_t k = 22;
    DT logits = DT::zeros({3, k});
    DT loss = ad::cross_entropy(logits, {0, 7, 21});
    CHECK(loss.item() == Approx(std::log(22.0)).epsilon(1e-12));
    CHECK(std::log(22.0) == Approx(3.0910424533583161).epsilon(1e-12));
}

TEST_CASE("cross-entropy saturates for confidently correct logits") {
    DT logits = DT::zeros({1, 5});
    (*logits.data)[2] = 30.0;
    DT loss = ad::cross_entropy(logits, {2});
    CHECK(loss.item() < 1e-9);
}

TEST_CASE("cross-entropy rejects out-of-range labels") {
    DT logits = DT::zeros({2, 4});
    CHECK_THROWS_AS(ad::cross_entropy(logits, {0, 4}), DataError);
    CHECK_THROWS_AS(ad::cross_entropy(logits, {-1, 0}), DataError);
}

// ---------------------------------------------------------------------------
// backward mechanics
// ---------------------------------------------------------------------------

TEST_CASE("grad of sum(w) is ones") {
    Tape<double> tape;
    DT w = tape.leaf(DT::from({4}, {0.3, -1.0, 2.0, 7.0}));
    tape.backward(ad::sum(w));
    for (double g : tape.grad(w.node)) CHECK(g == 1.0);
}

TEST_CASE("grad of sum(w . w) is 2w") {
    Tape<double> tape;
    DT w = tape.leaf(DT::from({3}, {1.0, 2.0, 3.0}));
    tape.backward(ad::sum(ad::mul(w, w)));
    const auto& g = tape.grad(w.node);
    CHECK(g[0] == Approx(2.0));
    CHECK(g[1] == Approx(4.0));
    CHECK(g[2] == Approx(6.0));
}

TEST_CASE("two consumers accumulate the sum of both path gradients") {
    // loss = sum(3x) + sum(x . x): dx = 3 + 2x
    Tape<double> tape;
    DT x = tape.leaf(DT::from({3}, {1.0, -2.0, 0.5}));
    DT path1 = ad::scale(x, 3.0);
    DT path2 = ad::mul(x, x);
    tape.backward(ad::sum(ad::add(path1, path2)));
    const auto& g = tape.grad(x.node);
    CHECK(g[0] == Approx(3.0 + 2.0));
    CHECK(g[1] == Approx(3.0 - 4.0));
    CHECK(g[2] == Approx(3.0 + 1.0));
}

TEST_CASE("backward demands a scalar tape-connected loss") {
    Tape<double> tape;
    DT w = tape.leaf(DT::from({2}, {1.0, 2.0}));
    DT not_scalar = ad::scale(w, 2.0);
    CHECK_THROWS_AS(tape.backward(not_scalar), UsageError);
    DT untracked = DT::scalar(1.0);
    CHECK_THROWS_AS(tape.backward(untracked), UsageError);
}

TEST_CASE("operands from different tapes are rejected") {
    Tape<double> t1, t2;
    DT a = t1.leaf(DT::from({2}, {1, 2}));
    DT b = t2.leaf(DT::from({2}, {3, 4}));
    CHECK_THROWS_AS(ad::add(a, b), UsageError);
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

TEST_CASE("concat along axis 0 and round-trip with slice") {
    FT a = FT::from({2, 3}, {1, 2, 3, 4, 5, 6});
    FT b = FT::from({1, 3}, {7, 8, 9});
    FT c = ad::concat(a, b, 0);
    REQUIRE(c.shape == ad::Shape{3, 3});
    CHECK((*c.data)[6] == 7.0f);

    FT back_a = ad::slice(c, 0, 0, 2);
    FT back_b = ad::slice(c, 0, 2, 1);
    CHECK(*back_a.data == *a.data);
    CHECK(*back_b.data == *b.data);
}

TEST_CASE("transpose twice is the identity") {
    Rng rng(3);
    FT a = FT::zeros({2, 3, 4});
    for (auto& v : *a.data) v = static_cast<float>(rng.normal());
    FT t = ad::transpose(ad::transpose(a, 1, 2), 1, 2);
    CHECK(*t.data == *a.data);
    CHECK(t.shape == a.shape);
}

TEST_CASE("transpose permutes values correctly") {
    FT a = FT::from({2, 3}, {1, 2, 3, 4, 5, 6});
    FT t = ad::transpose(a, 0, 1);
    REQUIRE(t.shape == ad::Shape{3, 2});
    CHECK((*t.data) == std::vector<float>{1, 4, 2, 5, 3, 6});
}

TEST_CASE("reshape preserves data and validates element count") {
    FT a = FT::from({2, 3}, {1, 2, 3, 4, 5, 6});
    FT r = ad::reshape(a, {3, 2});
    CHECK(*r.data == *a.data);
    CHECK_THROWS_AS(ad::reshape(a, {4, 2}), ShapeError);
}

TEST_CASE("expand_leading replicates and its backward sums") {
    Tape<double> tape;
    DT a = tape.leaf(DT::from({2}, {1.5, -0.5}));
    DT e = ad::expand_leading(a, 3);
    REQUIRE(e.shape == ad::Shape{3, 2});
    for (size_t i = 0; i < 3; ++i) {
        CHECK((*e.data)[i * 2 + 0] == 1.5);
        CHECK((*e.data)[i * 2 + 1] == -0.5);
    }
    tape.backward(ad::sum(e));
    CHECK(tape.grad(a.node)[0] == Approx(3.0));
    CHECK(tape.grad(a.node)[1] == Approx(3.0));
}

TEST_CASE("identical inputs give bit-identical outputs in both precisions") {
    auto run = [](auto tag) {
        using T = decltype(tag);
        Rng rng(88);
        Tensor<T> x = Tensor<T>::zeros({4, 8});
        for (auto& v : *x.data) v = static_cast<T>(rng.normal());
        Tensor<T> w = Tensor<T>::zeros({8, 3});
        for (auto& v : *w.data) v = static_cast<T>(rng.normal());
        return ad::softmax(ad::gelu(ad::matmul(x, w)));
    };
    auto a32 = run(float{});
    auto b32 = run(float{});
    CHECK(*a32.data == *b32.data);
    auto a64 = run(double{});
    auto b64 = run(double{});
    CHECK(*a64.data == *b64.data);
}

// The per-op finite-difference suite doubles as the library's verification
// surface; keep it green from the test side as well.
TEST_CASE("gradcheck suite passes at 64-bit") {
    auto results = verify::gradcheck_suite();
    for (const auto& r : results) {
        INFO(r.name << ": " << r.detail);
        CHECK(r.pass);
    }
}
