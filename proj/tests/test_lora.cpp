#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "lexsum/lora.hpp"
#include "lexsum/rng.hpp"

using namespace lexsum;

namespace {

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

std::vector<double> random_vector(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

double half_squared_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return 0.5 * s;
}

double rel_err(double got, double want) {
    const double denom = std::max(std::abs(got) + std::abs(want), 1e-8);
    return std::abs(got - want) / denom;
}

}  // namespace

TEST_CASE("fresh adapter forwards exactly like the base weight") {
    Rng rng(100);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t d = 2 + rng.below(10);
        const std::size_t k = 2 + rng.below(10);
        const std::size_t r = 1 + rng.below(std::min(d, k));
        const auto adapter =
            init_adapter(random_matrix(rng, d, k), r, 32.0, 7 + trial);
        const auto x = random_vector(rng, k);
        const auto h = forward(adapter, x);
        const auto base = matvec(adapter.W0, x);
        REQUIRE(h.size() == d);
        for (std::size_t i = 0; i < d; ++i) {
            CHECK(h[i] == base[i]);
        }
    }
}

TEST_CASE("initialization is deterministic under a fixed seed") {
    Rng rng(3);
    const Matrix w0 = random_matrix(rng, 6, 5);
    const auto a1 = init_adapter(w0, 2, 32.0, 999);
    const auto a2 = init_adapter(w0, 2, 32.0, 999);
    const auto a3 = init_adapter(w0, 2, 32.0, 1000);
    for (std::size_t i = 0; i < a1.A.size(); ++i) {
        CHECK(a1.A.data()[i] == a2.A.data()[i]);
    }
    bool any_diff = false;
    for (std::size_t i = 0; i < a1.A.size(); ++i) {
        if (a1.A.data()[i] != a3.A.data()[i]) any_diff = true;
    }
    CHECK(any_diff);
    for (std::size_t i = 0; i < a1.B.size(); ++i) {
        CHECK(a1.B.data()[i] == 0.0);
    }
}

TEST_CASE("invalid ranks and shapes are rejected") {
    Rng rng(4);
    const Matrix w0 = random_matrix(rng, 4, 6);
    CHECK_THROWS_AS(init_adapter(w0, 0, 32.0, 1), DimensionError);
    CHECK_THROWS_AS(init_adapter(w0, 5, 32.0, 1), DimensionError);
    CHECK_THROWS_AS(init_adapter(w0, 2, 0.0, 1), ConfigError);
    const auto adapter = init_adapter(w0, 2, 32.0, 1);
    CHECK_THROWS_AS(forward(adapter, std::vector<double>(5)), DimensionError);
    CHECK_THROWS_AS(backward(adapter, std::vector<double>(6), std::vector<double>(3)),
                    DimensionError);
    CHECK_THROWS_AS(backward(adapter, std::vector<double>(2), std::vector<double>(4)),
                    DimensionError);
}

TEST_CASE("embedded identity factors add the input back") {
    const std::size_t d = 4, k = 4, r = 2;
    Rng rng(5);
    auto adapter = init_adapter(random_matrix(rng, d, k), r, static_cast<double>(r), 1);
    adapter.A.fill(0.0);
    adapter.B.fill(0.0);
    for (std::size_t i = 0; i < r; ++i) {
        adapter.A(i, i) = 1.0;
        adapter.B(i, i) = 1.0;
    }
    std::vector<double> e1(k, 0.0);
    e1[0] = 1.0;
    const auto h = forward(adapter, e1);
    const auto base = matvec(adapter.W0, e1);
    CHECK(h[0] == Catch::Approx(base[0] + 1.0).epsilon(1e-12));
    for (std::size_t i = 1; i < d; ++i) {
        CHECK(h[i] == Catch::Approx(base[i]).margin(1e-12));
    }
}

TEST_CASE("trainable parameter count is rank times the dimension sum") {
    Rng rng(6);
    const auto a = init_adapter(random_matrix(rng, 8, 8), 2, 32.0, 1);
    CHECK(trainable_param_count(a) == 32);
    const auto b = init_adapter(random_matrix(rng, 2, 3), 1, 32.0, 1);
    CHECK(trainable_param_count(b) == 5);
    const auto c = init_adapter(Matrix(1024, 1024, 0.0), 16, 32.0, 1);
    CHECK(trainable_param_count(c) == 32768);
    // low-rank economy on square matrices of size >= 33 at rank 16
    const auto e = init_adapter(Matrix(33, 33, 0.0), 16, 32.0, 1);
    CHECK(trainable_param_count(e) < 33u * 33u);
}

TEST_CASE("merged weights reproduce the adapter forward") {
    Rng rng(7);
    const auto fresh = init_adapter(random_matrix(rng, 5, 7), 3, 32.0, 11);
    const Matrix merged_fresh = merge_weights(fresh);
    for (std::size_t i = 0; i < merged_fresh.size(); ++i) {
        CHECK(merged_fresh.data()[i] == fresh.W0.data()[i]);
    }

    auto adapter = init_adapter(random_matrix(rng, 6, 9), 2, 16.0, 12);
    for (std::size_t i = 0; i < adapter.B.size(); ++i) {
        adapter.B.data()[i] = rng.normal();
    }
    const Matrix merged = merge_weights(adapter);
    for (int probe = 0; probe < 100; ++probe) {
        const auto x = random_vector(rng, adapter.k());
        double xmax = 0.0;
        for (double v : x) xmax = std::max(xmax, std::abs(v));
        const auto via_adapter = forward(adapter, x);
        const auto via_merged = matvec(merged, x);
        for (std::size_t i = 0; i < via_adapter.size(); ++i) {
            CHECK(std::abs(via_adapter[i] - via_merged[i]) <= 1e-12 * (1.0 + xmax));
        }
    }
}

TEST_CASE("rank-one merge is the scaled outer product") {
    Rng rng(8);
    auto adapter = init_adapter(random_matrix(rng, 4, 3), 1, 1.0, 13);
    for (std::size_t i = 0; i < adapter.B.size(); ++i) {
        adapter.B.data()[i] = rng.normal();
    }
    const Matrix merged = merge_weights(adapter);
    for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            const double expect = adapter.W0(i, j) + adapter.B(i, 0) * adapter.A(0, j);
            CHECK(merged(i, j) == Catch::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("zero upstream gradient yields zero parameter gradients") {
    Rng rng(9);
    const auto adapter = init_adapter(random_matrix(rng, 5, 4), 2, 32.0, 14);
    const auto grads =
        backward(adapter, random_vector(rng, 4), std::vector<double>(5, 0.0));
    for (std::size_t i = 0; i < grads.dA.size(); ++i) CHECK(grads.dA.data()[i] == 0.0);
    for (std::size_t i = 0; i < grads.dB.size(); ++i) CHECK(grads.dB.data()[i] == 0.0);
}

TEST_CASE("with zero B the A gradient vanishes but B can still learn") {
    Rng rng(10);
    const auto adapter = init_adapter(random_matrix(rng, 5, 4), 2, 32.0, 15);
    const auto x = random_vector(rng, 4);
    const auto g = random_vector(rng, 5);
    const auto grads = backward(adapter, x, g);
    for (std::size_t i = 0; i < grads.dA.size(); ++i) CHECK(grads.dA.data()[i] == 0.0);
    const auto ax = matvec(adapter.A, x);
    double magnitude = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            const double expect = adapter.scale() * g[i] * ax[j];
            CHECK(grads.dB(i, j) == Catch::Approx(expect).margin(1e-15));
            magnitude += std::abs(expect);
        }
    }
    CHECK(magnitude > 0.0);
}

TEST_CASE("gradients match central finite differences") {
    Rng rng(2718);
    const double step = 1e-3;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t d = 2 + rng.below(11);
        const std::size_t k = 2 + rng.below(11);
        const std::size_t r = 1 + rng.below(std::min(std::min(d, k), std::size_t(4)));
        auto adapter =
            init_adapter(random_matrix(rng, d, k), r, 8.0 + rng.below(48), 50 + trial);
        for (std::size_t i = 0; i < adapter.B.size(); ++i) {
            adapter.B.data()[i] = rng.normal();
        }
        const auto x = random_vector(rng, k);

        const auto h = forward(adapter, x);
        const auto grads = backward(adapter, x, h);

        const auto loss_at = [&](const LoraAdapter& a) {
            return half_squared_norm(lexsum::forward(a, x));
        };
        for (std::size_t i = 0; i < adapter.A.size(); ++i) {
            auto plus = adapter;
            auto minus = adapter;
            plus.A.data()[i] += step;
            minus.A.data()[i] -= step;
            const double fd = (loss_at(plus) - loss_at(minus)) / (2 * step);
            CHECK(rel_err(grads.dA.data()[i], fd) < 1e-4);
        }
        for (std::size_t i = 0; i < adapter.B.size(); ++i) {
            auto plus = adapter;
            auto minus = adapter;
            plus.B.data()[i] += step;
            minus.B.data()[i] -= step;
            const double fd = (loss_at(plus) - loss_at(minus)) / (2 * step);
            CHECK(rel_err(grads.dB.data()[i], fd) < 1e-4);
        }

        const auto dx = lora::input_grad(adapter.W0, adapter.A, adapter.B,
                                         adapter.scale(), h);
        for (std::size_t i = 0; i < x.size(); ++i) {
            auto plus = x;
            auto minus = x;
            plus[i] += step;
            minus[i] -= step;
            const double fd = (half_squared_norm(forward(adapter, plus)) -
                               half_squared_norm(forward(adapter, minus))) /
                              (2 * step);
            CHECK(rel_err(dx[i], fd) < 1e-4);
        }
    }
}

TEST_CASE("the base weight never moves under training steps") {
    Rng rng(11);
    auto adapter = init_adapter(random_matrix(rng, 6, 6), 2, 32.0, 16);
    const Matrix w0_before = adapter.W0;
    for (int step = 0; step < 100; ++step) {
        const auto x = random_vector(rng, 6);
        const auto h = forward(adapter, x);
        const auto grads = backward(adapter, x, h);
        apply_sgd(adapter, grads, 1e-2);
    }
    for (std::size_t i = 0; i < w0_before.size(); ++i) {
        CHECK(adapter.W0.data()[i] == w0_before.data()[i]);
    }
    bool a_moved = false;
    bool b_moved = false;
    for (std::size_t i = 0; i < adapter.B.size(); ++i) {
        if (adapter.B.data()[i] != 0.0) b_moved = true;
    }
    const auto fresh = init_adapter(w0_before, 2, 32.0, 16);
    for (std::size_t i = 0; i < adapter.A.size(); ++i) {
        if (adapter.A.data()[i] != fresh.A.data()[i]) a_moved = true;
    }
    CHECK(a_moved);
    CHECK(b_moved);
}

TEST_CASE("adapter files round-trip the factors") {
    Rng rng(12);
    auto adapter = init_adapter(random_matrix(rng, 5, 8), 3, 24.0, 17);
    for (std::size_t i = 0; i < adapter.B.size(); ++i) {
        adapter.B.data()[i] = rng.normal();
    }
    const std::string path = "/tmp/lexsum_test_adapter.bin";
    save_adapter(path, adapter, "enc.0.self.q_proj");
    const SavedAdapter loaded = load_adapter(path);
    CHECK(loaded.layer_name == "enc.0.self.q_proj");
    CHECK(loaded.rank == 3);
    CHECK(loaded.alpha == 24.0);
    REQUIRE(loaded.A.same_shape(adapter.A));
    REQUIRE(loaded.B.same_shape(adapter.B));
    for (std::size_t i = 0; i < adapter.A.size(); ++i) {
        CHECK(loaded.A.data()[i] == adapter.A.data()[i]);
    }
    for (std::size_t i = 0; i < adapter.B.size(); ++i) {
        CHECK(loaded.B.data()[i] == adapter.B.data()[i]);
    }
    std::remove(path.c_str());
}

TEST_CASE("malformed adapter files are refused") {
    const std::string path = "/tmp/lexsum_test_bad_adapter.bin";
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOPE this is not an adapter";
    }
    CHECK_THROWS_AS(load_adapter(path), DataError);
    CHECK_THROWS_AS(load_adapter("/tmp/lexsum_does_not_exist.bin"), DataError);
    std::remove(path.c_str());
}
