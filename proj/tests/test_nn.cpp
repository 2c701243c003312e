#include <doctest.h>

#include <cmath>

#include "evhar/nn.hpp"
#include "oracles.hpp"

using namespace evhar;
using nn::Mode;

namespace {

TensorD random_tensor(std::vector<int64_t> shape, uint64_t seed, double lo = -1, double hi = 1) {
    TensorD t(std::move(shape));
    Rng rng(seed);
    oracle::fill_uniform(t, rng, lo, hi);
    return t;
}

}  // namespace

TEST_CASE("conv3d: center-delta kernel is the identity map") {
    TensorD in = random_tensor({2, 2, 3, 4, 4}, 1);
    TensorD w({2, 2, 3, 3, 3});
    for (int64_t c = 0; c < 2; ++c) w[(((c * 2 + c) * 3 + 1) * 3 + 1) * 3 + 1] = 1.0;
    TensorD bias({2});
    const TensorD out = nn::conv3d_forward<double>(in, w, bias, nullptr);
    REQUIRE(out.shape() == in.shape());
    for (int64_t i = 0; i < in.size(); ++i) CHECK(out[i] == doctest::Approx(in[i]).epsilon(1e-12));
}

TEST_CASE("conv3d: all-ones kernel over all-ones input gives 27 + bias at interior voxels") {
    TensorD in({1, 1, 5, 6, 6}, 1.0);
    TensorD w({1, 1, 3, 3, 3}, 1.0);
    TensorD bias({1});
    bias[0] = 0.25;
    const TensorD out = nn::conv3d_forward<double>(in, w, bias, nullptr);
    CHECK(out[((2 * 6) + 3) * 6 + 3] == doctest::Approx(27.25));
    // corner voxel touches only 2x2x2 inputs
    CHECK(out[0] == doctest::Approx(8.25));
}

TEST_CASE("conv3d: zero input broadcasts the bias") {
    TensorD in({2, 3, 2, 4, 4});
    TensorD w = random_tensor({4, 3, 3, 3, 3}, 2);
    TensorD bias({4});
    for (int64_t i = 0; i < 4; ++i) bias[i] = 0.5 + i;
    const TensorD out = nn::conv3d_forward<double>(in, w, bias, nullptr);
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t c = 0; c < 4; ++c)
            for (int64_t j = 0; j < 2 * 4 * 4; ++j)
                CHECK(out[(b * 4 + c) * 32 + j] == doctest::Approx(0.5 + c));
}

TEST_CASE("conv3d: matches the direct-sum oracle on random tensors") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        TensorD in = random_tensor({2, 3, 3, 5, 4}, 100 + seed);
        TensorD w = random_tensor({4, 3, 3, 3, 3}, 200 + seed);
        TensorD bias = random_tensor({4}, 300 + seed);
        const TensorD got = nn::conv3d_forward<double>(in, w, bias, nullptr);
        const TensorD want = oracle::conv3d_direct(in, w, bias);
        REQUIRE(got.shape() == want.shape());
        for (int64_t i = 0; i < got.size(); ++i)
            CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
}

TEST_CASE("conv3d: channel mismatch raises a shape error") {
    TensorD in({1, 3, 2, 4, 4});
    TensorD w({4, 2, 3, 3, 3});
    TensorD bias({4});
    CHECK_THROWS_AS(nn::conv3d_forward<double>(in, w, bias, nullptr), ShapeError);
}

TEST_CASE("conv3d backward: zero grad_out, bias reduction, finite differences") {
    TensorD in = random_tensor({2, 1, 3, 4, 4}, 42);
    TensorD w = random_tensor({3, 1, 3, 3, 3}, 43);
    TensorD bias = random_tensor({3}, 44);

    nn::Conv3dCache<double> cache;
    nn::conv3d_forward(in, w, bias, &cache);

    SUBCASE("zero grad_out gives zero grads") {
        TensorD zero({2, 3, 3, 4, 4});
        const auto grads = nn::conv3d_backward(cache, zero);
        for (int64_t i = 0; i < grads.input.size(); ++i) CHECK(grads.input[i] == 0.0);
        for (int64_t i = 0; i < grads.weights.size(); ++i) CHECK(grads.weights[i] == 0.0);
        for (int64_t i = 0; i < grads.bias.size(); ++i) CHECK(grads.bias[i] == 0.0);
    }

    SUBCASE("grad_bias equals grad_out summed over non-channel axes") {
        TensorD g = random_tensor({2, 3, 3, 4, 4}, 45);
        const auto grads = nn::conv3d_backward(cache, g);
        for (int64_t c = 0; c < 3; ++c) {
            double want = 0;
            for (int64_t b = 0; b < 2; ++b)
                for (int64_t j = 0; j < 3 * 4 * 4; ++j) want += g[(b * 3 + c) * 48 + j];
            CHECK(grads.bias[c] == doctest::Approx(want).epsilon(1e-12));
        }
    }

    SUBCASE("finite differences over input, weights and bias") {
        for (uint64_t seed = 0; seed < 5; ++seed) {
            TensorD x = random_tensor({2, 1, 3, 4, 4}, 1000 + seed);
            TensorD wt = random_tensor({2, 1, 3, 3, 3}, 2000 + seed);
            TensorD bs = random_tensor({2}, 3000 + seed);
            TensorD proj = random_tensor({2, 2, 3, 4, 4}, 4000 + seed);

            auto f = [&] {
                return oracle::dot_project(nn::conv3d_forward<double>(x, wt, bs, nullptr), proj);
            };
            nn::Conv3dCache<double> c2;
            nn::conv3d_forward(x, wt, bs, &c2);
            const auto grads = nn::conv3d_backward(c2, proj);
            CHECK(oracle::fd_max_rel_error(x, grads.input, f) < 1e-6);
            CHECK(oracle::fd_max_rel_error(wt, grads.weights, f) < 1e-6);
            CHECK(oracle::fd_max_rel_error(bs, grads.bias, f) < 1e-6);
        }
    }
}

TEST_CASE("batchnorm3d: train-mode normalization, constant channels, running stats") {
    TensorD in = random_tensor({3, 2, 2, 3, 3}, 7, -2, 5);
    TensorD gamma({2}, 1.0), beta({2});
    TensorD rm({2}), rv({2}, 1.0);

    const TensorD out = nn::batchnorm3d_forward(in, gamma, beta, rm, rv, Mode::train, 0.1, 1e-5, nullptr);
    const int64_t plane = 2 * 3 * 3, n = 3 * plane;
    for (int64_t c = 0; c < 2; ++c) {
        double mean = 0, var = 0;
        for (int64_t b = 0; b < 3; ++b)
            for (int64_t j = 0; j < plane; ++j) mean += out[(b * 2 + c) * plane + j];
        mean /= n;
        for (int64_t b = 0; b < 3; ++b)
            for (int64_t j = 0; j < plane; ++j) {
                const double d = out[(b * 2 + c) * plane + j] - mean;
                var += d * d;
            }
        var /= n;
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-10));
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // epsilon effect
    }

    SUBCASE("running stats update: running <- (1-m)*running + m*batch") {
        TensorD rm2({2}), rv2({2}, 1.0);
        double batch_mean = 0;
        for (int64_t b = 0; b < 3; ++b)
            for (int64_t j = 0; j < plane; ++j) batch_mean += in[(b * 2 + 0) * plane + j];
        batch_mean /= n;
        nn::batchnorm3d_forward(in, gamma, beta, rm2, rv2, Mode::train, 0.1, 1e-5, nullptr);
        CHECK(rm2[0] == doctest::Approx(0.9 * 0.0 + 0.1 * batch_mean).epsilon(1e-10));
    }

    SUBCASE("constant channel collapses to beta under the epsilon guard") {
        TensorD cin({2, 1, 2, 2, 2}, 3.25);
        TensorD g({1}, 1.7), be({1});
        be[0] = 0.4;
        TensorD m({1}), v({1}, 1.0);
        const TensorD cout = nn::batchnorm3d_forward(cin, g, be, m, v, Mode::train, 0.1, 1e-5, nullptr);
        for (int64_t i = 0; i < cout.size(); ++i) CHECK(cout[i] == doctest::Approx(0.4).epsilon(1e-12));
    }

    SUBCASE("eval before any update uses the initialized stats") {
        TensorD m({2}), v({2}, 1.0);
        TensorD out_eval = nn::batchnorm3d_forward(in, gamma, beta, m, v, Mode::eval, 0.1, 1e-5, nullptr);
        const double scale = 1.0 / std::sqrt(1.0 + 1e-5);
        for (int64_t i = 0; i < in.size(); ++i)
            CHECK(out_eval[i] == doctest::Approx(in[i] * scale).epsilon(1e-10));
    }
}

TEST_CASE("batchnorm3d backward: finite differences on input, gamma, beta") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        TensorD x = random_tensor({3, 2, 2, 3, 3}, 500 + seed);
        TensorD gamma = random_tensor({2}, 600 + seed, 0.5, 1.5);
        TensorD beta = random_tensor({2}, 700 + seed);
        TensorD proj = random_tensor({3, 2, 2, 3, 3}, 800 + seed);

        auto f = [&] {
            TensorD m({2}), v({2}, 1.0);
            return oracle::dot_project(
                nn::batchnorm3d_forward(x, gamma, beta, m, v, Mode::train, 0.1, 1e-5, nullptr), proj);
        };
        TensorD m({2}), v({2}, 1.0);
        nn::BatchNorm3dCache<double> cache;
        nn::batchnorm3d_forward(x, gamma, beta, m, v, Mode::train, 0.1, 1e-5, &cache);
        const auto grads = nn::batchnorm3d_backward(cache, proj);
        CHECK(oracle::fd_max_rel_error(x, grads.input, f) < 1e-6);
        CHECK(oracle::fd_max_rel_error(gamma, grads.gamma, f) < 1e-6);
        CHECK(oracle::fd_max_rel_error(beta, grads.beta, f) < 1e-6);
    }
}

TEST_CASE("relu: forward, subgradient convention at zero, finite differences away from zero") {
    TensorD in({3});
    in[0] = -1;
    in[1] = 0;
    in[2] = 2;
    nn::ReluCache<double> cache;
    const TensorD out = nn::relu_forward(in, &cache);
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 0.0);
    CHECK(out[2] == 2.0);

    TensorD g({3}, 1.0);
    const TensorD gi = nn::relu_backward(cache, g);
    CHECK(gi[0] == 0.0);
    CHECK(gi[1] == 0.0);  // gradient at exactly 0 is 0
    CHECK(gi[2] == 1.0);

    for (uint64_t seed = 0; seed < 5; ++seed) {
        TensorD x = random_tensor({64}, 900 + seed);
        for (int64_t i = 0; i < x.size(); ++i)
            if (std::abs(x[i]) < 1e-2) x[i] = x[i] < 0 ? -1e-2 : 1e-2;  // stay away from the kink
        TensorD proj = random_tensor({64}, 950 + seed);
        auto f = [&] { return oracle::dot_project(nn::relu_forward<double>(x, nullptr), proj); };
        nn::ReluCache<double> c2;
        nn::relu_forward(x, &c2);
        const TensorD grad = nn::relu_backward(c2, proj);
        CHECK(oracle::fd_max_rel_error(x, grad, f) < 1e-6);
    }
}

TEST_CASE("maxpool3d: shape contract, argmax routing, tie-breaking") {
    TensorD big({1, 1, 10, 128, 128});
    const TensorD pooled = nn::maxpool3d_forward<double>(big, nullptr);
    CHECK(pooled.shape() == std::vector<int64_t>{1, 1, 10, 64, 64});

    TensorD in({1, 1, 1, 2, 2});
    in[0] = 1;
    in[1] = 3;
    in[2] = 2;
    in[3] = 0;
    nn::MaxPool3dCache<double> cache;
    const TensorD out = nn::maxpool3d_forward(in, &cache);
    REQUIRE(out.size() == 1);
    CHECK(out[0] == 3.0);
    TensorD g({1, 1, 1, 1, 1}, 5.0);
    const TensorD gi = nn::maxpool3d_backward(cache, g);
    CHECK(gi[0] == 0.0);
    CHECK(gi[1] == 5.0);
    CHECK(gi[2] == 0.0);
    CHECK(gi[3] == 0.0);

    SUBCASE("all-equal window routes to the first index and preserves grad mass") {
        TensorD eq({1, 1, 1, 2, 2}, 7.0);
        nn::MaxPool3dCache<double> c2;
        nn::maxpool3d_forward(eq, &c2);
        TensorD g2({1, 1, 1, 1, 1}, 2.5);
        const TensorD gi2 = nn::maxpool3d_backward(c2, g2);
        CHECK(gi2[0] == 2.5);
        CHECK(gi2[1] + gi2[2] + gi2[3] == 0.0);
        double mass = 0;
        for (int64_t i = 0; i < 4; ++i) mass += gi2[i];
        CHECK(mass == 2.5);
    }

    SUBCASE("odd spatial dims are rejected") {
        TensorD odd({1, 1, 2, 3, 4});
        CHECK_THROWS_AS(nn::maxpool3d_forward<double>(odd, nullptr), ShapeError);
    }

    SUBCASE("finite differences with well-separated window values") {
        for (uint64_t seed = 0; seed < 5; ++seed) {
            TensorD x({2, 2, 2, 4, 4});
            Rng rng(1100 + seed);
            // draw well-separated values so +-h cannot flip an argmax
            std::vector<double> levels(static_cast<size_t>(x.size()));
            for (size_t i = 0; i < levels.size(); ++i) levels[i] = static_cast<double>(i) * 0.01;
            rng.shuffle(levels);
            for (int64_t i = 0; i < x.size(); ++i) x[i] = levels[static_cast<size_t>(i)];

            TensorD proj = random_tensor({2, 2, 2, 2, 2}, 1200 + seed);
            auto f = [&] { return oracle::dot_project(nn::maxpool3d_forward<double>(x, nullptr), proj); };
            nn::MaxPool3dCache<double> c3;
            nn::maxpool3d_forward(x, &c3);
            const TensorD grad = nn::maxpool3d_backward(c3, proj);
            CHECK(oracle::fd_max_rel_error(x, grad, f) < 1e-6);
        }
    }
}

TEST_CASE("global_avg_pool: constants, shape arithmetic, uniform backward") {
    TensorD in({2, 3, 2, 2, 2}, 1.5);
    nn::GapCache<double> cache;
    const TensorD out = nn::global_avg_pool_forward(in, &cache);
    REQUIRE(out.shape() == std::vector<int64_t>{2, 3});
    for (int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(1.5));

    TensorD big({2, 256, 10, 4, 4});
    const TensorD big_out = nn::global_avg_pool_forward<double>(big, nullptr);
    CHECK(big_out.shape() == std::vector<int64_t>{2, 256});

    nn::GapCache<double> c2;
    nn::global_avg_pool_forward(big, &c2);
    TensorD ones({2, 256}, 1.0);
    const TensorD gi = nn::global_avg_pool_backward(c2, ones);
    for (int64_t i = 0; i < 100; ++i) CHECK(gi[i] == doctest::Approx(1.0 / 160.0).epsilon(1e-12));

    for (uint64_t seed = 0; seed < 5; ++seed) {
        TensorD x = random_tensor({2, 3, 2, 3, 3}, 1300 + seed);
        TensorD proj = random_tensor({2, 3}, 1400 + seed);
        auto f = [&] { return oracle::dot_project(nn::global_avg_pool_forward<double>(x, nullptr), proj); };
        nn::GapCache<double> c3;
        nn::global_avg_pool_forward(x, &c3);
        const TensorD grad = nn::global_avg_pool_backward(c3, proj);
        CHECK(oracle::fd_max_rel_error(x, grad, f) < 1e-6);
    }
}

TEST_CASE("linear: identity weights, loop-oracle weight gradient, finite differences") {
    TensorD in = random_tensor({3, 4}, 21);
    TensorD eye({4, 4});
    for (int64_t i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
    TensorD zero_bias({4});
    const TensorD out = nn::linear_forward<double>(in, eye, zero_bias, nullptr);
    for (int64_t i = 0; i < in.size(); ++i) CHECK(out[i] == doctest::Approx(in[i]).epsilon(1e-14));

    SUBCASE("grad_weights equals the explicit loop sum grad_out^T * input") {
        TensorD w = random_tensor({5, 4}, 22);
        TensorD bias = random_tensor({5}, 23);
        nn::LinearCache<double> cache;
        nn::linear_forward(in, w, bias, &cache);
        TensorD g = random_tensor({3, 5}, 24);
        const auto grads = nn::linear_backward(cache, g);
        for (int64_t k = 0; k < 5; ++k)
            for (int64_t f = 0; f < 4; ++f) {
                double want = 0;
                for (int64_t b = 0; b < 3; ++b) want += g[b * 5 + k] * in[b * 4 + f];
                CHECK(grads.weights[k * 4 + f] == doctest::Approx(want).epsilon(1e-12));
            }
    }

    SUBCASE("finite differences") {
        for (uint64_t seed = 0; seed < 5; ++seed) {
            TensorD x = random_tensor({4, 7}, 1500 + seed);
            TensorD w = random_tensor({3, 7}, 1600 + seed);
            TensorD bias = random_tensor({3}, 1700 + seed);
            TensorD proj = random_tensor({4, 3}, 1800 + seed);
            auto f = [&] { return oracle::dot_project(nn::linear_forward<double>(x, w, bias, nullptr), proj); };
            nn::LinearCache<double> cache;
            nn::linear_forward(x, w, bias, &cache);
            const auto grads = nn::linear_backward(cache, proj);
            CHECK(oracle::fd_max_rel_error(x, grads.input, f) < 1e-6);
            CHECK(oracle::fd_max_rel_error(w, grads.weights, f) < 1e-6);
            CHECK(oracle::fd_max_rel_error(bias, grads.bias, f) < 1e-6);
        }
    }
}

TEST_CASE("dropout: identities, seeded survivor fraction, config validation") {
    TensorD in = random_tensor({100}, 31);
    Rng rng(1);

    const TensorD t0 = nn::dropout_forward(in, 0.0, Mode::train, rng, nullptr);
    for (int64_t i = 0; i < in.size(); ++i) CHECK(t0[i] == in[i]);
    const TensorD e5 = nn::dropout_forward(in, 0.5, Mode::eval, rng, nullptr);
    for (int64_t i = 0; i < in.size(); ++i) CHECK(e5[i] == in[i]);

    TensorD big({10000}, 1.0);
    Rng seeded(77);
    const TensorD dropped = nn::dropout_forward(big, 0.5, Mode::train, seeded, nullptr);
    int64_t survivors = 0;
    for (int64_t i = 0; i < dropped.size(); ++i) {
        if (dropped[i] != 0.0) {
            survivors++;
            CHECK(dropped[i] == doctest::Approx(2.0));  // inverted scaling
        }
    }
    const double fraction = static_cast<double>(survivors) / 10000.0;
    CHECK(fraction > 0.45);
    CHECK(fraction < 0.55);

    CHECK_THROWS_AS(nn::dropout_forward(in, 1.0, Mode::train, rng, nullptr), ConfigError);
    CHECK_THROWS_AS(nn::dropout_forward(in, -0.1, Mode::train, rng, nullptr), ConfigError);

    SUBCASE("backward applies the same mask and scaling") {
        Rng r2(5);
        nn::DropoutCache<double> cache;
        const TensorD out = nn::dropout_forward(in, 0.3, Mode::train, r2, &cache);
        TensorD ones({100}, 1.0);
        const TensorD gi = nn::dropout_backward(cache, ones);
        for (int64_t i = 0; i < in.size(); ++i) {
            if (out[i] == 0.0 && in[i] != 0.0) CHECK(gi[i] == 0.0);
            else CHECK(gi[i] == doctest::Approx(1.0 / 0.7));
        }
    }
}

TEST_CASE("softmax: symmetry, overflow stability, naive-formula agreement") {
    TensorD zeros({1, 6});
    const TensorD uniform = nn::softmax_rows(zeros);
    for (int64_t i = 0; i < 6; ++i) CHECK(uniform[i] == doctest::Approx(1.0 / 6.0).epsilon(1e-14));

    TensorD huge({1, 2});
    huge[0] = 1000;
    huge[1] = 0;
    const TensorD stable = nn::softmax_rows(huge);
    CHECK(stable[0] == doctest::Approx(1.0));
    CHECK(stable[1] == doctest::Approx(0.0));
    CHECK(std::isfinite(stable[0]));

    for (uint64_t seed = 0; seed < 5; ++seed) {
        TensorD x = random_tensor({4, 6}, 1900 + seed, -3, 3);
        const TensorD got = nn::softmax_rows(x);
        for (int64_t b = 0; b < 4; ++b) {
            double denom = 0;
            for (int64_t k = 0; k < 6; ++k) denom += std::exp(x[b * 6 + k]);
            double row_sum = 0;
            for (int64_t k = 0; k < 6; ++k) {
                CHECK(got[b * 6 + k] == doctest::Approx(std::exp(x[b * 6 + k]) / denom).epsilon(1e-12));
                row_sum += got[b * 6 + k];
            }
            CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}
