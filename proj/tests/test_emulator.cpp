#include <doctest.h>

#include <cmath>
#include <random>

#include "emloc/emulator.hpp"
#include "emloc/linalg.hpp"
#include "emloc/rng.hpp"

using namespace emloc;

namespace {

// Anisotropic sample matrix with controlled spread across a random rotation.
Matrix anisotropic_batch(std::size_t rows, std::size_t dim, double condition,
                         std::mt19937_64& eng) {
    Matrix q = svd(random_gaussian(dim, dim, 1.0, eng)).u;
    Matrix z = random_gaussian(rows, dim, 1.0, eng);
    Matrix scaled(rows, dim);
    for (std::size_t j = 0; j < dim; ++j) {
        const double expo = dim == 1 ? 0.0
                                     : static_cast<double>(j) / static_cast<double>(dim - 1);
        const double s = std::pow(condition, -0.5 * expo);
        for (std::size_t i = 0; i < rows; ++i) scaled(i, j) = z(i, j) * s;
    }
    return matmul(scaled, transpose(q));
}

double weighted_error(const Matrix& x, const Matrix& w, const Matrix& w_hat) {
    return frobenius_norm(matmul(x, subtract(w, w_hat)));
}

CalibrationStats stats_from(const Matrix& x) {
    CalibrationStats stats(x.cols());
    accumulate_activations(stats, x);
    return stats;
}

std::size_t count_params(const Network& net) {
    std::size_t floats = 0;
    for (const Layer& layer : net.layers) {
        if (layer.factorized()) {
            floats += layer.factorized_weight().w_u.size() +
                      layer.factorized_weight().w_v.size();
        } else {
            floats += layer.full_weight().size();
        }
    }
    return floats;
}

Network two_layer_net(std::size_t d0, std::size_t d1, std::size_t d2,
                      std::uint64_t seed) {
    Network net;
    for (int l = 0; l < 2; ++l) {
        Layer layer;
        const std::size_t d_in = l == 0 ? d0 : d1;
        const std::size_t d_out = l == 0 ? d1 : d2;
        layer.weight = random_gaussian(d_in, d_out, 1.0 / std::sqrt(double(d_in)),
                                       derive_seed(seed, l));
        layer.bias = random_gaussian(1, d_out, 0.05, derive_seed(seed, 10 + l));
        layer.activation = l == 0 ? Activation::tanh : Activation::identity;
        net.layers.push_back(std::move(layer));
    }
    return net;
}

}  // namespace

TEST_CASE("accumulate_activations single outer product") {
    CalibrationStats stats(3);
    Matrix e1(1, 3, {1, 0, 0});
    accumulate_activations(stats, e1);
    CHECK(stats.count == 1);
    CHECK(stats.gram(0, 0) == 1.0);
    CHECK(max_abs(stats.gram) == 1.0);
    double total = 0.0;
    for (double v : stats.gram.data()) total += std::abs(v);
    CHECK(total == 1.0);
}

TEST_CASE("accumulate_activations matches concatenation") {
    std::mt19937_64 eng(3);
    Matrix a = random_gaussian(5, 4, 1.0, eng);
    Matrix b = random_gaussian(7, 4, 1.0, eng);

    CalibrationStats split(4);
    accumulate_activations(split, a);
    accumulate_activations(split, b);

    Matrix cat(12, 4);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 4; ++j) cat(i, j) = a(i, j);
    for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t j = 0; j < 4; ++j) cat(5 + i, j) = b(i, j);
    CalibrationStats whole(4);
    accumulate_activations(whole, cat);

    CHECK(split.count == whole.count);
    CHECK(max_abs(subtract(split.gram, whole.gram)) <= 1e-12);
}

TEST_CASE("accumulate_activations zero batch") {
    CalibrationStats stats(3);
    accumulate_activations(stats, Matrix(4, 3));
    CHECK(stats.count == 4);
    CHECK(max_abs(stats.gram) == 0.0);
    CHECK_THROWS_AS(accumulate_activations(stats, Matrix(2, 5)), std::invalid_argument);
}

TEST_CASE("isotropic gram reduces to plain truncated SVD") {
    std::mt19937_64 eng(17);
    Matrix w = random_gaussian(8, 10, 1.0, eng);
    CalibrationStats stats(8);
    stats.gram = scale(Matrix::identity(8), 24.0);  // c * I after 12 samples
    stats.count = 12;

    FactorizedWeight aware = activation_aware_factorize(w, stats, 3);
    FactorizedWeight plain = plain_factorize(w, 3);
    CHECK(max_abs(subtract(effective_weight(aware), effective_weight(plain))) <= 1e-8);
}

TEST_CASE("full-rank factorization is lossless") {
    std::mt19937_64 eng(19);
    Matrix w = random_gaussian(6, 9, 1.0, eng);
    Matrix x = anisotropic_batch(32, 6, 10.0, eng);
    FactorizedWeight f = activation_aware_factorize(w, stats_from(x), 6);
    CHECK(max_abs(subtract(effective_weight(f), w)) <= 1e-8);
}

TEST_CASE("whitened error matches the closed-form oracle") {
    // 2x2 with a strongly anisotropic gram: the optimal weighted error is the
    // discarded tail of L^T W, and plain SVD must be strictly worse.
    Matrix w(2, 2, {1.0, 0.2, -0.3, 0.9});
    Matrix x(4, 2, {3.0, 0.0, -3.0, 0.1, 3.0, -0.1, 0.05, 0.02});
    CalibrationStats stats = stats_from(x);

    FactorizedWeight aware = activation_aware_factorize(w, stats, 1);
    FactorizedWeight plain = plain_factorize(w, 1);

    const Matrix l = whitening_factor(stats);
    const Matrix lt = transpose(l);
    // Oracle: the minimum of ||L^T (w - p)||_F over rank-1 p is the smallest
    // singular value of L^T w.
    SvdResult ltw = svd(matmul(lt, w));
    const double optimal = ltw.sigma.back();

    const double err_aware = frobenius_norm(matmul(lt, subtract(w, effective_weight(aware))));
    const double err_plain = frobenius_norm(matmul(lt, subtract(w, effective_weight(plain))));
    CHECK(err_aware == doctest::Approx(optimal).epsilon(1e-8));
    CHECK(err_aware < err_plain - 1e-6);
}

TEST_CASE("factorization postcondition: residual equals the whitened tail") {
    std::mt19937_64 eng(23);
    for (int trial = 0; trial < 5; ++trial) {
        Matrix w = random_gaussian(10, 7, 1.0, eng);
        Matrix x = anisotropic_batch(40, 10, 50.0, eng);
        CalibrationStats stats = stats_from(x);
        const std::size_t n = 3;

        FactorizedWeight f = activation_aware_factorize(w, stats, n);
        const Matrix lt = transpose(whitening_factor(stats));
        SvdResult full = svd(matmul(lt, w));
        double tail = 0.0;
        for (std::size_t i = n; i < full.sigma.size(); ++i) {
            tail += full.sigma[i] * full.sigma[i];
        }
        const double residual =
            frobenius_norm(matmul(lt, subtract(w, effective_weight(f))));
        CHECK(residual == doctest::Approx(std::sqrt(tail)).epsilon(1e-8));
    }
}

TEST_CASE("weighted-error optimality against random rank-n baselines") {
    std::mt19937_64 eng(29);
    Matrix w = random_gaussian(9, 6, 1.0, eng);
    Matrix x = anisotropic_batch(36, 9, 20.0, eng);
    CalibrationStats stats = stats_from(x);
    const std::size_t n = 2;
    FactorizedWeight f = activation_aware_factorize(w, stats, n);
    const Matrix lt = transpose(whitening_factor(stats));
    const double best = frobenius_norm(matmul(lt, subtract(w, effective_weight(f))));
    for (int trial = 0; trial < 50; ++trial) {
        Matrix p = matmul(random_gaussian(9, n, 1.0, eng), random_gaussian(n, 6, 1.0, eng));
        const double f_w = frobenius_norm(w) / std::max(frobenius_norm(p), 1e-30);
        p = scale(p, f_w);
        CHECK(frobenius_norm(matmul(lt, subtract(w, p))) >= best - 1e-10);
    }
}

TEST_CASE("downstream awareness beats plain SVD on anisotropic data") {
    std::mt19937_64 eng(31);
    int wins = 0;
    const int trials = 40;
    for (int trial = 0; trial < trials; ++trial) {
        Matrix w = random_gaussian(8, 8, 1.0, eng);
        Matrix x = anisotropic_batch(48, 8, 30.0, eng);
        CalibrationStats stats = stats_from(x);
        FactorizedWeight aware = activation_aware_factorize(w, stats, 2);
        FactorizedWeight plain = plain_factorize(w, 2);
        const double e_aware = weighted_error(x, w, effective_weight(aware));
        const double e_plain = weighted_error(x, w, effective_weight(plain));
        if (e_aware <= e_plain) ++wins;
    }
    CHECK(wins >= (trials * 95) / 100);
}

TEST_CASE("plain_factorize matches the SVD tail oracle") {
    std::mt19937_64 eng(37);
    Matrix w = random_gaussian(7, 9, 1.0, eng);
    FactorizedWeight f = plain_factorize(w, 2);
    SvdResult full = svd(w);
    double tail = 0.0;
    for (std::size_t i = 2; i < full.sigma.size(); ++i) {
        tail += full.sigma[i] * full.sigma[i];
    }
    const double err = frobenius_norm(subtract(w, effective_weight(f)));
    CHECK(err == doctest::Approx(std::sqrt(tail)).epsilon(1e-10));

    Matrix rank1 = matmul(random_gaussian(7, 1, 1.0, eng), random_gaussian(1, 9, 1.0, eng));
    FactorizedWeight exact = plain_factorize(rank1, 1);
    CHECK(max_abs(subtract(effective_weight(exact), rank1)) <= 1e-10);

    FactorizedWeight id = plain_factorize(Matrix::identity(4), 4);
    CHECK(max_abs(subtract(effective_weight(id), Matrix::identity(4))) <= 1e-12);
}

TEST_CASE("rank_for_ratio formula and bounds") {
    CHECK(rank_for_ratio(64, 64, 0.25) == 8);
    CHECK(rank_for_ratio(64, 64, 0.5) == 16);
    CHECK_THROWS_AS(rank_for_ratio(4, 4, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(rank_for_ratio(8, 8, 0.0), std::invalid_argument);
    // clamped to min(d_in, d_out) for generous ratios
    CHECK(rank_for_ratio(16, 16, 2.5) == 16);
}

TEST_CASE("singular gram is rescued by regularization") {
    // Fewer samples than dimensions leaves the raw gram rank-deficient.
    std::mt19937_64 eng(41);
    Matrix x = random_gaussian(3, 8, 1.0, eng);
    CalibrationStats stats = stats_from(x);
    Matrix w = random_gaussian(8, 6, 1.0, eng);
    FactorizedWeight f = activation_aware_factorize(w, stats, 2);
    CHECK(effective_weight(f).all_finite());
    CHECK_THROWS_AS(activation_aware_factorize(w, CalibrationStats(8), 2),
                    std::invalid_argument);
}

TEST_CASE("build_emulator at lossless rank preserves the forward map") {
    Network net = two_layer_net(6, 8, 5, 77);
    std::mt19937_64 eng(43);
    Dataset calib;
    calib.inputs = anisotropic_batch(24, 6, 10.0, eng);
    calib.targets = Matrix(24, 5);

    // ratio large enough that every layer keeps full rank
    Network emu = build_emulator(net, calib, 1.9);
    for (const Layer& layer : emu.layers) CHECK(layer.factorized());

    Matrix probe = anisotropic_batch(10, 6, 10.0, eng);
    CHECK(max_abs(subtract(forward(emu, probe), forward(net, probe))) <= 1e-8);
}

TEST_CASE("build_emulator ratio 1.0 returns the model unchanged") {
    Network net = two_layer_net(6, 8, 5, 78);
    Dataset calib;
    calib.inputs = random_gaussian(8, 6, 1.0, std::uint64_t{5});
    calib.targets = Matrix(8, 5);
    Network emu = build_emulator(net, calib, 1.0);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        CHECK_FALSE(emu.layers[l].factorized());
        CHECK(bit_equal(emu.layers[l].full_weight(), net.layers[l].full_weight()));
    }
}

TEST_CASE("build_emulator meets the parameter budget") {
    Network net = two_layer_net(64, 64, 64, 79);
    std::mt19937_64 eng(47);
    Dataset calib;
    calib.inputs = anisotropic_batch(64, 64, 20.0, eng);
    calib.targets = Matrix(64, 64);

    const std::size_t before = count_params(net);
    Network emu = build_emulator(net, calib, 0.25);
    const std::size_t after = count_params(emu);
    CHECK(static_cast<double>(after) <= 0.25 * static_cast<double>(before) + 1e-9);

    // original untouched
    for (const Layer& layer : net.layers) CHECK_FALSE(layer.factorized());
}

TEST_CASE("build_emulator propagates empty calibration") {
    Network net = two_layer_net(6, 8, 5, 80);
    Dataset empty;
    CHECK_THROWS_AS(build_emulator(net, empty, 0.5), std::invalid_argument);
}

TEST_CASE("build_emulator honors the layer filter") {
    Network net = two_layer_net(6, 8, 5, 81);
    std::mt19937_64 eng(53);
    Dataset calib;
    calib.inputs = anisotropic_batch(16, 6, 10.0, eng);
    calib.targets = Matrix(16, 5);
    Network emu = build_emulator(net, calib, 0.5,
                                 [](std::size_t l) { return l == 1; });
    CHECK_FALSE(emu.layers[0].factorized());
    CHECK(emu.layers[1].factorized());
}
