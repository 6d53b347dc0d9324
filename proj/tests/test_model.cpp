#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "flagfed/dataset.hpp"
#include "flagfed/errors.hpp"
#include "flagfed/model.hpp"

using namespace flagfed;

namespace {

Matrix random_features(std::size_t n, std::size_t d, std::mt19937_64& rng) {
    Matrix m(n, d);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (auto& v : m.data) v = unit(rng);
    return m;
}

LabelMatrix random_targets(std::size_t n, std::size_t l, std::mt19937_64& rng) {
    LabelMatrix m(n, l);
    for (auto& b : m.bits) b = rng() % 2;
    return m;
}

// Keeps probabilities away from the margin and clamp kinks so central
// differences see a smooth function.
Matrix safe_probs(std::size_t n, std::size_t l, const AslConfig& cfg, std::mt19937_64& rng) {
    Matrix m(n, l);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : m.data) {
        do {
            v = 0.02 + 0.96 * u(rng);
        } while (std::abs(v - cfg.margin) < 1e-4);
    }
    return m;
}

double loss_only(const Matrix& probs, const LabelMatrix& targets, const AslConfig& cfg) {
    return asl_loss(probs, targets, cfg).loss;
}

}  // namespace

TEST_CASE("init_params is deterministic with zero biases") {
    ModelShape linear{8, 3, 0};
    auto a = init_params(linear, 5);
    auto b = init_params(linear, 5);
    CHECK(a == b);
    CHECK(a.values.size() == 27);
    for (std::size_t i = 24; i < 27; ++i) CHECK(a.values[i] == 0.0);

    ModelShape hidden{4, 2, 6};
    auto h = init_params(hidden, 5);
    CHECK(h.values.size() == 4 * 6 + 6 + 6 * 2 + 2);
    for (std::size_t i = 24; i < 30; ++i) CHECK(h.values[i] == 0.0);  // b1

    CHECK_THROWS_AS(init_params(ModelShape{0, 3, 0}, 0), ConfigError);
}

TEST_CASE("zero parameters give probability one half everywhere") {
    ModelShape shape{4, 3, 0};
    ModelParams p;
    p.shape = shape;
    p.values.assign(shape.param_count(), 0.0);
    std::mt19937_64 rng(1);
    auto probs = forward(p, random_features(5, 4, rng));
    CHECK(probs.rows == 5);
    CHECK(probs.cols == 3);
    for (double v : probs.data) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("raising a positive-weight feature raises that label's probability") {
    ModelShape shape{2, 1, 0};
    ModelParams p;
    p.shape = shape;
    p.values = {1.0, 0.0, 0.0};  // w[0]=1
    Matrix lo(1, 2), hi(1, 2);
    lo.at(0, 0) = 0.3;
    hi.at(0, 0) = 0.9;
    CHECK(forward(p, hi).at(0, 0) > forward(p, lo).at(0, 0));
}

TEST_CASE("forward output stays strictly inside (0,1)") {
    ModelShape shape{2, 2, 3};
    auto p = init_params(shape, 3);
    for (auto& v : p.values) v *= 100.0;  // push toward saturation
    std::mt19937_64 rng(2);
    auto probs = forward(p, random_features(20, 2, rng));
    for (double v : probs.data) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    CHECK_THROWS_AS(forward(p, Matrix(1, 5)), DimensionError);
}

TEST_CASE("asl with zero gammas and margin reduces to mean BCE") {
    std::mt19937_64 rng(3);
    AslConfig cfg{0.0, 0.0, 0.0, 1e-12};
    for (int trial = 0; trial < 10; ++trial) {
        auto probs = safe_probs(4, 3, cfg, rng);
        auto targets = random_targets(4, 3, rng);
        double bce = 0.0;
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 3; ++j)
                bce -= targets.at(i, j) ? std::log(probs.at(i, j))
                                        : std::log(1.0 - probs.at(i, j));
        bce /= 12.0;
        CHECK(asl_loss(probs, targets, cfg).loss == doctest::Approx(bce).epsilon(1e-12));
    }
}

TEST_CASE("negatives below the margin contribute nothing") {
    AslConfig cfg{0.0, 4.0, 0.05, 1e-8};
    Matrix probs(1, 1);
    probs.at(0, 0) = 0.03;
    LabelMatrix targets(1, 1);
    auto lg = asl_loss(probs, targets, cfg);
    CHECK(lg.loss == 0.0);
    CHECK(lg.dprobs.at(0, 0) == 0.0);
}

TEST_CASE("asl rejects probabilities outside (0,1)") {
    Matrix probs(1, 1);
    probs.at(0, 0) = 1.0;
    LabelMatrix targets(1, 1);
    CHECK_THROWS_AS(asl_loss(probs, targets, AslConfig{}), DomainError);
}

TEST_CASE("asl gradient matches central finite differences") {
    std::mt19937_64 rng(4);
    const double step = 1e-6;
    for (int trial = 0; trial < 50; ++trial) {
        AslConfig cfg;
        cfg.gamma_pos = (rng() % 3) * 0.5;
        cfg.gamma_neg = (rng() % 5) * 1.0;
        cfg.margin = (trial % 2 == 0) ? 0.0 : 0.05;
        cfg.eps = 1e-8;
        std::size_t b = 1 + rng() % 5, l = 1 + rng() % 4;
        auto probs = safe_probs(b, l, cfg, rng);
        auto targets = random_targets(b, l, rng);
        auto lg = asl_loss(probs, targets, cfg);

        for (std::size_t i = 0; i < b * l; ++i) {
            Matrix up = probs, down = probs;
            up.data[i] += step;
            down.data[i] -= step;
            double fd = (loss_only(up, targets, cfg) - loss_only(down, targets, cfg)) /
                        (2.0 * step);
            double denom = std::max({1.0, std::abs(fd), std::abs(lg.dprobs.data[i])});
            CHECK(std::abs(lg.dprobs.data[i] - fd) / denom <= 1e-4);
        }
    }
}

TEST_CASE("parameter gradients match finite differences through forward") {
    std::mt19937_64 rng(8);
    const double step = 1e-6;
    for (int trial = 0; trial < 12; ++trial) {
        ModelShape shape{1 + rng() % 6, 1 + rng() % 4, (trial % 3 == 0) ? 0 : 1 + rng() % 4};
        AslConfig cfg = (trial % 2 == 0) ? AslConfig{0.0, 0.0, 0.0, 1e-8}
                                         : AslConfig{1.0, 4.0, 0.05, 1e-8};
        auto params = init_params(shape, rng());
        std::size_t b = 1 + rng() % 5;
        auto x = random_features(b, shape.d, rng);
        auto y = random_targets(b, shape.l, rng);

        auto [loss, grad] = loss_and_param_grad(params, x, y, cfg);
        CHECK(std::isfinite(loss));
        for (std::size_t i = 0; i < grad.size(); ++i) {
            ModelParams up = params, down = params;
            up.values[i] += step;
            down.values[i] -= step;
            double fd = (asl_loss(forward(up, x), y, cfg).loss -
                         asl_loss(forward(down, x), y, cfg).loss) /
                        (2.0 * step);
            double denom = std::max({1.0, std::abs(fd), std::abs(grad[i])});
            CHECK(std::abs(grad[i] - fd) / denom <= 1e-4);
        }
    }
}

TEST_CASE("train_local with zero learning rate is the identity") {
    SynthSpec spec{40, 6, 4, 2, 0.0, 2, 0.1, 9};
    auto ds = generate_synthetic(spec);
    auto params = init_params(ModelShape{4, 6, 0}, 1);
    TrainConfig tcfg;
    tcfg.learning_rate = 0.0;
    tcfg.batch_size = 16;
    auto [out, loss] = train_local(params, ds, tcfg, AslConfig{});
    CHECK(out == params);
    CHECK(std::isfinite(loss));
}

TEST_CASE("loss decreases epoch over epoch on one separable sample") {
    MultiLabelDataset ds;
    ds.features = Matrix(1, 3);
    ds.features.at(0, 0) = 1.0;
    ds.labels = LabelMatrix(1, 2);
    ds.labels.set(0, 0, 1);

    auto params = init_params(ModelShape{3, 2, 0}, 4);
    TrainConfig tcfg;
    tcfg.learning_rate = 0.05;
    tcfg.weight_decay = 0.0;
    tcfg.batch_size = 1;
    tcfg.local_epochs = 1;

    double prev = std::numeric_limits<double>::infinity();
    for (int epoch = 0; epoch < 10; ++epoch) {
        auto [next, loss] = train_local(params, ds, tcfg, AslConfig{});
        params = std::move(next);
        CHECK(loss < prev);
        prev = loss;
    }
}

TEST_CASE("train_local is deterministic given seed") {
    SynthSpec spec{120, 8, 5, 2, 0.2, 2, 0.3, 15};
    auto ds = generate_synthetic(spec);
    auto params = init_params(ModelShape{5, 8, 3}, 2);
    TrainConfig tcfg;
    tcfg.batch_size = 32;
    tcfg.learning_rate = 1e-3;
    tcfg.seed = 77;
    auto [a, la] = train_local(params, ds, tcfg, AslConfig{});
    auto [b, lb] = train_local(params, ds, tcfg, AslConfig{});
    CHECK(a == b);
    CHECK(la == lb);
}

TEST_CASE("params survive a save/load round trip") {
    auto params = init_params(ModelShape{5, 3, 4}, 6);
    auto path = std::filesystem::temp_directory_path() / "flagfed_params.bin";
    save_params(params, path.string());
    CHECK(load_params(path.string()) == params);
    std::filesystem::remove(path);
}
