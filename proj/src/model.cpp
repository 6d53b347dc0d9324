#include "flagfed/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "flagfed/errors.hpp"
#include "json.hpp"

namespace flagfed {

namespace {

constexpr double kProbClamp = 1e-12;

double sigmoid(double z) {
    double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    return std::clamp(p, kProbClamp, 1.0 - kProbClamp);
}

void check_shape(const ModelShape& shape) {
    if (shape.d == 0 || shape.l == 0)
        throw ConfigError("model shape: feature and label dimensions must be >= 1");
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed ^ (stream * 0x9e3779b97f4a7c15ULL) ^ 0xd1b54a32d192ed03ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

struct ParamView {
    // linear: w (l x d), b (l); hidden: w1 (h x d), b1 (h), w2 (l x h), b2 (l)
    const double* w1;
    const double* b1;
    const double* w2;
    const double* b2;
};

ParamView view(const ModelParams& p) {
    const auto& s = p.shape;
    const double* base = p.values.data();
    if (s.hidden == 0) return {base, base + s.d * s.l, nullptr, nullptr};
    return {base, base + s.d * s.hidden, base + s.d * s.hidden + s.hidden,
            base + s.d * s.hidden + s.hidden + s.hidden * s.l};
}

}  // namespace

ModelParams init_params(const ModelShape& shape, std::uint64_t seed) {
    check_shape(shape);
    ModelParams p;
    p.shape = shape;
    p.values.assign(shape.param_count(), 0.0);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    if (shape.hidden == 0) {
        double scale = 1.0 / std::sqrt(static_cast<double>(shape.d));
        for (std::size_t i = 0; i < shape.d * shape.l; ++i) p.values[i] = scale * unit(rng);
    } else {
        double s1 = 1.0 / std::sqrt(static_cast<double>(shape.d));
        double s2 = 1.0 / std::sqrt(static_cast<double>(shape.hidden));
        std::size_t off = 0;
        for (std::size_t i = 0; i < shape.d * shape.hidden; ++i) p.values[off++] = s1 * unit(rng);
        off += shape.hidden;  // b1 stays zero
        for (std::size_t i = 0; i < shape.hidden * shape.l; ++i) p.values[off++] = s2 * unit(rng);
    }
    return p;
}

Matrix forward(const ModelParams& params, const Matrix& features) {
    const auto& s = params.shape;
    if (features.cols != s.d)
        throw DimensionError("forward: feature width " + std::to_string(features.cols) +
                             " does not match model d=" + std::to_string(s.d));
    const std::size_t b = features.rows;
    auto pv = view(params);
    Matrix probs(b, s.l);

    if (s.hidden == 0) {
        for (std::size_t i = 0; i < b; ++i) {
            const double* x = features.row(i);
            for (std::size_t j = 0; j < s.l; ++j) {
                double z = pv.b1[j];
                const double* w = pv.w1 + j * s.d;
                for (std::size_t f = 0; f < s.d; ++f) z += w[f] * x[f];
                probs.at(i, j) = sigmoid(z);
            }
        }
        return probs;
    }

    std::vector<double> h(s.hidden);
    for (std::size_t i = 0; i < b; ++i) {
        const double* x = features.row(i);
        for (std::size_t u = 0; u < s.hidden; ++u) {
            double z = pv.b1[u];
            const double* w = pv.w1 + u * s.d;
            for (std::size_t f = 0; f < s.d; ++f) z += w[f] * x[f];
            h[u] = std::tanh(z);
        }
        for (std::size_t j = 0; j < s.l; ++j) {
            double z = pv.b2[j];
            const double* w = pv.w2 + j * s.hidden;
            for (std::size_t u = 0; u < s.hidden; ++u) z += w[u] * h[u];
            probs.at(i, j) = sigmoid(z);
        }
    }
    return probs;
}

LossGrad asl_loss(const Matrix& probs, const LabelMatrix& targets, const AslConfig& cfg) {
    if (probs.rows != targets.rows || probs.cols != targets.cols)
        throw DimensionError("asl_loss: probs/targets shape mismatch");
    if (cfg.eps <= 0.0) throw ConfigError("asl_loss: eps must be positive");

    const double count = static_cast<double>(probs.rows * probs.cols);
    LossGrad out;
    out.dprobs = Matrix(probs.rows, probs.cols);
    double sum = 0.0;

    for (std::size_t i = 0; i < probs.rows; ++i) {
        for (std::size_t j = 0; j < probs.cols; ++j) {
            double p = probs.at(i, j);
            if (!(p > 0.0 && p < 1.0))
                throw DomainError("asl_loss: probability outside (0,1)");
            double term, dterm;
            if (targets.at(i, j)) {
                double lp = std::log(std::clamp(p, cfg.eps, 1.0));
                double dlp = p > cfg.eps ? 1.0 / p : 0.0;
                double focus = std::pow(1.0 - p, cfg.gamma_pos);
                term = focus * lp;
                dterm = focus * dlp;
                if (cfg.gamma_pos > 0.0)
                    dterm -= cfg.gamma_pos * std::pow(1.0 - p, cfg.gamma_pos - 1.0) * lp;
            } else {
                double pm = std::max(p - cfg.margin, 0.0);
                if (pm == 0.0) {
                    term = 0.0;
                    dterm = 0.0;
                } else {
                    double ln1m = std::log(std::clamp(1.0 - pm, cfg.eps, 1.0));
                    double dln1m = 1.0 - pm > cfg.eps ? -1.0 / (1.0 - pm) : 0.0;
                    double focus = std::pow(pm, cfg.gamma_neg);
                    term = focus * ln1m;
                    dterm = focus * dln1m;
                    if (cfg.gamma_neg > 0.0)
                        dterm += cfg.gamma_neg * std::pow(pm, cfg.gamma_neg - 1.0) * ln1m;
                }
            }
            sum += term;
            out.dprobs.at(i, j) = -dterm / count;
        }
    }
    out.loss = -sum / count;
    return out;
}

std::pair<double, std::vector<double>> loss_and_param_grad(const ModelParams& params,
                                                           const Matrix& features,
                                                           const LabelMatrix& targets,
                                                           const AslConfig& cfg) {
    const auto& s = params.shape;
    const std::size_t b = features.rows;
    auto pv = view(params);

    Matrix probs = forward(params, features);
    LossGrad lg = asl_loss(probs, targets, cfg);

    std::vector<double> grad(params.values.size(), 0.0);

    if (s.hidden == 0) {
        double* gw = grad.data();
        double* gb = grad.data() + s.d * s.l;
        for (std::size_t i = 0; i < b; ++i) {
            const double* x = features.row(i);
            for (std::size_t j = 0; j < s.l; ++j) {
                double p = probs.at(i, j);
                double dz = lg.dprobs.at(i, j) * p * (1.0 - p);
                gb[j] += dz;
                double* w = gw + j * s.d;
                for (std::size_t f = 0; f < s.d; ++f) w[f] += dz * x[f];
            }
        }
        return {lg.loss, std::move(grad)};
    }

    double* gw1 = grad.data();
    double* gb1 = grad.data() + s.d * s.hidden;
    double* gw2 = gb1 + s.hidden;
    double* gb2 = gw2 + s.hidden * s.l;
    std::vector<double> h(s.hidden), dh(s.hidden);
    for (std::size_t i = 0; i < b; ++i) {
        const double* x = features.row(i);
        for (std::size_t u = 0; u < s.hidden; ++u) {
            double z = pv.b1[u];
            const double* w = pv.w1 + u * s.d;
            for (std::size_t f = 0; f < s.d; ++f) z += w[f] * x[f];
            h[u] = std::tanh(z);
        }
        std::fill(dh.begin(), dh.end(), 0.0);
        for (std::size_t j = 0; j < s.l; ++j) {
            double p = probs.at(i, j);
            double dz = lg.dprobs.at(i, j) * p * (1.0 - p);
            gb2[j] += dz;
            const double* w = pv.w2 + j * s.hidden;
            double* gw = gw2 + j * s.hidden;
            for (std::size_t u = 0; u < s.hidden; ++u) {
                gw[u] += dz * h[u];
                dh[u] += dz * w[u];
            }
        }
        for (std::size_t u = 0; u < s.hidden; ++u) {
            double dz = dh[u] * (1.0 - h[u] * h[u]);
            gb1[u] += dz;
            double* w = gw1 + u * s.d;
            for (std::size_t f = 0; f < s.d; ++f) w[f] += dz * x[f];
        }
    }
    return {lg.loss, std::move(grad)};
}

std::pair<ModelParams, double> train_local(const ModelParams& params,
                                           const MultiLabelDataset& shard_train,
                                           const TrainConfig& tcfg, const AslConfig& acfg) {
    if (shard_train.n_samples() == 0) throw ConfigError("train_local: empty shard");
    if (tcfg.batch_size == 0) throw ConfigError("train_local: batch_size must be >= 1");
    if (tcfg.local_epochs == 0) throw ConfigError("train_local: local_epochs must be >= 1");

    constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    const std::size_t n = shard_train.n_samples();
    const std::size_t np = params.values.size();

    ModelParams cur = params;
    std::vector<double> m(np, 0.0), v(np, 0.0);
    std::size_t step = 0;
    double last_epoch_loss = 0.0;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 0; epoch < tcfg.local_epochs; ++epoch) {
        std::mt19937_64 rng(mix_seed(tcfg.seed, epoch));
        std::shuffle(order.begin(), order.end(), rng);

        double epoch_loss = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < n; start += tcfg.batch_size) {
            std::size_t size = std::min(tcfg.batch_size, n - start);
            Matrix bx(size, shard_train.n_features());
            LabelMatrix by(size, shard_train.n_labels());
            for (std::size_t r = 0; r < size; ++r) {
                std::size_t src = order[start + r];
                std::copy(shard_train.features.row(src),
                          shard_train.features.row(src) + bx.cols, bx.row(r));
                std::copy(shard_train.labels.row(src), shard_train.labels.row(src) + by.cols,
                          by.bits.begin() + r * by.cols);
            }

            auto [loss, grad] = loss_and_param_grad(cur, bx, by, acfg);
            if (!std::isfinite(loss))
                throw DivergenceError("train_local: non-finite loss at epoch " +
                                      std::to_string(epoch) + ", batch " +
                                      std::to_string(n_batches));
            epoch_loss += loss;
            ++n_batches;

            ++step;
            double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            for (std::size_t i = 0; i < np; ++i) {
                m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + adam_eps);
                cur.values[i] -= tcfg.learning_rate * (update + tcfg.weight_decay * cur.values[i]);
            }
        }
        last_epoch_loss = epoch_loss / static_cast<double>(n_batches);
    }
    return {std::move(cur), last_epoch_loss};
}

void save_params(const ModelParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open for writing: " + path);
    nlohmann::json header = {{"d", params.shape.d},
                             {"l", params.shape.l},
                             {"hidden", params.shape.hidden},
                             {"count", params.values.size()}};
    out << header.dump() << "\n";
    out.write(reinterpret_cast<const char*>(params.values.data()),
              static_cast<std::streamsize>(params.values.size() * sizeof(double)));
    if (!out) throw ConfigError("write failed: " + path);
}

ModelParams load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": missing header");
    ModelParams p;
    std::size_t count;
    try {
        auto header = nlohmann::json::parse(line);
        p.shape.d = header.at("d").get<std::size_t>();
        p.shape.l = header.at("l").get<std::size_t>();
        p.shape.hidden = header.at("hidden").get<std::size_t>();
        count = header.at("count").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": bad header: " + e.what());
    }
    if (count != p.shape.param_count())
        throw IntegrityError(path + ": parameter count does not match shape");
    p.values.resize(count);
    in.read(reinterpret_cast<char*>(p.values.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != count * sizeof(double))
        throw IntegrityError(path + ": truncated parameter payload");
    return p;
}

}  // namespace flagfed
