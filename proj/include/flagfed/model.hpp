#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flagfed/dataset.hpp"

namespace flagfed {

// (D, L, H); H = 0 means a plain linear classifier.
struct ModelShape {
    std::size_t d = 0;
    std::size_t l = 0;
    std::size_t hidden = 0;

    std::size_t param_count() const {
        return hidden == 0 ? d * l + l : d * hidden + hidden + hidden * l + l;
    }
    bool operator==(const ModelShape&) const = default;
};

struct ModelParams {
    ModelShape shape;
    std::vector<double> values;

    bool operator==(const ModelParams&) const = default;
};

struct AslConfig {
    double gamma_pos = 0.0;
    double gamma_neg = 4.0;
    double margin = 0.05;
    double eps = 1e-8;  // log-argument clamp
};

struct TrainConfig {
    std::size_t batch_size = 128;
    double learning_rate = 1e-4;
    double weight_decay = 1e-4;
    std::size_t local_epochs = 4;
    std::uint64_t seed = 0;
};

// Weights ~ N(0, 1/fan_in), biases zero. Deterministic given seed.
ModelParams init_params(const ModelShape& shape, std::uint64_t seed);

// Per-label sigmoid probabilities, B x L. Hidden layer uses tanh.
Matrix forward(const ModelParams& params, const Matrix& features);

struct LossGrad {
    double loss = 0.0;
    Matrix dprobs;  // d loss / d probs, B x L
};

// Asymmetric loss: positives get (1-p)^g+ focusing, negatives get margin
// shifting p_m = max(p - m, 0) and (p_m)^g- focusing. Log arguments are
// clamped to [eps, 1]; the gradient is exact for the clamped function.
LossGrad asl_loss(const Matrix& probs, const LabelMatrix& targets, const AslConfig& cfg);

// Loss plus its gradient with respect to the flat parameter vector.
std::pair<double, std::vector<double>> loss_and_param_grad(const ModelParams& params,
                                                           const Matrix& features,
                                                           const LabelMatrix& targets,
                                                           const AslConfig& cfg);

// Mini-batch Adam with decoupled weight decay; batch order reshuffled each
// epoch from tcfg.seed and the epoch index. Returns the updated params and
// the final epoch's mean batch loss.
std::pair<ModelParams, double> train_local(const ModelParams& params,
                                           const MultiLabelDataset& shard_train,
                                           const TrainConfig& tcfg, const AslConfig& acfg);

// Checkpoint format: one JSON shape header line, then the flat parameter
// vector as little-endian 64-bit floats.
void save_params(const ModelParams& params, const std::string& path);
ModelParams load_params(const std::string& path);

}  // namespace flagfed
