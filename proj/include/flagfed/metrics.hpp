#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "flagfed/dataset.hpp"
#include "flagfed/model.hpp"
#include "flagfed/partition.hpp"

namespace flagfed {

struct RoundRecord {
    std::size_t round = 0;
    std::vector<double> per_client_map;                         // client model on own val
    std::optional<std::vector<double>> global_map_per_client;   // global model on each val
    double mean_train_loss = 0.0;

    double amap() const;  // mean of per_client_map
    double wmap() const;  // min of per_client_map
    double gmap() const;  // mean of global_map_per_client
};

constexpr std::size_t kNeverReached = std::numeric_limits<std::size_t>::max();

struct ConvergenceResult {
    double target_map = 0.0;
    std::size_t rounds_to_target = kNeverReached;
    std::size_t epochs_to_target = kNeverReached;
    double best_map = 0.0;
    std::size_t best_round = 0;

    bool reached() const { return rounds_to_target != kNeverReached; }
};

// AP = mean over positive items of precision at their rank after sorting by
// descending score (ties by ascending original index). Requires >= 1 positive.
double average_precision(const std::vector<double>& scores,
                         const std::vector<std::uint8_t>& targets);

// Mean per-label AP over labels with at least one positive; zero-positive
// labels are excluded.
double mean_average_precision(const Matrix& probs, const LabelMatrix& targets);

// mAP of one model over one validation set.
double evaluate_map(const ModelParams& params, const MultiLabelDataset& val);

// Per-client mAP of each client's params on its own val shard, plus the
// global model's mAP on every client's val shard when global params exist.
RoundRecord evaluate_round(std::size_t round, const std::vector<ModelParams>& client_params,
                           const std::optional<ModelParams>& global_params,
                           const std::vector<ClientShard>& shards, double mean_train_loss);

// First round whose AmAP reaches target_fraction * centralized_map; falls
// back to the best round when the target is never reached.
ConvergenceResult convergence(const std::vector<RoundRecord>& log, double target_fraction,
                              double centralized_map, std::size_t local_epochs);

void save_convergence(const ConvergenceResult& result, const std::string& path);

}  // namespace flagfed
