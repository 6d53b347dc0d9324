#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flagfed/metrics.hpp"
#include "flagfed/model.hpp"
#include "flagfed/partition.hpp"

namespace flagfed {

struct AggregationStrategy {
    enum class Kind { FedAvg, Flag, LocalOnly, Centralized };
    Kind kind = Kind::FedAvg;
    double alpha = 0.3;  // FLAG only

    static AggregationStrategy fedavg() { return {Kind::FedAvg, 0.0}; }
    static AggregationStrategy flag(double alpha) { return {Kind::Flag, alpha}; }
    static AggregationStrategy local_only() { return {Kind::LocalOnly, 0.0}; }
    static AggregationStrategy centralized() { return {Kind::Centralized, 0.0}; }
};

// Per-label positive counts; the only client statistic the server sees.
struct LabelStats {
    std::size_t client_id = 0;
    std::vector<std::uint64_t> positive_counts;
};

LabelStats collect_label_stats(std::size_t client_id, const MultiLabelDataset& train);

// FLAG weight: sum over labels of count^alpha with 0^alpha := 0, so alpha=0
// counts the distinct labels present.
double label_weight(const LabelStats& stats, double alpha);

// Normalized weighted coordinate-wise means.
ModelParams aggregate_flag(const std::vector<ModelParams>& client_params,
                           const std::vector<double>& weights);
ModelParams aggregate_fedavg(const std::vector<ModelParams>& client_params,
                             const std::vector<std::size_t>& sample_counts);

struct FederationState {
    std::optional<ModelParams> global_params;  // absent for LocalOnly
    std::vector<ModelParams> client_params;
    std::size_t round = 0;
    std::vector<RoundRecord> log;
    std::vector<std::vector<double>> per_client_loss;  // one entry per round
    std::vector<double> round_wall_seconds;
};

struct FederationOptions {
    std::size_t hidden = 0;          // model hidden width, 0 = linear
    std::size_t max_threads = 0;     // 0 = serial; overridden by FLAGFED_THREADS when set
    std::string checkpoint_dir;      // round_<r>.params written here when non-empty
};

// One communication round: broadcast global params, train every client
// locally, aggregate per strategy, evaluate. FLAG label weights are computed
// once before round 1. Deterministic given seed under any thread count.
FederationState run_federation(const std::vector<ClientShard>& shards,
                               const AggregationStrategy& strategy, std::size_t rounds,
                               const TrainConfig& tcfg, const AslConfig& acfg,
                               std::uint64_t seed, const FederationOptions& opts = {});

// rounds.csv: round, client_id (or "global"), map, loss, wall_seconds.
void write_round_log(const FederationState& state, const std::string& path);

}  // namespace flagfed
