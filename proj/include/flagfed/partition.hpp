#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "flagfed/dataset.hpp"

namespace flagfed {

struct ClientShard {
    std::size_t client_id = 0;
    MultiLabelDataset train;
    MultiLabelDataset val;
};

struct HeterogeneityReport {
    std::vector<std::size_t> client_sizes;      // train sizes
    Matrix ldist;                                // N_c x L, rows sum to 1
    Matrix kl_matrix;                            // N_c x N_c symmetric, zero diagonal
    double total_kl = 0.0;                       // mean of strict upper triangle
};

// Algorithm: k-modes fit on the train labels with k = n_clients, then assign
// train rows by the fit and val rows by transform with the trained centers.
// Empty val shards are repaired by moving the nearest val row.
std::vector<ClientShard> cmda_split(const MultiLabelDataset& train, const MultiLabelDataset& val,
                                    std::size_t n_clients, std::uint64_t seed);

// Uniform random row-to-client assignment with the same repair rule.
std::vector<ClientShard> random_split(const MultiLabelDataset& train, const MultiLabelDataset& val,
                                      std::size_t n_clients, std::uint64_t seed);

// Normalized positive-label distribution: per-label positive counts over the
// total positive count.
std::vector<double> ldist(const LabelMatrix& shard_labels);

// Symmetrized KL divergence in nats after additive-epsilon smoothing and
// renormalization of both vectors.
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q,
                     double epsilon = 1e-6);

HeterogeneityReport heterogeneity_report(const std::vector<ClientShard>& shards,
                                         double epsilon = 1e-6);

// analyze outputs: sizes.csv, ldist.csv, kl.csv, summary.json under out_dir.
void write_heterogeneity_report(const HeterogeneityReport& report, double epsilon,
                                const std::string& method, const std::string& out_dir);

}  // namespace flagfed
