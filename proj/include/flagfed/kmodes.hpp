#pragma once

#include <cstdint>
#include <vector>

#include "flagfed/dataset.hpp"

namespace flagfed {

struct KModesModel {
    std::size_t k = 0;
    LabelMatrix centers;                          // k x L binary modes
    std::size_t iterations_run = 0;
    std::uint64_t total_dissimilarity = 0;        // objective at termination
    std::vector<std::uint64_t> objective_history; // objective after each assignment step
};

struct ClusterAssignment {
    std::vector<std::size_t> indices;  // length N, values in [0, k)
};

// Hamming distance between two binary vectors of equal length.
std::uint64_t dissimilarity(const std::uint8_t* x, const std::uint8_t* y, std::size_t len);
std::uint64_t dissimilarity(const std::vector<std::uint8_t>& x,
                            const std::vector<std::uint8_t>& y);

// K-modes over binary rows. Centers start as k distinct rows sampled with
// seed; assignment ties break toward the lowest cluster id and mode ties
// toward 1. Empty clusters are reseeded with the row farthest from its
// assigned center. Deterministic given seed.
std::pair<KModesModel, ClusterAssignment> kmodes_fit(const LabelMatrix& labels, std::size_t k,
                                                     std::uint64_t seed,
                                                     std::size_t max_iter = 100);

// Same loop with caller-provided initial centers.
std::pair<KModesModel, ClusterAssignment> kmodes_fit_with_centers(const LabelMatrix& labels,
                                                                  const LabelMatrix& initial_centers,
                                                                  std::size_t max_iter = 100);

// Nearest-center assignment with fixed centers.
ClusterAssignment kmodes_transform(const KModesModel& model, const LabelMatrix& labels);

}  // namespace flagfed
