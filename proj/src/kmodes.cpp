#include "flagfed/kmodes.hpp"

#include <algorithm>
#include <cassert>
#include <limits>
#include <numeric>
#include <random>

#include "flagfed/errors.hpp"

namespace flagfed {

std::uint64_t dissimilarity(const std::uint8_t* x, const std::uint8_t* y, std::size_t len) {
    std::uint64_t d = 0;
    for (std::size_t j = 0; j < len; ++j) d += (x[j] != y[j]);
    return d;
}

std::uint64_t dissimilarity(const std::vector<std::uint8_t>& x,
                            const std::vector<std::uint8_t>& y) {
    if (x.size() != y.size())
        throw DimensionError("dissimilarity: length mismatch " + std::to_string(x.size()) +
                             " vs " + std::to_string(y.size()));
    return dissimilarity(x.data(), y.data(), x.size());
}

namespace {

std::size_t nearest_center(const LabelMatrix& centers, const std::uint8_t* row, std::size_t l) {
    std::size_t best = 0;
    std::uint64_t best_d = std::numeric_limits<std::uint64_t>::max();
    for (std::size_t c = 0; c < centers.rows; ++c) {
        std::uint64_t d = dissimilarity(centers.row(c), row, l);
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

std::pair<KModesModel, ClusterAssignment> run_kmodes(const LabelMatrix& labels,
                                                     LabelMatrix centers, std::size_t max_iter) {
    const std::size_t n = labels.rows;
    const std::size_t l = labels.cols;
    const std::size_t k = centers.rows;
    if (max_iter == 0) throw ConfigError("kmodes: max_iter must be >= 1");

    KModesModel model;
    model.k = k;
    ClusterAssignment assign;
    assign.indices.assign(n, 0);

    std::vector<std::uint64_t> row_dist(n, 0);
    std::vector<std::size_t> cluster_size(k, 0);
    bool changed = true;

    for (std::size_t iter = 0; iter < max_iter && changed; ++iter) {
        changed = (iter == 0);
        std::fill(cluster_size.begin(), cluster_size.end(), 0);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t c = nearest_center(centers, labels.row(i), l);
            if (c != assign.indices[i]) changed = true;
            assign.indices[i] = c;
            row_dist[i] = dissimilarity(centers.row(c), labels.row(i), l);
            ++cluster_size[c];
        }

        // reseed each empty cluster with the worst-fitting row; donors must
        // keep at least one row so the repair cannot cascade
        for (std::size_t c = 0; c < k; ++c) {
            if (cluster_size[c] != 0) continue;
            std::size_t far = n;
            for (std::size_t i = 0; i < n; ++i) {
                if (cluster_size[assign.indices[i]] < 2) continue;
                if (far == n || row_dist[i] > row_dist[far]) far = i;
            }
            assert(far < n);  // k <= n guarantees a donor exists
            --cluster_size[assign.indices[far]];
            assign.indices[far] = c;
            ++cluster_size[c];
            std::copy(labels.row(far), labels.row(far) + l, centers.bits.begin() + c * l);
            row_dist[far] = 0;
            changed = true;
        }

        std::uint64_t objective = std::accumulate(row_dist.begin(), row_dist.end(), 0ULL);
        assert(model.objective_history.empty() || objective <= model.objective_history.back());
        model.objective_history.push_back(objective);
        model.iterations_run = iter + 1;

        if (!changed) break;

        // center update: coordinate-wise mode per cluster, ties toward 1
        std::vector<std::uint32_t> ones(k * l, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint8_t* row = labels.row(i);
            std::uint32_t* acc = ones.data() + assign.indices[i] * l;
            for (std::size_t j = 0; j < l; ++j) acc[j] += row[j];
        }
        for (std::size_t c = 0; c < k; ++c)
            for (std::size_t j = 0; j < l; ++j)
                centers.set(c, j, 2 * ones[c * l + j] >= cluster_size[c] ? 1 : 0);
    }

    model.centers = std::move(centers);
    model.total_dissimilarity = model.objective_history.back();
    return {std::move(model), std::move(assign)};
}

}  // namespace

std::pair<KModesModel, ClusterAssignment> kmodes_fit(const LabelMatrix& labels, std::size_t k,
                                                     std::uint64_t seed, std::size_t max_iter) {
    if (k == 0) throw ConfigError("kmodes: k must be >= 1");
    if (k > labels.rows)
        throw ConfigError("kmodes: k=" + std::to_string(k) + " exceeds sample count " +
                          std::to_string(labels.rows));

    // Farthest-point init over data rows: a seeded first row, then greedily
    // the row maximizing the distance to its nearest chosen center (ties to
    // the lowest row index). Plain uniform row sampling routinely leaves
    // well-separated row groups uncovered and stalls in poor local minima.
    const std::size_t n = labels.rows;
    const std::size_t l = labels.cols;
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> picked{std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)};
    std::vector<std::uint64_t> min_dist(n);
    for (std::size_t i = 0; i < n; ++i)
        min_dist[i] = dissimilarity(labels.row(picked[0]), labels.row(i), l);
    while (picked.size() < k) {
        std::size_t far = 0;
        for (std::size_t i = 1; i < n; ++i)
            if (min_dist[i] > min_dist[far]) far = i;
        picked.push_back(far);
        for (std::size_t i = 0; i < n; ++i)
            min_dist[i] = std::min(min_dist[i], dissimilarity(labels.row(far), labels.row(i), l));
    }

    LabelMatrix centers(k, labels.cols);
    for (std::size_t c = 0; c < k; ++c)
        std::copy(labels.row(picked[c]), labels.row(picked[c]) + labels.cols,
                  centers.bits.begin() + c * labels.cols);
    return run_kmodes(labels, std::move(centers), max_iter);
}

std::pair<KModesModel, ClusterAssignment> kmodes_fit_with_centers(const LabelMatrix& labels,
                                                                  const LabelMatrix& initial_centers,
                                                                  std::size_t max_iter) {
    if (initial_centers.rows == 0) throw ConfigError("kmodes: k must be >= 1");
    if (initial_centers.cols != labels.cols)
        throw DimensionError("kmodes: center width " + std::to_string(initial_centers.cols) +
                             " does not match label width " + std::to_string(labels.cols));
    return run_kmodes(labels, initial_centers, max_iter);
}

ClusterAssignment kmodes_transform(const KModesModel& model, const LabelMatrix& labels) {
    if (model.centers.cols != labels.cols)
        throw DimensionError("kmodes transform: label width " + std::to_string(labels.cols) +
                             " does not match model width " + std::to_string(model.centers.cols));
    ClusterAssignment assign;
    assign.indices.resize(labels.rows);
    for (std::size_t i = 0; i < labels.rows; ++i)
        assign.indices[i] = nearest_center(model.centers, labels.row(i), labels.cols);
    return assign;
}

}  // namespace flagfed
