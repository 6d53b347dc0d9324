#include "flagfed/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "flagfed/errors.hpp"
#include "json.hpp"

namespace flagfed {

namespace {

double mean(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double RoundRecord::amap() const { return mean(per_client_map); }

double RoundRecord::wmap() const {
    return *std::min_element(per_client_map.begin(), per_client_map.end());
}

double RoundRecord::gmap() const {
    if (!global_map_per_client) throw IntegrityError("RoundRecord: no global model metrics");
    return mean(*global_map_per_client);
}

double average_precision(const std::vector<double>& scores,
                         const std::vector<std::uint8_t>& targets) {
    if (scores.size() != targets.size())
        throw DimensionError("average_precision: scores/targets length mismatch");
    const std::size_t m = scores.size();

    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b];  // ties keep ascending original index
    });

    double sum = 0.0;
    std::size_t positives = 0;
    for (std::size_t rank = 1; rank <= m; ++rank) {
        if (!targets[order[rank - 1]]) continue;
        ++positives;
        sum += static_cast<double>(positives) / static_cast<double>(rank);
    }
    if (positives == 0) throw DegenerateError("average_precision: no positive targets");
    return sum / static_cast<double>(positives);
}

double mean_average_precision(const Matrix& probs, const LabelMatrix& targets) {
    if (probs.rows != targets.rows || probs.cols != targets.cols)
        throw DimensionError("mean_average_precision: shape mismatch");

    double sum = 0.0;
    std::size_t counted = 0;
    std::vector<double> scores(probs.rows);
    std::vector<std::uint8_t> col(probs.rows);
    for (std::size_t j = 0; j < probs.cols; ++j) {
        bool any = false;
        for (std::size_t i = 0; i < probs.rows; ++i) {
            scores[i] = probs.at(i, j);
            col[i] = targets.at(i, j);
            any = any || col[i];
        }
        if (!any) continue;
        sum += average_precision(scores, col);
        ++counted;
    }
    if (counted == 0) throw DegenerateError("mean_average_precision: no label has a positive");
    return sum / static_cast<double>(counted);
}

double evaluate_map(const ModelParams& params, const MultiLabelDataset& val) {
    return mean_average_precision(forward(params, val.features), val.labels);
}

RoundRecord evaluate_round(std::size_t round, const std::vector<ModelParams>& client_params,
                           const std::optional<ModelParams>& global_params,
                           const std::vector<ClientShard>& shards, double mean_train_loss) {
    if (client_params.size() != shards.size())
        throw DimensionError("evaluate_round: params/shards count mismatch");
    RoundRecord rec;
    rec.round = round;
    rec.mean_train_loss = mean_train_loss;
    rec.per_client_map.resize(shards.size());
    for (std::size_t c = 0; c < shards.size(); ++c) {
        try {
            rec.per_client_map[c] = evaluate_map(client_params[c], shards[c].val);
        } catch (const DegenerateError& e) {
            throw DegenerateError("client " + std::to_string(c) + ": " + e.what());
        }
    }
    if (global_params) {
        std::vector<double> g(shards.size());
        for (std::size_t c = 0; c < shards.size(); ++c) {
            try {
                g[c] = evaluate_map(*global_params, shards[c].val);
            } catch (const DegenerateError& e) {
                throw DegenerateError("client " + std::to_string(c) + ": " + e.what());
            }
        }
        rec.global_map_per_client = std::move(g);
    }
    return rec;
}

ConvergenceResult convergence(const std::vector<RoundRecord>& log, double target_fraction,
                              double centralized_map, std::size_t local_epochs) {
    if (log.empty()) throw ConfigError("convergence: empty round log");
    if (target_fraction <= 0.0 || target_fraction > 1.0)
        throw ConfigError("convergence: target_fraction must be in (0,1]");

    ConvergenceResult res;
    res.target_map = target_fraction * centralized_map;
    bool first = true;
    for (const auto& rec : log) {
        double amap = rec.amap();
        if (first || amap > res.best_map) {
            res.best_map = amap;
            res.best_round = rec.round;
            first = false;
        }
        if (res.rounds_to_target == kNeverReached && amap >= res.target_map)
            res.rounds_to_target = rec.round;
    }
    if (res.reached()) res.epochs_to_target = res.rounds_to_target * local_epochs;
    return res;
}

void save_convergence(const ConvergenceResult& result, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path);
    nlohmann::json j;
    j["target_map"] = result.target_map;
    if (result.reached()) {
        j["rounds_to_target"] = result.rounds_to_target;
        j["epochs_to_target"] = result.epochs_to_target;
    } else {
        j["rounds_to_target"] = "never";
        j["epochs_to_target"] = "never";
    }
    j["best_map"] = result.best_map;
    j["best_round"] = result.best_round;
    out << j.dump(2) << "\n";
}

}  // namespace flagfed
