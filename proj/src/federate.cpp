#include "flagfed/federate.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include "flagfed/errors.hpp"

namespace flagfed {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed ^ (stream * 0x9e3779b97f4a7c15ULL) ^ 0xd1b54a32d192ed03ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::size_t resolve_threads(std::size_t max_threads, std::size_t n_tasks) {
    const char* env = std::getenv("FLAGFED_THREADS");
    std::size_t cap = max_threads;
    if (env != nullptr) cap = static_cast<std::size_t>(std::strtoull(env, nullptr, 10));
    if (cap == 0) return 1;
    std::size_t hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    return std::min({cap, hw, n_tasks});
}

// Runs fn(i) for i in [0, n); results are index-addressed so scheduling
// cannot affect them. The lowest-index exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t n_threads, Fn&& fn) {
    if (n_threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

MultiLabelDataset pool_shards(const std::vector<ClientShard>& shards) {
    std::size_t n = 0;
    for (const auto& s : shards) n += s.train.n_samples();
    MultiLabelDataset pooled;
    pooled.features = Matrix(n, shards[0].train.n_features());
    pooled.labels = LabelMatrix(n, shards[0].train.n_labels());
    pooled.label_names = shards[0].train.label_names;
    std::size_t row = 0;
    for (const auto& s : shards) {
        for (std::size_t i = 0; i < s.train.n_samples(); ++i, ++row) {
            std::copy(s.train.features.row(i), s.train.features.row(i) + pooled.features.cols,
                      pooled.features.row(row));
            std::copy(s.train.labels.row(i), s.train.labels.row(i) + pooled.labels.cols,
                      pooled.labels.bits.begin() + row * pooled.labels.cols);
        }
    }
    return pooled;
}

ModelParams weighted_mean(const std::vector<ModelParams>& client_params,
                          const std::vector<double>& weights) {
    if (client_params.empty()) throw ConfigError("aggregate: no client params");
    if (weights.size() != client_params.size())
        throw DimensionError("aggregate: weights/params count mismatch");
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw IntegrityError("aggregate: negative weight");
        total += w;
    }
    if (total <= 0.0) throw DegenerateError("aggregate: all weights are zero");

    ModelParams out = client_params[0];
    for (auto& v : out.values) v = 0.0;
    for (std::size_t c = 0; c < client_params.size(); ++c) {
        if (client_params[c].shape != out.shape)
            throw DimensionError("aggregate: parameter shape mismatch at client " +
                                 std::to_string(c));
        double w = weights[c] / total;
        for (std::size_t i = 0; i < out.values.size(); ++i)
            out.values[i] += w * client_params[c].values[i];
    }
    return out;
}

void maybe_checkpoint(const FederationOptions& opts, std::size_t round,
                      const ModelParams& params) {
    if (opts.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(opts.checkpoint_dir);
    save_params(params, (std::filesystem::path(opts.checkpoint_dir) /
                         ("round_" + std::to_string(round) + ".params"))
                            .string());
}

FederationState run_centralized(const std::vector<ClientShard>& shards, std::size_t rounds,
                                const TrainConfig& tcfg, const AslConfig& acfg,
                                std::uint64_t seed, const FederationOptions& opts) {
    MultiLabelDataset pooled = pool_shards(shards);
    ModelShape shape{pooled.n_features(), pooled.n_labels(), opts.hidden};
    ModelParams model = init_params(shape, seed);

    FederationState state;
    for (std::size_t r = 1; r <= rounds; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        TrainConfig cfg = tcfg;
        cfg.seed = mix_seed(seed, r);
        auto [next, loss] = train_local(model, pooled, cfg, acfg);
        model = std::move(next);

        RoundRecord rec;
        rec.round = r;
        rec.mean_train_loss = loss;
        rec.per_client_map.resize(shards.size());
        for (std::size_t c = 0; c < shards.size(); ++c)
            rec.per_client_map[c] = evaluate_map(model, shards[c].val);
        rec.global_map_per_client = rec.per_client_map;
        state.log.push_back(std::move(rec));
        state.per_client_loss.push_back(std::vector<double>(shards.size(), loss));
        state.round_wall_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        maybe_checkpoint(opts, r, model);
    }
    state.round = rounds;
    state.client_params.assign(shards.size(), model);
    state.global_params = std::move(model);
    return state;
}

}  // namespace

LabelStats collect_label_stats(std::size_t client_id, const MultiLabelDataset& train) {
    LabelStats stats;
    stats.client_id = client_id;
    stats.positive_counts.assign(train.n_labels(), 0);
    for (std::size_t i = 0; i < train.n_samples(); ++i) {
        const std::uint8_t* row = train.labels.row(i);
        for (std::size_t j = 0; j < train.n_labels(); ++j) stats.positive_counts[j] += row[j];
    }
    return stats;
}

double label_weight(const LabelStats& stats, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("label_weight: alpha must be in [0,1]");
    double sum = 0.0;
    for (std::uint64_t count : stats.positive_counts) {
        if (count == 0) continue;  // 0^alpha := 0 for all alpha
        sum += std::pow(static_cast<double>(count), alpha);
    }
    return sum;
}

ModelParams aggregate_flag(const std::vector<ModelParams>& client_params,
                           const std::vector<double>& weights) {
    return weighted_mean(client_params, weights);
}

ModelParams aggregate_fedavg(const std::vector<ModelParams>& client_params,
                             const std::vector<std::size_t>& sample_counts) {
    std::vector<double> weights(sample_counts.begin(), sample_counts.end());
    return weighted_mean(client_params, weights);
}

FederationState run_federation(const std::vector<ClientShard>& shards,
                               const AggregationStrategy& strategy, std::size_t rounds,
                               const TrainConfig& tcfg, const AslConfig& acfg,
                               std::uint64_t seed, const FederationOptions& opts) {
    if (rounds == 0) throw ConfigError("run_federation: rounds must be >= 1");
    if (strategy.kind == AggregationStrategy::Kind::Centralized) {
        if (shards.empty()) throw ConfigError("run_federation: no shards");
        return run_centralized(shards, rounds, tcfg, acfg, seed, opts);
    }
    if (shards.size() < 2) throw ConfigError("run_federation: need at least 2 shards");

    const std::size_t nc = shards.size();
    ModelShape shape{shards[0].train.n_features(), shards[0].train.n_labels(), opts.hidden};

    // Static, privacy-preserving statistics gathered once before round 1.
    std::vector<double> flag_weights;
    std::vector<std::size_t> sample_counts(nc);
    for (std::size_t c = 0; c < nc; ++c) sample_counts[c] = shards[c].train.n_samples();
    if (strategy.kind == AggregationStrategy::Kind::Flag) {
        flag_weights.resize(nc);
        for (std::size_t c = 0; c < nc; ++c)
            flag_weights[c] = label_weight(collect_label_stats(c, shards[c].train),
                                           strategy.alpha);
    }

    FederationState state;
    ModelParams shared_init = init_params(shape, seed);
    state.client_params.assign(nc, shared_init);
    if (strategy.kind != AggregationStrategy::Kind::LocalOnly)
        state.global_params = std::move(shared_init);

    const std::size_t n_threads = resolve_threads(opts.max_threads, nc);

    for (std::size_t r = 1; r <= rounds; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        std::vector<ModelParams> trained(nc);
        std::vector<double> losses(nc, 0.0);

        parallel_for(nc, n_threads, [&](std::size_t c) {
            const ModelParams& start =
                state.global_params ? *state.global_params : state.client_params[c];
            TrainConfig cfg = tcfg;
            cfg.seed = mix_seed(seed, r * 1000003ULL + c);
            try {
                auto [params, loss] = train_local(start, shards[c].train, cfg, acfg);
                trained[c] = std::move(params);
                losses[c] = loss;
            } catch (const DivergenceError& e) {
                throw DivergenceError("client " + std::to_string(c) + ", round " +
                                      std::to_string(r) + ": " + e.what());
            }
        });

        state.client_params = std::move(trained);
        switch (strategy.kind) {
            case AggregationStrategy::Kind::FedAvg:
                state.global_params = aggregate_fedavg(state.client_params, sample_counts);
                break;
            case AggregationStrategy::Kind::Flag:
                state.global_params = aggregate_flag(state.client_params, flag_weights);
                break;
            case AggregationStrategy::Kind::LocalOnly:
                break;  // clients keep their own params
            default:
                break;
        }

        double mean_loss = 0.0;
        for (double l : losses) mean_loss += l;
        mean_loss /= static_cast<double>(nc);

        state.log.push_back(
            evaluate_round(r, state.client_params, state.global_params, shards, mean_loss));
        state.per_client_loss.push_back(std::move(losses));
        state.round_wall_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        state.round = r;
        if (state.global_params) maybe_checkpoint(opts, r, *state.global_params);
    }
    return state;
}

void write_round_log(const FederationState& state, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path);
    out.precision(17);
    out << "round,client_id,map,loss,wall_seconds\n";
    for (std::size_t r = 0; r < state.log.size(); ++r) {
        const auto& rec = state.log[r];
        double wall = state.round_wall_seconds[r];
        for (std::size_t c = 0; c < rec.per_client_map.size(); ++c)
            out << rec.round << "," << c << "," << rec.per_client_map[c] << ","
                << state.per_client_loss[r][c] << "," << wall << "\n";
        if (rec.global_map_per_client)
            out << rec.round << ",global," << rec.gmap() << "," << rec.mean_train_loss << ","
                << wall << "\n";
    }
}

}  // namespace flagfed
