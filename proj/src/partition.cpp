#include "flagfed/partition.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "flagfed/errors.hpp"
#include "flagfed/kmodes.hpp"
#include "json.hpp"

namespace flagfed {

namespace {

void check_split_preconditions(const MultiLabelDataset& train, const MultiLabelDataset& val,
                               std::size_t n_clients) {
    if (n_clients < 2) throw ConfigError("split: need at least 2 clients");
    if (train.n_labels() != val.n_labels())
        throw DimensionError("split: train/val label counts differ");
    if (train.n_features() != val.n_features())
        throw DimensionError("split: train/val feature widths differ");
    if (n_clients > train.n_samples())
        throw ConfigError("split: n_clients=" + std::to_string(n_clients) +
                          " exceeds train size " + std::to_string(train.n_samples()));
    if (n_clients > val.n_samples())
        throw ConfigError("split: n_clients=" + std::to_string(n_clients) + " exceeds val size " +
                          std::to_string(val.n_samples()));
}

MultiLabelDataset take_rows(const MultiLabelDataset& ds, const std::vector<std::size_t>& rows) {
    MultiLabelDataset out;
    out.features = Matrix(rows.size(), ds.n_features());
    out.labels = LabelMatrix(rows.size(), ds.n_labels());
    out.label_names = ds.label_names;
    if (!ds.themes.empty()) out.themes.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::size_t src = rows[r];
        std::copy(ds.features.row(src), ds.features.row(src) + ds.n_features(),
                  out.features.row(r));
        std::copy(ds.labels.row(src), ds.labels.row(src) + ds.n_labels(),
                  out.labels.bits.begin() + r * ds.n_labels());
        if (!ds.themes.empty()) out.themes.push_back(ds.themes[src]);
    }
    return out;
}

std::vector<std::vector<std::size_t>> group_by_client(const std::vector<std::size_t>& assign,
                                                      std::size_t n_clients) {
    std::vector<std::vector<std::size_t>> groups(n_clients);
    for (std::size_t i = 0; i < assign.size(); ++i) groups[assign[i]].push_back(i);
    return groups;
}

// Moves rows into empty groups. When centers are given the donated row is the
// one nearest the receiving client's center; otherwise it comes from the
// largest group.
void repair_empty_groups(std::vector<std::vector<std::size_t>>& groups, const LabelMatrix& labels,
                         const LabelMatrix* centers) {
    for (std::size_t c = 0; c < groups.size(); ++c) {
        if (!groups[c].empty()) continue;
        std::size_t best_group = groups.size();
        std::size_t best_pos = 0;
        std::uint64_t best_d = std::numeric_limits<std::uint64_t>::max();
        for (std::size_t g = 0; g < groups.size(); ++g) {
            if (groups[g].size() < 2) continue;
            for (std::size_t pos = 0; pos < groups[g].size(); ++pos) {
                std::uint64_t d =
                    centers ? dissimilarity(centers->row(c), labels.row(groups[g][pos]),
                                            labels.cols)
                            : labels.rows - groups[g].size();  // prefer largest donor
                if (d < best_d) {
                    best_d = d;
                    best_group = g;
                    best_pos = pos;
                }
            }
        }
        if (best_group == groups.size())
            throw IntegrityError("split repair: no donor shard with more than one row");
        groups[c].push_back(groups[best_group][best_pos]);
        groups[best_group].erase(groups[best_group].begin() + best_pos);
    }
}

std::vector<ClientShard> build_shards(const MultiLabelDataset& train, const MultiLabelDataset& val,
                                      std::vector<std::vector<std::size_t>> train_groups,
                                      std::vector<std::vector<std::size_t>> val_groups,
                                      const LabelMatrix* centers) {
    repair_empty_groups(train_groups, train.labels, centers);
    repair_empty_groups(val_groups, val.labels, centers);
    std::vector<ClientShard> shards(train_groups.size());
    for (std::size_t c = 0; c < train_groups.size(); ++c) {
        shards[c].client_id = c;
        shards[c].train = take_rows(train, train_groups[c]);
        shards[c].val = take_rows(val, val_groups[c]);
    }
    return shards;
}

}  // namespace

std::vector<ClientShard> cmda_split(const MultiLabelDataset& train, const MultiLabelDataset& val,
                                    std::size_t n_clients, std::uint64_t seed) {
    check_split_preconditions(train, val, n_clients);
    auto [model, train_assign] = kmodes_fit(train.labels, n_clients, seed);
    auto val_assign = kmodes_transform(model, val.labels);
    return build_shards(train, val, group_by_client(train_assign.indices, n_clients),
                        group_by_client(val_assign.indices, n_clients), &model.centers);
}

std::vector<ClientShard> random_split(const MultiLabelDataset& train, const MultiLabelDataset& val,
                                      std::size_t n_clients, std::uint64_t seed) {
    check_split_preconditions(train, val, n_clients);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, n_clients - 1);
    std::vector<std::size_t> train_assign(train.n_samples());
    for (auto& a : train_assign) a = pick(rng);
    std::vector<std::size_t> val_assign(val.n_samples());
    for (auto& a : val_assign) a = pick(rng);
    return build_shards(train, val, group_by_client(train_assign, n_clients),
                        group_by_client(val_assign, n_clients), nullptr);
}

std::vector<double> ldist(const LabelMatrix& shard_labels) {
    std::vector<double> counts(shard_labels.cols, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < shard_labels.rows; ++i) {
        const std::uint8_t* row = shard_labels.row(i);
        for (std::size_t j = 0; j < shard_labels.cols; ++j) {
            counts[j] += row[j];
            total += row[j];
        }
    }
    if (total == 0.0) throw DegenerateError("ldist: shard has no positive labels");
    for (auto& c : counts) c /= total;
    return counts;
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q, double epsilon) {
    if (p.size() != q.size()) throw DimensionError("kl_divergence: length mismatch");
    if (epsilon <= 0.0) throw ConfigError("kl_divergence: epsilon must be positive");
    const std::size_t l = p.size();
    const double pz = 1.0 + l * epsilon;
    double kl_pq = 0.0, kl_qp = 0.0;
    for (std::size_t j = 0; j < l; ++j) {
        double ps = (p[j] + epsilon) / pz;
        double qs = (q[j] + epsilon) / pz;
        kl_pq += ps * std::log(ps / qs);
        kl_qp += qs * std::log(qs / ps);
    }
    return 0.5 * (kl_pq + kl_qp);
}

HeterogeneityReport heterogeneity_report(const std::vector<ClientShard>& shards, double epsilon) {
    if (shards.size() < 2) throw ConfigError("heterogeneity_report: need at least 2 shards");
    const std::size_t nc = shards.size();
    HeterogeneityReport report;
    report.client_sizes.resize(nc);
    std::vector<std::vector<double>> dists(nc);
    for (std::size_t c = 0; c < nc; ++c) {
        report.client_sizes[c] = shards[c].train.n_samples();
        try {
            dists[c] = ldist(shards[c].train.labels);
        } catch (const DegenerateError&) {
            throw DegenerateError("heterogeneity_report: client " + std::to_string(c) +
                                  " has no positive train labels");
        }
    }
    const std::size_t l = dists[0].size();
    report.ldist = Matrix(nc, l);
    for (std::size_t c = 0; c < nc; ++c)
        std::copy(dists[c].begin(), dists[c].end(), report.ldist.row(c));

    report.kl_matrix = Matrix(nc, nc);
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < nc; ++a) {
        for (std::size_t b = a + 1; b < nc; ++b) {
            double d = kl_divergence(dists[a], dists[b], epsilon);
            report.kl_matrix.at(a, b) = d;
            report.kl_matrix.at(b, a) = d;
            sum += d;
            ++pairs;
        }
    }
    report.total_kl = sum / static_cast<double>(pairs);
    return report;
}

void write_heterogeneity_report(const HeterogeneityReport& report, double epsilon,
                                const std::string& method, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const std::size_t nc = report.client_sizes.size();

    auto open = [&](const std::string& name) {
        std::ofstream out(fs::path(out_dir) / name, std::ios::binary);
        if (!out) throw ConfigError("cannot write " + (fs::path(out_dir) / name).string());
        out.precision(17);
        return out;
    };

    {
        auto out = open("sizes.csv");
        out << "client_id,count\n";
        for (std::size_t c = 0; c < nc; ++c) out << c << "," << report.client_sizes[c] << "\n";
    }
    {
        auto out = open("ldist.csv");
        out << "client_id";
        for (std::size_t j = 0; j < report.ldist.cols; ++j) out << ",label_" << j;
        out << "\n";
        for (std::size_t c = 0; c < nc; ++c) {
            out << c;
            for (std::size_t j = 0; j < report.ldist.cols; ++j)
                out << "," << report.ldist.at(c, j);
            out << "\n";
        }
    }
    {
        auto out = open("kl.csv");
        out << "client_id";
        for (std::size_t c = 0; c < nc; ++c) out << "," << c;
        out << "\n";
        for (std::size_t a = 0; a < nc; ++a) {
            out << a;
            for (std::size_t b = 0; b < nc; ++b) out << "," << report.kl_matrix.at(a, b);
            out << "\n";
        }
    }
    {
        auto out = open("summary.json");
        nlohmann::json summary = {
            {"total_kl", report.total_kl}, {"epsilon", epsilon}, {"method", method}};
        out << summary.dump(2) << "\n";
    }
}

}  // namespace flagfed
