#include "flagfed/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <random>

#include "flagfed/errors.hpp"
#include "json.hpp"

namespace flagfed {

namespace {

void validate(const SynthSpec& s) {
    if (s.n_samples == 0) throw ConfigError("synth: n_samples must be >= 1");
    if (s.n_labels == 0) throw ConfigError("synth: n_labels must be >= 1");
    if (s.n_features == 0) throw ConfigError("synth: n_features must be >= 1");
    if (s.n_themes == 0) throw ConfigError("synth: n_themes must be >= 1");
    if (s.n_themes > s.n_labels) throw ConfigError("synth: n_themes must be <= n_labels");
    if (s.label_density == 0) throw ConfigError("synth: label_density must be >= 1");
    if (s.theme_overlap < 0.0 || s.theme_overlap > 1.0)
        throw ConfigError("synth: theme_overlap must be in [0,1]");
    if (s.noise_std < 0.0) throw ConfigError("synth: noise_std must be >= 0");
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 step over seed xor stream
    std::uint64_t z = seed ^ (stream * 0x9e3779b97f4a7c15ULL) ^ 0xd1b54a32d192ed03ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

std::vector<std::vector<std::size_t>> theme_label_groups(std::size_t n_labels,
                                                         std::size_t n_themes) {
    std::vector<std::vector<std::size_t>> groups(n_themes);
    std::size_t base = n_labels / n_themes;
    std::size_t extra = n_labels % n_themes;
    std::size_t next = 0;
    for (std::size_t t = 0; t < n_themes; ++t) {
        std::size_t size = base + (t < extra ? 1 : 0);
        for (std::size_t j = 0; j < size; ++j) groups[t].push_back(next++);
    }
    return groups;
}

MultiLabelDataset generate_synthetic(const SynthSpec& spec, std::uint64_t sample_stream) {
    validate(spec);
    const std::size_t n = spec.n_samples;
    const std::size_t l = spec.n_labels;
    const std::size_t d = spec.n_features;

    // Prototypes depend only on spec.seed so that independent sample streams
    // (train/val) share the same feature geometry.
    std::mt19937_64 proto_rng(spec.seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    Matrix prototypes(l, d);
    for (auto& v : prototypes.data) v = unit(proto_rng);

    auto groups = theme_label_groups(l, spec.n_themes);

    std::mt19937_64 rng(mix_seed(spec.seed, sample_stream + 1));
    std::uniform_int_distribution<std::size_t> theme_pick(0, spec.n_themes - 1);
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    MultiLabelDataset ds;
    ds.features = Matrix(n, d);
    ds.labels = LabelMatrix(n, l);
    ds.themes.resize(n);
    ds.label_names.reserve(l);
    for (std::size_t j = 0; j < l; ++j) ds.label_names.push_back("label_" + std::to_string(j));

    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t theme = theme_pick(rng);
        ds.themes[i] = theme;
        const auto& group = groups[theme];

        std::size_t take = std::min<std::size_t>(spec.label_density, group.size());
        pool = group;
        for (std::size_t j = 0; j < take; ++j) {
            std::uniform_int_distribution<std::size_t> pick(j, pool.size() - 1);
            std::swap(pool[j], pool[pick(rng)]);
            ds.labels.set(i, pool[j], 1);
        }

        if (group.size() < l && coin(rng) < spec.theme_overlap) {
            // one label drawn uniformly from outside the theme group
            std::uniform_int_distribution<std::size_t> pick(0, l - group.size() - 1);
            std::size_t k = pick(rng);
            for (std::size_t j = 0; j < l; ++j) {
                if (j >= group.front() && j <= group.back()) continue;
                if (k == 0) {
                    ds.labels.set(i, j, 1);
                    break;
                }
                --k;
            }
        }

        double* x = ds.features.row(i);
        for (std::size_t j = 0; j < l; ++j) {
            if (!ds.labels.at(i, j)) continue;
            const double* p = prototypes.row(j);
            for (std::size_t f = 0; f < d; ++f) x[f] += p[f];
        }
        if (spec.noise_std > 0.0) {
            for (std::size_t f = 0; f < d; ++f) x[f] += spec.noise_std * unit(rng);
        }
    }
    return ds;
}

void save_dataset(const MultiLabelDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open for writing: " + path);

    nlohmann::json header = {{"n", ds.n_samples()},
                             {"d", ds.n_features()},
                             {"l", ds.n_labels()},
                             {"label_names", ds.label_names}};
    out << header.dump() << "\n";

    for (std::size_t i = 0; i < ds.n_samples(); ++i) {
        nlohmann::json line;
        line["x"] = std::vector<double>(ds.features.row(i), ds.features.row(i) + ds.n_features());
        std::vector<std::size_t> y;
        for (std::size_t j = 0; j < ds.n_labels(); ++j)
            if (ds.labels.at(i, j)) y.push_back(j);
        line["y"] = y;
        out << line.dump() << "\n";
    }
    if (!out) throw ConfigError("write failed: " + path);
}

MultiLabelDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open for reading: " + path);

    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ":1: missing header");

    std::size_t n, d, l;
    MultiLabelDataset ds;
    try {
        auto header = nlohmann::json::parse(line);
        n = header.at("n").get<std::size_t>();
        d = header.at("d").get<std::size_t>();
        l = header.at("l").get<std::size_t>();
        ds.label_names = header.at("label_names").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ":1: bad header: " + e.what());
    }
    if (ds.label_names.size() != l)
        throw ParseError(path + ":1: label_names length does not match l");

    ds.features = Matrix(n, d);
    ds.labels = LabelMatrix(n, l);

    std::size_t row = 0;
    bool warned_empty = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const std::size_t lineno = row + 2;
        if (row >= n)
            throw IntegrityError(path + ": header declares " + std::to_string(n) +
                                 " samples but more data lines follow");
        std::vector<double> x;
        std::vector<std::size_t> y;
        try {
            auto obj = nlohmann::json::parse(line);
            x = obj.at("x").get<std::vector<double>>();
            y = obj.at("y").get<std::vector<std::size_t>>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (x.size() != d)
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                             std::to_string(d) + " features, got " + std::to_string(x.size()));
        for (double v : x)
            if (!std::isfinite(v))
                throw ParseError(path + ":" + std::to_string(lineno) + ": non-finite feature");
        for (std::size_t j : y)
            if (j >= l)
                throw ParseError(path + ":" + std::to_string(lineno) + ": label index " +
                                 std::to_string(j) + " out of range [0," + std::to_string(l) + ")");
        if (y.empty() && !warned_empty) {
            std::cerr << "warning: " << path << ":" << lineno
                      << ": sample with empty label set\n";
            warned_empty = true;
        }
        std::copy(x.begin(), x.end(), ds.features.row(row));
        for (std::size_t j : y) ds.labels.set(row, j, 1);
        ++row;
    }
    if (row != n)
        throw IntegrityError(path + ": header declares " + std::to_string(n) +
                             " samples but file has " + std::to_string(row));
    return ds;
}

}  // namespace flagfed
