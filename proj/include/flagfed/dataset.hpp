#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace flagfed {

// N x L binary label assignments, row-major.
struct LabelMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<std::uint8_t> bits;  // rows*cols entries in {0,1}

    LabelMatrix() = default;
    LabelMatrix(std::size_t n, std::size_t l) : rows(n), cols(l), bits(n * l, 0) {}

    std::uint8_t at(std::size_t r, std::size_t c) const { return bits[r * cols + c]; }
    void set(std::size_t r, std::size_t c, std::uint8_t v) { bits[r * cols + c] = v; }
    const std::uint8_t* row(std::size_t r) const { return bits.data() + r * cols; }

    bool operator==(const LabelMatrix&) const = default;
};

// Dense real-valued matrix, row-major.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t n, std::size_t d) : rows(n), cols(d), data(n * d, 0.0) {}

    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }
    double* row(std::size_t r) { return data.data() + r * cols; }

    bool operator==(const Matrix&) const = default;
};

struct MultiLabelDataset {
    Matrix features;                       // N x D
    LabelMatrix labels;                    // N x L
    std::vector<std::string> label_names;  // L entries
    std::vector<std::size_t> themes;       // N entries when synthetic, else empty

    std::size_t n_samples() const { return labels.rows; }
    std::size_t n_labels() const { return labels.cols; }
    std::size_t n_features() const { return features.cols; }

    bool operator==(const MultiLabelDataset&) const = default;
};

struct SynthSpec {
    std::size_t n_samples = 0;
    std::size_t n_labels = 0;
    std::size_t n_features = 0;
    std::size_t n_themes = 1;
    double theme_overlap = 0.0;  // probability of one extra out-of-theme label
    std::size_t label_density = 1;
    double noise_std = 0.0;
    std::uint64_t seed = 0;
};

// Generates a dataset with planted label themes. Labels are split into
// n_themes contiguous groups; each sample draws label_density distinct labels
// from one group, optionally one label outside it, and its feature vector is
// the sum of per-label prototypes plus Gaussian noise. sample_stream selects
// an independent sampling stream over the same prototypes and theme layout.
MultiLabelDataset generate_synthetic(const SynthSpec& spec, std::uint64_t sample_stream = 0);

// Contiguous label groups used by the generator for a given spec.
std::vector<std::vector<std::size_t>> theme_label_groups(std::size_t n_labels,
                                                         std::size_t n_themes);

// JSON-lines format: one header object, then one {"x":[...],"y":[...]} line
// per sample with y holding ascending positive label indices.
void save_dataset(const MultiLabelDataset& ds, const std::string& path);
MultiLabelDataset load_dataset(const std::string& path);

}  // namespace flagfed
