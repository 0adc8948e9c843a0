#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "nearl/config.hpp"
#include "nearl/tensor.hpp"

namespace nearl {

struct DatasetSpec {
    std::size_t n_classes = 2;
    std::size_t n_train = 512;
    std::size_t n_val = 128;
    std::size_t n_test = 128;
    std::size_t n_patches = 16;
    std::size_t patch_dim = 16;
    double signal_fraction = 0.25;
    double noise_std = 0.5;
    double class_separation = 3.0;
    std::uint64_t seed = 0;

    void validate() const;
};

// One split of patch-grid images. Pixel values are float32-representable so
// the in-memory split equals what a save/load round trip yields.
struct Split {
    std::size_t n_patches = 0;
    std::size_t patch_dim = 0;
    std::vector<double> pixels;  // size() * n_patches * patch_dim
    std::vector<std::size_t> labels;

    std::size_t size() const noexcept { return labels.size(); }
    std::span<const double> image(std::size_t i) const;
    // (|indices|, N^v, patch_dim)
    Tensor images(std::span<const std::size_t> indices) const;
    std::vector<std::size_t> labels_at(std::span<const std::size_t> indices) const;
};

struct Dataset {
    DatasetSpec spec;
    Split train;
    Split val;
    Split test;
    // Class prototypes (C x patch_dim); kept in memory only.
    std::vector<std::vector<double>> prototypes;
};

// Each sample: a random signal_fraction subset of patches holds its class
// prototype plus N(0, noise_std^2) noise, every other patch pure noise.
// Labels are balanced to within one per split; splits use distinct streams.
Dataset gen_dataset(const DatasetSpec& spec);

// "NRLD1" file: magic, version byte, spec block, then per split a sample
// count followed by (u32 label, f32 pixels...) records, all little-endian.
std::string encode_dataset(const Dataset& dataset);
Dataset decode_dataset(const std::string& bytes);
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& path);

// Error(dim_mismatch) unless the dataset fits the model's input shapes.
void check_compatible(const Dataset& dataset, const ModelConfig& config);

// Seeded per-epoch shuffle of [0, n) cut into batches; the last batch may be
// short.
std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size,
                                                 std::uint64_t seed, std::size_t epoch);

}  // namespace nearl
