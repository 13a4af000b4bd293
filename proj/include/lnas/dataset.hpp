#pragma once

#include "lnas/supernet.hpp"
#include "lnas/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace lnas {

enum class DatasetKind { teacher_net, layered_composition };

std::string_view dataset_kind_name(DatasetKind kind);

struct DatasetSizes {
    std::size_t n_train = 512;
    std::size_t n_val = 512;
    std::size_t input_dim = 8;
    std::size_t classes = 4;
    // Hidden tanh layers of the layered-composition generator.
    std::size_t depth = 4;
    // Gain of each generator layer; larger values push tanh into saturation.
    double gain = 2.0;
};

// Features are N(0, I). Labels come from argmax of a random map:
//   teacher_net:          y = argmax(x B)
//   layered_composition:  h_0 = x, h_{k+1} = tanh(h_k A_k + c_k), y = argmax(h_depth B)
// with A_k entries N(0, gain^2 / width). Samples are drawn until every class
// holds n/C (+1 for the first n mod C classes) examples, so splits are balanced.
struct SyntheticDataset {
    DatasetKind kind = DatasetKind::teacher_net;
    std::uint64_t seed = 0;
    Tensor train_x;
    std::vector<int> train_y;
    Tensor val_x;
    std::vector<int> val_y;
    std::size_t classes = 0;

    Batch train() const { return {train_x, train_y}; }
    Batch val() const { return {val_x, val_y}; }
};

SyntheticDataset make_dataset(DatasetKind kind, std::uint64_t seed, const DatasetSizes& sizes);

// Rows `idx` of (x, y).
Batch gather(const Tensor& x, std::span<const int> y, std::span<const std::size_t> idx);

} // namespace lnas
