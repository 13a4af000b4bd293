#pragma once

#include "lnas/dataset.hpp"
#include "lnas/search_space.hpp"
#include "lnas/tabular.hpp"
#include "lnas/trainer.hpp"

#include <cstdint>

namespace lnas {

// Desk-scale experiment rig: a 3-edge / 3-op cell over the layered-composition
// dataset, with the search schedule used by `search` and `collapse-demo`.
struct Rig {
    CellSpec spec;
    std::size_t layers;
    DatasetSizes data;
    std::uint64_t data_seed;
    TabularBudget bench_budget;
    TrainConfig train;
};

Rig collapse_rig();

// Tiny L=2 network used by estimator/oracle cross-checks (|omega| <= 60 when
// built from tiny_oracle_spec with tiny sizes).
CellSpec tiny_oracle_spec();

} // namespace lnas
