#include "lnas/rig.hpp"

namespace lnas {

Rig collapse_rig()
{
    Rig rig{CellSpec::fully_connected(2, {OpKind::skip, OpKind::zero, OpKind::nonlinear}, 8),
            6,
            DatasetSizes{},
            7,
            TabularBudget{},
            TrainConfig{}};
    rig.data.n_train = 512;
    rig.data.n_val = 512;
    rig.data.input_dim = 8;
    rig.data.classes = 4;
    rig.bench_budget.layers = rig.layers;
    rig.train.epochs = 30;
    rig.train.alpha_lr = 3e-3;
    return rig;
}

CellSpec tiny_oracle_spec()
{
    return CellSpec::fully_connected(2, {OpKind::skip, OpKind::nonlinear, OpKind::avg_scale}, 2);
}

} // namespace lnas
