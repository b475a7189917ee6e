"""Deterministic numerical kernels: parameter trees, splittable RNG,
registered-primitive derivative propagation, CG, and optimizers."""

from .autodiff import (
    Dual,
    DualBatch,
    Node,
    Primitive,
    Tape,
    UnsupportedPrimitiveError,
    propagate_derivatives,
    seed_duals,
    value_of,
)
from .kernels import cg_solve, cg_solve_info
from .optim import AdamWState, adam_step, adamw_step, ema_combine
from .rng import Rng
from .trees import (
    ParamTree,
    StructureMismatchError,
    TreeSpec,
    assert_same_structure,
    tree_add,
    tree_all_finite,
    tree_astype,
    tree_copy,
    tree_flatten,
    tree_items,
    tree_leaves,
    tree_map,
    tree_scale,
    tree_spec,
    tree_sub,
    tree_unflatten,
    tree_zeros_like,
)

__all__ = [
    "AdamWState",
    "Dual",
    "DualBatch",
    "Node",
    "ParamTree",
    "Primitive",
    "Rng",
    "StructureMismatchError",
    "Tape",
    "TreeSpec",
    "UnsupportedPrimitiveError",
    "adam_step",
    "adamw_step",
    "assert_same_structure",
    "cg_solve",
    "cg_solve_info",
    "ema_combine",
    "propagate_derivatives",
    "seed_duals",
    "tree_add",
    "tree_all_finite",
    "tree_astype",
    "tree_copy",
    "tree_flatten",
    "tree_items",
    "tree_leaves",
    "tree_map",
    "tree_scale",
    "tree_spec",
    "tree_sub",
    "tree_unflatten",
    "tree_zeros_like",
    "value_of",
]
