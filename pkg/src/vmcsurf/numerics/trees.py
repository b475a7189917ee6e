"""Named parameter trees: nested dicts of numpy arrays.

A parameter tree is the universal container for model parameters and
optimizer moments.  Structure is fixed after construction; all arithmetic
requires identical structure.  Flattening uses sorted key order so the
leaf layout is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ParamTree = dict


class StructureMismatchError(ValueError):
    """Two trees do not share the same nested key structure or leaf shapes."""


def tree_map(fn, tree, *rest):
    """Apply ``fn`` leafwise to one or more trees with identical structure."""
    if isinstance(tree, dict):
        for other in rest:
            if not isinstance(other, dict) or set(other) != set(tree):
                raise StructureMismatchError(
                    f"tree keys differ: {sorted(tree)} vs "
                    f"{sorted(other) if isinstance(other, dict) else type(other)}"
                )
        return {k: tree_map(fn, tree[k], *(o[k] for o in rest)) for k in sorted(tree)}
    return fn(tree, *rest)


def tree_leaves(tree):
    """Leaves in deterministic (sorted-path) order."""
    return [leaf for _, leaf in tree_items(tree)]


def tree_items(tree, prefix=()):
    """(path, leaf) pairs in sorted-path order; path is a tuple of keys."""
    if isinstance(tree, dict):
        out = []
        for k in sorted(tree):
            out.extend(tree_items(tree[k], prefix + (k,)))
        return out
    return [(prefix, tree)]


def assert_same_structure(a, b):
    ia, ib = tree_items(a), tree_items(b)
    if len(ia) != len(ib):
        raise StructureMismatchError(f"leaf count differs: {len(ia)} vs {len(ib)}")
    for (pa, la), (pb, lb) in zip(ia, ib):
        if pa != pb:
            raise StructureMismatchError(f"paths differ: {pa} vs {pb}")
        if np.shape(la) != np.shape(lb):
            raise StructureMismatchError(
                f"shape mismatch at {'/'.join(map(str, pa))}: "
                f"{np.shape(la)} vs {np.shape(lb)}"
            )


@dataclass(frozen=True)
class TreeSpec:
    """Layout of a flattened tree: leaf paths, shapes and vector offsets."""

    paths: tuple
    shapes: tuple
    offsets: tuple
    size: int
    dtype: np.dtype

    def slot(self, path):
        i = self.paths.index(tuple(path))
        lo = self.offsets[i]
        return slice(lo, lo + int(np.prod(self.shapes[i], dtype=int)))


def tree_spec(tree, dtype=None) -> TreeSpec:
    items = tree_items(tree)
    paths = tuple(p for p, _ in items)
    shapes = tuple(np.shape(leaf) for _, leaf in items)
    sizes = [int(np.prod(s, dtype=int)) for s in shapes]
    offsets = tuple(np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int).tolist())
    if dtype is None:
        dtype = items[0][1].dtype if items else np.dtype(np.float64)
    return TreeSpec(paths, shapes, offsets, int(sum(sizes)), np.dtype(dtype))


def tree_flatten(tree, spec: TreeSpec | None = None):
    """Flatten to a 1-D vector.  Returns (vector, spec)."""
    if spec is None:
        spec = tree_spec(tree)
    items = tree_items(tree)
    if tuple(p for p, _ in items) != spec.paths:
        raise StructureMismatchError("tree does not match spec")
    out = np.empty(spec.size, dtype=spec.dtype)
    for (_, leaf), off, shape in zip(items, spec.offsets, spec.shapes):
        n = int(np.prod(shape, dtype=int))
        out[off : off + n] = np.asarray(leaf, dtype=spec.dtype).reshape(-1)
    return out, spec


def tree_unflatten(spec: TreeSpec, vec):
    vec = np.asarray(vec)
    if vec.shape != (spec.size,):
        raise StructureMismatchError(f"vector length {vec.shape} != {spec.size}")
    tree = {}
    for path, off, shape in zip(spec.paths, spec.offsets, spec.shapes):
        n = int(np.prod(shape, dtype=int))
        node = tree
        for k in path[:-1]:
            node = node.setdefault(k, {})
        node[path[-1]] = vec[off : off + n].reshape(shape).copy()
    return tree


def tree_add(a, b):
    assert_same_structure(a, b)
    return tree_map(lambda x, y: x + y, a, b)


def tree_sub(a, b):
    assert_same_structure(a, b)
    return tree_map(lambda x, y: x - y, a, b)


def tree_scale(a, c):
    return tree_map(lambda x: x * c, a)


def tree_zeros_like(a):
    return tree_map(np.zeros_like, a)


def tree_copy(a):
    return tree_map(lambda x: np.array(x, copy=True), a)


def tree_astype(a, dtype):
    return tree_map(lambda x: np.asarray(x, dtype=dtype), a)


def tree_all_finite(a) -> bool:
    return all(np.all(np.isfinite(leaf)) for leaf in tree_leaves(a))
