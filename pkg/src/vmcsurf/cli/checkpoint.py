"""Versioned checkpoint container (npz with a JSON header).

Arrays round-trip bit-exactly; loading refuses other container versions.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

CHECKPOINT_VERSION = 1
_SEP = "|"


class CheckpointError(RuntimeError):
    pass


def _flatten_tree(tree, prefix):
    from ..numerics import tree_items

    return {prefix + _SEP + _SEP.join(path): leaf for path, leaf in tree_items(tree)}


def _unflatten_tree(arrays, prefix):
    tree = {}
    head = prefix + _SEP
    for key in sorted(arrays):
        if not key.startswith(head):
            continue
        path = key[len(head):].split(_SEP)
        node = tree
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = arrays[key]
    return tree


def save_checkpoint(path, *, kind, config, t, rng_state=None, trees=None, extra_arrays=None, scalars=None):
    """Write atomically: temp file in the target directory, then rename."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": config,
        "t": int(t),
        "rng": rng_state,
        "scalars": scalars or {},
    }
    payload = {"__meta__": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for prefix, tree in (trees or {}).items():
        payload.update(_flatten_tree(tree, prefix))
    for key, arr in (extra_arrays or {}).items():
        payload["raw" + _SEP + key] = np.asarray(arr)
    directory = os.path.dirname(os.path.abspath(path)) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".npz.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path, expect_kind=None):
    try:
        data = np.load(path)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from exc
    if "__meta__" not in data:
        raise CheckpointError(f"{path}: missing checkpoint header")
    meta = json.loads(bytes(data["__meta__"]).decode())
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {meta.get('version')} is not "
            f"supported (expected {CHECKPOINT_VERSION})"
        )
    if expect_kind is not None and meta.get("kind") != expect_kind:
        raise CheckpointError(
            f"{path}: checkpoint kind {meta.get('kind')!r}, expected {expect_kind!r}"
        )
    arrays = {k: data[k] for k in data.files if k != "__meta__"}
    trees = {}
    prefixes = {k.split(_SEP)[0] for k in arrays if not k.startswith("raw" + _SEP)}
    for prefix in prefixes:
        trees[prefix] = _unflatten_tree(arrays, prefix)
    extra = {
        k[len("raw") + 1 :]: v for k, v in arrays.items() if k.startswith("raw" + _SEP)
    }
    return meta, trees, extra
