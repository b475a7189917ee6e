"""Primitive operations with value / dual / reverse rules registered.

All model code is written against these functions.  Each accepts plain
arrays, :class:`~vmcsurf.numerics.autodiff.Dual` boxes or tape
:class:`~vmcsurf.numerics.autodiff.Node` boxes and dispatches on type.
"""

from __future__ import annotations

import numpy as np

from .autodiff import (
    Dual,
    Node,
    Primitive,
    UnsupportedPrimitiveError,
    lift_dual,
    value_of,
)


def sigmoid(x):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# arithmetic


def _jac_to(jac, vshape):
    """Right-align a jacobian's value dims with ``vshape`` and broadcast."""
    d = jac.shape[0]
    body = jac.shape[1:]
    if len(body) < len(vshape):
        jac = jac.reshape((d,) + (1,) * (len(vshape) - len(body)) + body)
    return np.broadcast_to(jac, (d,) + tuple(vshape))


def _add_dual(a, b):
    if not isinstance(a, Dual):
        val = np.asarray(a) + b.value
        return Dual(val, _jac_to(b.jac, val.shape), np.broadcast_to(b.lap, val.shape))
    if not isinstance(b, Dual):
        val = a.value + np.asarray(b)
        return Dual(val, _jac_to(a.jac, val.shape), np.broadcast_to(a.lap, val.shape))
    val = a.value + b.value
    return Dual(
        val,
        _jac_to(a.jac, val.shape) + _jac_to(b.jac, val.shape),
        a.lap + b.lap,
    )


def _add_vjp(node, cot):
    return (cot, cot)


add = Primitive("add", lambda a, b: a + b, _add_dual, _add_vjp)


def _sub_dual(a, b):
    if not isinstance(a, Dual):
        val = np.asarray(a) - b.value
        return Dual(val, _jac_to(-b.jac, val.shape), np.broadcast_to(-b.lap, val.shape))
    if not isinstance(b, Dual):
        val = a.value - np.asarray(b)
        return Dual(val, _jac_to(a.jac, val.shape), np.broadcast_to(a.lap, val.shape))
    val = a.value - b.value
    return Dual(
        val,
        _jac_to(a.jac, val.shape) - _jac_to(b.jac, val.shape),
        a.lap - b.lap,
    )


def _sub_vjp(node, cot):
    return (cot, -cot)


sub = Primitive("sub", lambda a, b: a - b, _sub_dual, _sub_vjp)


def _mul_dual(a, b):
    if isinstance(a, Dual) and isinstance(b, Dual):
        va, vb = a.value, b.value
        val = va * vb
        ja = _jac_to(a.jac, val.shape)
        jb = _jac_to(b.jac, val.shape)
        return Dual(
            val,
            ja * vb + va * jb,
            a.lap * vb + va * b.lap + 2.0 * np.sum(ja * jb, axis=0),
        )
    if isinstance(a, Dual):
        vb = np.asarray(b)
        val = a.value * vb
        return Dual(val, _jac_to(a.jac * vb, val.shape), np.broadcast_to(a.lap * vb, val.shape))
    va = np.asarray(a)
    val = va * b.value
    return Dual(val, _jac_to(va * b.jac, val.shape), np.broadcast_to(va * b.lap, val.shape))


def _mul_vjp(node, cot):
    a, b = node.args
    ca = cot * value_of(b) if isinstance(a, Node) else None
    cb = cot * value_of(a) if isinstance(b, Node) else None
    return (ca, cb)


mul = Primitive("mul", lambda a, b: a * b, _mul_dual, _mul_vjp)


def _swap(x):
    return np.swapaxes(x, -1, -2)


def _matmul_dual(a, b):
    if isinstance(a, Dual) and isinstance(b, Dual):
        val = a.value @ b.value
        jac = a.jac @ b.value + a.value @ b.jac
        lap = (
            a.lap @ b.value
            + a.value @ b.lap
            + 2.0 * np.sum(np.matmul(a.jac, b.jac), axis=0)
        )
        return Dual(val, jac, lap)
    if isinstance(a, Dual):
        vb = np.asarray(b)
        return Dual(a.value @ vb, a.jac @ vb, a.lap @ vb)
    va = np.asarray(a)
    return Dual(va @ b.value, va @ b.jac, va @ b.lap)


def _matmul_vjp(node, cot):
    a, b = node.args
    per_sample = node.tape.sample_size is not None and node.sample
    ca = cot @ _swap(value_of(b)) if isinstance(a, Node) else None
    cb = None
    if isinstance(b, Node):
        va = value_of(a)
        a_sampled = isinstance(a, Node) and a.sample
        if per_sample and not b.sample and a_sampled and va.ndim == 2:
            # The sample axis is the row axis; keep one gradient per row.
            cb = _einsum("bk,bn->bkn", va, cot)
        else:
            cb = _swap(va) @ cot
    return (ca, cb)


matmul = Primitive("matmul", lambda a, b: a @ b, _matmul_dual, _matmul_vjp)


# ---------------------------------------------------------------------------
# einsum (explicit subscripts, no intra-operand repeats)


def _parse_spec(spec, n_ops):
    lhs, out = spec.split("->")
    subs = lhs.split(",")
    if len(subs) != n_ops:
        raise ValueError(f"einsum spec '{spec}' does not match {n_ops} operands")
    known = set(out)
    for s in subs:
        known |= set(s)
    for i, s in enumerate(subs):
        if len(set(s)) != len(s):
            raise ValueError(f"einsum spec '{spec}': repeated index within operand {i}")
        others = set(out)
        for j, s2 in enumerate(subs):
            if j != i:
                others |= set(s2)
        if not set(s) <= others:
            raise ValueError(
                f"einsum spec '{spec}': operand {i} has an index summed only "
                "within itself; not reversible"
            )
    return subs, out


_einsum_paths = {}


def _einsum(spec, *vals):
    """np.einsum with a memoized contraction path (BLAS-backed where possible)."""
    key = (spec, tuple(np.shape(v) for v in vals))
    path = _einsum_paths.get(key)
    if path is None:
        path = np.einsum_path(spec, *vals, optimize="optimal")[0]
        _einsum_paths[key] = path
    return np.einsum(spec, *vals, optimize=path)


def _einsum_impl(*vals, spec):
    return _einsum(spec, *vals)


def _einsum_dual(*args, spec):
    subs, out = _parse_spec(spec, len(args))
    dual_idx = [i for i, a in enumerate(args) if isinstance(a, Dual)]
    if len(dual_idx) != 1:
        raise UnsupportedPrimitiveError(
            "einsum derivative propagation supports exactly one traced operand"
        )
    i = dual_idx[0]
    vals = [value_of(a) for a in args]
    d = args[i]
    lifted = ",".join("..." + s if j == i else s for j, s in enumerate(subs))
    run = lifted + "->..." + out
    jac_ops = [d.jac if j == i else vals[j] for j in range(len(args))]
    lap_ops = [d.lap if j == i else vals[j] for j in range(len(args))]
    return Dual(
        _einsum(spec, *vals),
        _einsum(run, *jac_ops),
        _einsum(run, *lap_ops),
    )


def _einsum_vjp(node, cot):
    spec = node.kw["spec"]
    subs, out = _parse_spec(spec, len(node.args))
    vals = [value_of(a) for a in node.args]
    per_sample = node.tape.sample_size is not None
    cots = []
    for i, arg in enumerate(node.args):
        if not isinstance(arg, Node):
            cots.append(None)
            continue
        prefix = ""
        if per_sample and node.sample and not arg.sample and out and out[0] not in subs[i]:
            prefix = out[0]
        operands = [cot]
        lhs = ["..." + out]
        for j in range(len(node.args)):
            if j != i:
                operands.append(vals[j])
                lhs.append(subs[j])
        vspec = ",".join(lhs) + "->..." + prefix + subs[i]
        cots.append(_einsum(vspec, *operands))
    return tuple(cots)


_einsum_prim = Primitive("einsum", _einsum_impl, _einsum_dual, _einsum_vjp)


def einsum(spec, *args):
    return _einsum_prim(*args, spec=spec)


# ---------------------------------------------------------------------------
# reductions and structure


def _normalize_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if np.isscalar(axis):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def _asum_impl(x, *, axis=None, keepdims=False, sort=False):
    axes = _normalize_axes(axis, np.ndim(x))
    if sort:
        if len(axes) != 1:
            raise ValueError("sorted reduction supports a single axis")
        x = np.sort(x, axis=axes[0])
    return np.sum(x, axis=axes, keepdims=keepdims)


def _asum_dual(x, *, axis=None, keepdims=False, sort=False):
    axes = _normalize_axes(axis, x.value.ndim)
    jac_axes = tuple(a + 1 for a in axes)
    return Dual(
        _asum_impl(x.value, axis=axis, keepdims=keepdims, sort=sort),
        np.sum(x.jac, axis=jac_axes, keepdims=keepdims),
        np.sum(x.lap, axis=axes, keepdims=keepdims),
    )


def _asum_vjp(node, cot):
    (x,) = node.args
    if not isinstance(x, Node):
        return (None,)
    axes = _normalize_axes(node.kw.get("axis"), x.value.ndim)
    keepdims = node.kw.get("keepdims", False)
    extras = cot.ndim - node.value.ndim
    if not keepdims:
        for a in axes:
            cot = np.expand_dims(cot, a + extras)
    return (np.broadcast_to(cot, cot.shape[:extras] + x.value.shape),)


_asum_prim = Primitive("sum", _asum_impl, _asum_dual, _asum_vjp)


def asum(x, axis=None, keepdims=False, sort=False):
    """Sum reduction.  ``sort=True`` sums the operand's values in sorted
    order along the axis, making the result independent of input order."""
    return _asum_prim(x, axis=axis, keepdims=keepdims, sort=sort)


def _concat_impl(*parts, axis):
    return np.concatenate(parts, axis=axis)


def _concat_dual(*parts, axis):
    template = next(p for p in parts if isinstance(p, Dual))
    duals = [lift_dual(p, template) for p in parts]
    ax = axis % duals[0].value.ndim
    return Dual(
        np.concatenate([d.value for d in duals], axis=ax),
        np.concatenate([d.jac for d in duals], axis=ax + 1),
        np.concatenate([d.lap for d in duals], axis=ax),
    )


def _concat_vjp(node, cot):
    ax = node.kw["axis"] % node.value.ndim
    extras = cot.ndim - node.value.ndim
    sizes = [value_of(p).shape[ax] for p in node.args]
    splits = np.cumsum(sizes)[:-1]
    pieces = np.split(cot, splits, axis=ax + extras)
    return tuple(
        piece if isinstance(p, Node) else None for p, piece in zip(node.args, pieces)
    )


_concat_prim = Primitive("concat", _concat_impl, _concat_dual, _concat_vjp)


def concat(parts, axis=-1):
    return _concat_prim(*parts, axis=axis)


def _as_idx(idx):
    if not isinstance(idx, tuple):
        idx = (idx,)
    for i in idx:
        if not isinstance(i, slice):
            raise ValueError("only static slice indexing is traceable")
    return idx


def _take_impl(x, *, idx):
    return x[idx]


def _take_dual(x, *, idx):
    return Dual(x.value[idx], x.jac[(slice(None),) + idx], x.lap[idx])


def _take_vjp(node, cot):
    (x,) = node.args
    if not isinstance(x, Node):
        return (None,)
    extras = cot.ndim - node.value.ndim
    buf = np.zeros(cot.shape[:extras] + x.value.shape, dtype=cot.dtype)
    buf[(slice(None),) * extras + node.kw["idx"]] += cot
    return (buf,)


_take_prim = Primitive("take", _take_impl, _take_dual, _take_vjp)


def take(x, idx):
    return _take_prim(x, idx=_as_idx(idx))


def _reshape_impl(x, *, shape):
    return np.reshape(x, shape)


def _reshape_dual(x, *, shape):
    n = x.jac.shape[0]
    return Dual(
        np.reshape(x.value, shape),
        np.reshape(x.jac, (n,) + tuple(shape)),
        np.reshape(x.lap, shape),
    )


def _reshape_vjp(node, cot):
    (x,) = node.args
    if not isinstance(x, Node):
        return (None,)
    extras = cot.ndim - node.value.ndim
    return (np.reshape(cot, cot.shape[:extras] + x.value.shape),)


_reshape_prim = Primitive("reshape", _reshape_impl, _reshape_dual, _reshape_vjp)


def reshape(x, shape):
    shape = tuple(int(s) for s in shape)
    return _reshape_prim(x, shape=shape)


def _transpose_impl(x, *, axes):
    return np.transpose(x, axes)


def _transpose_dual(x, *, axes):
    jac_axes = (0,) + tuple(a + 1 for a in axes)
    return Dual(
        np.transpose(x.value, axes),
        np.transpose(x.jac, jac_axes),
        np.transpose(x.lap, axes),
    )


def _transpose_vjp(node, cot):
    (x,) = node.args
    if not isinstance(x, Node):
        return (None,)
    axes = node.kw["axes"]
    inv = [0] * len(axes)
    for i, a in enumerate(axes):
        inv[a] = i
    extras = cot.ndim - node.value.ndim
    perm = tuple(range(extras)) + tuple(a + extras for a in inv)
    return (np.transpose(cot, perm),)


_transpose_prim = Primitive("transpose", _transpose_impl, _transpose_dual, _transpose_vjp)


def transpose(x, axes):
    ndim = value_of(x).ndim
    axes = tuple(a % ndim for a in axes)
    return _transpose_prim(x, axes=axes)


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def _elementwise(name, f, d1, d2):
    def dual_rule(x):
        v = x.value
        g = d1(v)
        return Dual(
            f(v),
            g * x.jac,
            d2(v) * np.sum(np.square(x.jac), axis=0) + g * x.lap,
        )

    def vjp_rule(node, cot):
        (x,) = node.args
        if not isinstance(x, Node):
            return (None,)
        return (cot * d1(x.value),)

    return Primitive(name, f, dual_rule, vjp_rule)


def _tanh_d1(x):
    t = np.tanh(x)
    return 1.0 - t * t


def _tanh_d2(x):
    t = np.tanh(x)
    return -2.0 * t * (1.0 - t * t)


tanh = _elementwise("tanh", np.tanh, _tanh_d1, _tanh_d2)

exp = _elementwise("exp", np.exp, np.exp, np.exp)


def _silu(x):
    return x * sigmoid(x)


def _silu_d1(x):
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def _silu_d2(x):
    s = sigmoid(x)
    return s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))


silu = _elementwise("silu", _silu, _silu_d1, _silu_d2)


def _sqrt_d1(x):
    return 0.5 / np.sqrt(x)


def _sqrt_d2(x):
    return -0.25 / (np.sqrt(x) * x)


sqrt = _elementwise("sqrt", np.sqrt, _sqrt_d1, _sqrt_d2)


def _softplus(x):
    return np.logaddexp(0.0, x).astype(np.result_type(x))


def _softplus_d2(x):
    s = sigmoid(x)
    return s * (1.0 - s)


softplus = _elementwise("softplus", _softplus, sigmoid, _softplus_d2)


# ---------------------------------------------------------------------------
# log-domain determinant machinery


def _check_square(a):
    shape = value_of(a).shape
    if len(shape) < 2 or shape[-1] != shape[-2]:
        raise ValueError(f"slogdet requires square matrices, got shape {shape}")


def _slogdet_logabs(a):
    return np.linalg.slogdet(a)[1]


def _slogdet_vjp(node, cot):
    (a,) = node.args
    if not isinstance(a, Node):
        return (None,)
    inv_t = _swap(np.linalg.inv(a.value))
    return (cot[..., None, None] * inv_t,)


_slogdet_prim = Primitive("slogdet", _slogdet_logabs, None, _slogdet_vjp)


def slogdet(a):
    """Sign and log-magnitude of determinants over the trailing two axes.

    Singular matrices yield sign 0 and log-magnitude ``-inf``.
    """
    _check_square(a)
    if isinstance(a, Node):
        sign = np.linalg.slogdet(a.value)[0]
        return sign, _slogdet_prim(a)
    if isinstance(a, Dual):
        sign, logabs = np.linalg.slogdet(a.value)
        ainv = np.linalg.inv(a.value)
        jac = _einsum("...ji,d...ij->d...", ainv, a.jac)
        m = np.matmul(ainv, a.jac)
        lap = _einsum("...ji,...ij->...", ainv, a.lap) - _einsum(
            "d...ij,d...ji->...", m, m
        )
        return sign, Dual(logabs, jac, lap)
    return np.linalg.slogdet(np.asarray(a))


def _slse_values(logs, signs, weights):
    m = np.max(logs, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        terms = weights * signs * np.exp(logs - m)
        psi_rel = np.sum(terms, axis=-1)
        sign_out = np.sign(psi_rel)
        log_out = m[..., 0] + np.log(np.abs(psi_rel))
    return sign_out, log_out


def _slse_coeffs(logs, signs, weights, sign_out, log_out):
    # d log|psi| / d logs_k and the weight sensitivity, in a stable form.
    with np.errstate(invalid="ignore"):
        rel = signs * np.exp(logs - log_out[..., None]) * sign_out[..., None]
    p = weights * rel
    return p, rel


def _slse_logabs(logs, weights, *, signs):
    return _slse_values(logs, signs, weights)[1]


def _slse_vjp(node, cot):
    logs, weights = node.args
    signs = node.kw["signs"]
    sign_out, log_out = node.aux
    p, rel = _slse_coeffs(value_of(logs), signs, value_of(weights), sign_out, log_out)
    c_logs = cot[..., None] * p if isinstance(logs, Node) else None
    c_w = cot[..., None] * rel if isinstance(weights, Node) else None
    return (c_logs, c_w)


_slse_prim = Primitive("signed_logsumexp", _slse_logabs, None, _slse_vjp)


def signed_logsumexp(logs, signs, weights=None):
    """log |sum_k w_k s_k exp(l_k)| over the last axis, with its sign.

    ``signs`` are fixed (not differentiated); ``logs`` and ``weights`` may
    be traced.  An all-cancelling sum returns sign 0 and ``-inf``.
    """
    signs = np.asarray(value_of(signs))
    if weights is None:
        weights = np.ones(signs.shape[-1], dtype=value_of(logs).dtype)
    if isinstance(weights, Dual):
        raise UnsupportedPrimitiveError(
            "signed_logsumexp weights cannot carry input derivatives"
        )
    if isinstance(logs, Node) or isinstance(weights, Node):
        aux = _slse_values(value_of(logs), signs, value_of(weights))
        node = _slse_prim(logs, weights, signs=signs)
        node.aux = aux
        return aux[0], node
    if isinstance(logs, Dual):
        sign_out, log_out = _slse_values(logs.value, signs, weights)
        p, _ = _slse_coeffs(logs.value, signs, weights, sign_out, log_out)
        jac = np.sum(p * logs.jac, axis=-1)
        sq = np.sum(np.square(logs.jac), axis=0)
        lap = np.sum(p * (logs.lap + sq), axis=-1) - np.sum(np.square(jac), axis=0)
        return sign_out, Dual(log_out, jac, lap)
    return _slse_values(np.asarray(logs), signs, np.asarray(weights))
