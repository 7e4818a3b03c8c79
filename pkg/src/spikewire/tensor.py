"""Dense float64 tensor kernels with a reproducible accumulation order.

Every simulation and calibration path funnels its heavy arithmetic through
this module. Matrix products and convolutions accumulate contributions in a
fixed left-to-right order so repeated runs (and the golden-trace tests)
produce bit-identical results; BLAS-backed kernels reorder sums and cannot
guarantee that. All values are float64 internally; the only 32-bit views in
the package live in the neuron firing rules.
"""

from __future__ import annotations

import numpy as np
from scipy import special as _special


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the requested operation."""


class QuadratureError(RuntimeError):
    """Adaptive integration failed to reach the requested tolerance."""


def as_tensor(x, name: str = "tensor") -> np.ndarray:
    """Coerce to a float64 ndarray and reject non-finite entries."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product with fixed left-to-right accumulation over the inner axis.

    Supports 1-D operands with the usual vector promotion rules. Each output
    element is accumulated in ascending inner-index order, which matches a
    naive triple loop exactly, element for element.
    """
    a = as_tensor(a, "a")
    b = as_tensor(b, "b")
    a2 = a[None, :] if a.ndim == 1 else a
    b2 = b[:, None] if b.ndim == 1 else b
    if a2.ndim != 2 or b2.ndim != 2:
        raise ShapeError(f"matmul expects 1-D or 2-D operands, got {a.shape} and {b.shape}")
    if a2.shape[1] != b2.shape[0]:
        raise ShapeError(f"inner extents disagree: {a.shape} vs {b.shape}")
    out = np.zeros((a2.shape[0], b2.shape[1]))
    for k in range(a2.shape[1]):
        out += a2[:, k : k + 1] * b2[k : k + 1, :]
    if a.ndim == 1:
        out = out[0]
    if b.ndim == 1:
        out = out[..., 0]
    return out


def conv2d(x, w, stride=(1, 1), pad=(0, 0)) -> np.ndarray:
    """2-D cross-correlation with zero padding.

    ``x`` is (C_in, H, W), ``w`` is (C_out, C_in, KH, KW). Contributions are
    accumulated in (c_in, ky, kx) order, matching the direct-sum reference
    loop bit for bit.
    """
    x = as_tensor(x, "x")
    w = as_tensor(w, "w")
    if x.ndim != 3:
        raise ShapeError(f"conv2d input must be (C,H,W), got {x.shape}")
    if w.ndim != 4:
        raise ShapeError(f"conv2d kernel must be (Co,Ci,KH,KW), got {w.shape}")
    cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin_w != cin:
        raise ShapeError(f"channel counts disagree: input {cin} vs kernel {cin_w}")
    sy, sx = int(stride[0]), int(stride[1])
    py, px = int(pad[0]), int(pad[1])
    if sy < 1 or sx < 1 or py < 0 or px < 0:
        raise ShapeError("stride must be >= 1 and pad >= 0")
    oh = (h + 2 * py - kh) // sy + 1
    ow = (wd + 2 * px - kw) // sx + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"non-positive output extents ({oh}, {ow})")
    xp = np.zeros((cin, h + 2 * py, wd + 2 * px))
    xp[:, py : py + h, px : px + wd] = x
    out = np.zeros((cout, oh, ow))
    for ci in range(cin):
        for ky in range(kh):
            for kx in range(kw):
                window = xp[ci, ky : ky + sy * oh : sy, kx : kx + sx * ow : sx]
                out += w[:, ci, ky, kx][:, None, None] * window
    return out


def conv2d_output_shape(in_shape, w_shape, stride=(1, 1), pad=(0, 0)) -> tuple:
    cin, h, wd = in_shape
    cout, cin_w, kh, kw = w_shape
    if cin_w != cin:
        raise ShapeError(f"channel counts disagree: input {cin} vs kernel {cin_w}")
    oh = (h + 2 * int(pad[0]) - kh) // int(stride[0]) + 1
    ow = (wd + 2 * int(pad[1]) - kw) // int(stride[1]) + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"non-positive output extents ({oh}, {ow})")
    return (cout, oh, ow)


def erf(x):
    """Gauss error function; scalar in, scalar out (arrays pass through)."""
    if np.isscalar(x) or np.ndim(x) == 0:
        v = float(x)
        if not np.isfinite(v):
            raise ValueError("erf argument must be finite")
        return float(_special.erf(v))
    return _special.erf(as_tensor(x, "x"))


def erfc(x):
    """Complementary error function, cancellation-free for large arguments."""
    if np.isscalar(x) or np.ndim(x) == 0:
        return float(_special.erfc(float(x)))
    return _special.erfc(as_tensor(x, "x"))


def _simpson(fa, fm, fb, h):
    return h / 6.0 * (fa + 4.0 * fm + fb)


def integrate_segments(
    f,
    lo,
    hi,
    tol: float,
    tags=None,
    n_tags: int | None = None,
    max_rounds: int = 64,
    max_intervals: int = 4_000_000,
):
    """Adaptive Simpson integration over a batch of smooth segments.

    ``f(x, tag)`` must evaluate elementwise on arrays (``tag`` is ``None``
    when ``tags`` is not supplied). Each tag's segments form one integral
    whose absolute error target is ``tol``, allocated across that tag's
    segments by length and halved at every split. Accepted contributions are
    summed in a fixed (tag, left-endpoint) order so results are reproducible.

    Returns a float when untagged, otherwise an array of per-tag sums.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))
    hi = np.atleast_1d(np.asarray(hi, dtype=np.float64))
    if lo.shape != hi.shape:
        raise ShapeError("segment bound arrays must match")
    if np.any(hi < lo):
        raise ValueError("segment with hi < lo")
    if tol <= 0:
        raise ValueError("tol must be positive")
    tagged = tags is not None
    if tagged:
        tag = np.asarray(tags, dtype=np.int64)
        if n_tags is None:
            n_tags = int(tag.max()) + 1 if tag.size else 0
    else:
        tag = np.zeros(lo.shape, dtype=np.int64)
        n_tags = 1

    keep = hi > lo
    lo, hi, tag = lo[keep], hi[keep], tag[keep]
    result = np.zeros(n_tags)
    if lo.size == 0:
        return result if tagged else float(result[0])

    total_len = np.zeros(n_tags)
    np.add.at(total_len, tag, hi - lo)
    tol_arr = tol * (hi - lo) / total_len[tag]

    def call(x, t):
        return np.asarray(f(x, t if tagged else None), dtype=np.float64)

    flo = call(lo, tag)
    fhi = call(hi, tag)
    mid = 0.5 * (lo + hi)
    fmid = call(mid, tag)
    s_whole = _simpson(flo, fmid, fhi, hi - lo)

    acc_tag, acc_lo, acc_val = [], [], []
    rounds = 0
    while lo.size:
        rounds += 1
        if rounds > max_rounds or lo.size > max_intervals:
            raise QuadratureError(
                f"integration did not converge ({lo.size} open intervals after {rounds - 1} rounds)"
            )
        mid = 0.5 * (lo + hi)
        lm = 0.5 * (lo + mid)
        rm = 0.5 * (mid + hi)
        flm = call(lm, tag)
        frm = call(rm, tag)
        s_left = _simpson(flo, flm, fmid, mid - lo)
        s_right = _simpson(fmid, frm, fhi, hi - mid)
        err = (s_left + s_right - s_whole) / 15.0
        done = np.abs(err) <= tol_arr
        # tiny intervals are accepted to avoid stalling on kinks at edges
        done |= (hi - lo) < 1e-14 * np.maximum(1.0, np.abs(lo) + np.abs(hi))
        if np.any(done):
            acc_tag.append(tag[done])
            acc_lo.append(lo[done])
            acc_val.append((s_left + s_right + err)[done])
        nd = ~done
        lo, hi, tag = (
            np.concatenate([lo[nd], mid[nd]]),
            np.concatenate([mid[nd], hi[nd]]),
            np.concatenate([tag[nd], tag[nd]]),
        )
        flo, fhi, fmid, s_whole = (
            np.concatenate([flo[nd], fmid[nd]]),
            np.concatenate([fmid[nd], fhi[nd]]),
            np.concatenate([flm[nd], frm[nd]]),
            np.concatenate([s_left[nd], s_right[nd]]),
        )
        tol_arr = np.concatenate([tol_arr[nd] / 2.0, tol_arr[nd] / 2.0])

    if acc_tag:
        tg = np.concatenate(acc_tag)
        left = np.concatenate(acc_lo)
        val = np.concatenate(acc_val)
        order = np.lexsort((left, tg))
        np.add.at(result, tg[order], val[order])
    return result if tagged else float(result[0])


def _vectorized(f):
    """Wrap a scalar real function so it evaluates elementwise on arrays."""
    import warnings

    state = {"vector_ok": True}

    def g(x, _tag=None):
        if state["vector_ok"]:
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("error")
                    y = np.asarray(f(x), dtype=np.float64)
                if y.shape == x.shape:
                    return y
            except Exception:
                pass
            state["vector_ok"] = False
        return np.array([float(f(float(v))) for v in x])

    return g


def quadrature(f, a: float, b: float, tol: float = 1e-10) -> float:
    """Adaptive integration of ``f`` over [a, b] to absolute tolerance ``tol``.

    Raises QuadratureError if the subdivision budget is exhausted.
    """
    a = float(a)
    b = float(b)
    if not (np.isfinite(a) and np.isfinite(b)):
        raise ValueError("bounds must be finite")
    if b < a:
        raise ValueError("quadrature expects a <= b")
    if a == b:
        return 0.0
    return float(integrate_segments(_vectorized(f), [a], [b], tol))
