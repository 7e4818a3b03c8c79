"""Multi-threshold spiking neuron dynamics.

A neuron layer carries 2n thresholds (n positive, n negative) at
``±theta / 2**i``; at most one threshold fires per element per step and the
membrane soft-resets by subtracting the emitted value. Two interchangeable
firing rules are provided: an argmin rule over the threshold ladder and a
branch-free bit-level rule that reads the sign and exponent of the float32
view of ``4m/3`` (the midpoint between adjacent ladder rungs maps onto a
binade edge under that scaling).

Firing decisions are taken on the float32-rounded membrane while all state
stays float64. The neuron models a 32-bit hardware datapath, and the coarser
decision granularity makes threshold-boundary cases land exactly where the
ideal real-valued dynamics put them, so both rules agree with each other and
with hand-computed traces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError

_EXP_MASK = np.uint32(0xFF)
_MANTISSA_BITS = np.uint32(23)
_SIGN_AND_EXP = np.uint32(0xFF800000)


@dataclass
class ThresholdLadder:
    """Base threshold plus the 2n derived threshold values.

    ``theta`` may be a scalar or a 1-D array (channel-wise thresholds); the
    ladder is then (2n,) or (2n, C).
    """

    theta: float | np.ndarray
    n: int
    lambdas: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=np.float64)
        if th.ndim > 1:
            raise ShapeError("theta must be a scalar or 1-D array")
        if not np.all(np.isfinite(th)) or np.any(th <= 0):
            raise ValueError("theta must be positive and finite")
        if not (1 <= int(self.n) <= 30):
            raise ValueError("threshold count n must be in [1, 30]")
        self.n = int(self.n)
        steps = np.exp2(-np.arange(self.n, dtype=np.float64))
        signed = np.concatenate([steps, -steps])
        self.lambdas = signed.reshape((2 * self.n,) + (1,) * th.ndim) * th

    @property
    def scalar_theta(self) -> float:
        th = np.asarray(self.theta, dtype=np.float64)
        if th.ndim != 0 and th.size != 1:
            raise ValueError("ladder has channel-wise thresholds")
        return float(th.reshape(()))


def _aligned(values: np.ndarray, tensor_ndim: int) -> np.ndarray:
    """Reshape (2n,) or (2n, C) ladder values to broadcast over a tensor."""
    extra = tensor_ndim - (values.ndim - 1)
    if extra < 0:
        raise ShapeError("ladder has more channel axes than the tensor")
    return values.reshape(values.shape + (1,) * extra)


def _decision_view(m: np.ndarray) -> np.ndarray:
    # firing decisions happen at 32-bit granularity; state stays float64
    return np.asarray(m, dtype=np.float32).astype(np.float64)


def _theta_aligned(ladder: ThresholdLadder, tensor_ndim: int):
    th = np.asarray(ladder.theta, dtype=np.float64)
    if th.ndim == 0:
        return th
    return th.reshape(th.shape + (1,) * (tensor_ndim - th.ndim))


def _emission_from_idx(idx: np.ndarray, theta_b, n: int) -> np.ndarray:
    """Ladder value for each 1-based index (0 means silent).

    theta * 2**-k is an exact power-of-two scaling, so this reproduces the
    precomputed ladder entries bit for bit.
    """
    live = idx > 0
    pos = live & (idx <= n)
    k = np.where(pos, idx - 1, idx - n - 1)
    mag = theta_b * np.exp2(np.where(live, -k, 0).astype(np.float64))
    return np.where(live, np.where(pos, mag, -mag), 0.0)


def fire_argmin(m, ladder: ThresholdLadder):
    """Vectorized argmin firing rule.

    Returns ``(emission, index)`` where ``index`` is 0 for no spike and the
    1-based ladder index otherwise. Strict dead zone: no element fires while
    its membrane magnitude is below the smallest positive threshold; ties in
    the argmin resolve to the smaller index.
    """
    m = np.asarray(m, dtype=np.float64)
    m32 = _decision_view(m)
    lam = _aligned(ladder.lambdas, m.ndim)
    dead = np.abs(m32) < lam[ladder.n - 1]
    dist = np.abs(m32[None, ...] - lam)
    idx = np.argmin(dist, axis=0).astype(np.int64) + 1
    idx = np.where(dead, 0, idx)
    emission = _emission_from_idx(idx, _theta_aligned(ladder, m.ndim), ladder.n)
    return emission, idx


def _hw_indices(scaled: np.ndarray, n: int) -> np.ndarray:
    """Bit-level threshold selection on a theta-normalized membrane.

    The dead zone |m| < 2**(1-n) is read off the membrane's own float32
    exponent; the ladder index of live elements comes from the exponent of
    the float32 value 4m/3 with its mantissa zeroed, clamped at the top rung.
    """
    x32 = np.asarray(scaled, dtype=np.float32)
    bits_m = x32.view(np.uint32)
    e_m = ((bits_m >> _MANTISSA_BITS) & _EXP_MASK).astype(np.int64) - 127
    live = e_m > -n

    y32 = (x32 * np.float32(4.0)) / np.float32(3.0)
    bits = y32.view(np.uint32) & _SIGN_AND_EXP
    e = ((bits >> _MANTISSA_BITS) & _EXP_MASK).astype(np.int64) - 127
    sign = (bits >> np.uint32(31)).astype(np.int64)
    e = np.minimum(e, 0)
    pos = 1 - e
    idx = np.where(sign == 0, pos, n + pos)
    return np.where(live, idx, 0)


def fire_hw(m, ladder: ThresholdLadder):
    """Bit-level firing rule; ladder must be normalized to theta == 1."""
    m = np.asarray(m, dtype=np.float64)
    th = np.asarray(ladder.theta, dtype=np.float64)
    if not np.all(th == 1.0):
        raise ValueError("hw firing rule requires a theta=1 ladder; pre-scale the membrane")
    idx = _hw_indices(m, ladder.n)
    emission = _emission_from_idx(idx, _theta_aligned(ladder, m.ndim), ladder.n)
    return emission, idx


def mth_select(m: float, ladder: ThresholdLadder):
    """Threshold index for one membrane value, or None inside the dead zone."""
    _, idx = fire_argmin(np.asarray(float(m)), ladder)
    i = int(idx)
    return i if i else None


def mth_select_hw(m: float, ladder: ThresholdLadder):
    """Bit-level variant of :func:`mth_select`; requires theta == 1."""
    if ladder.scalar_theta != 1.0:
        raise ValueError("hw firing rule requires a theta=1 ladder; pre-scale the membrane")
    i = int(_hw_indices(np.asarray(float(m)), ladder.n))
    return i if i else None


@dataclass
class NeuronLayerState:
    """Mutable per-layer simulation state for one sample.

    ``v`` is the post-spike membrane, ``m_r`` the differential rate memory
    (also holds the folded bias before the first step), ``t`` the next
    timestep to execute (starting at 1).
    """

    ladder: ThresholdLadder
    v: np.ndarray
    m_r: np.ndarray
    t: int = 1
    spike_count: int = 0
    firing_rule: str = "argmin"

    @classmethod
    def create(cls, ladder: ThresholdLadder, shape, m_r0=None, firing_rule: str = "argmin"):
        if firing_rule not in ("argmin", "hw"):
            raise ValueError(f"unknown firing rule {firing_rule!r}")
        v = np.zeros(shape)
        if m_r0 is None:
            m_r = np.zeros(shape)
        else:
            m_r = np.array(np.broadcast_to(np.asarray(m_r0, dtype=np.float64), shape))
        return cls(ladder=ladder, v=v, m_r=m_r, firing_rule=firing_rule)

    def _fire(self, m: np.ndarray):
        if self.firing_rule == "hw":
            theta_b = _theta_aligned(self.ladder, m.ndim)
            idx = _hw_indices(m / theta_b, self.ladder.n)
            emission = _emission_from_idx(idx, theta_b, self.ladder.n)
            return emission, idx
        return fire_argmin(m, self.ladder)


def _check_shape(state: NeuronLayerState, x_in) -> np.ndarray:
    x = np.asarray(x_in, dtype=np.float64)
    if x.shape != state.v.shape:
        raise ShapeError(f"input shape {x.shape} does not match state shape {state.v.shape}")
    return x


def step_rate(state: NeuronLayerState, x_in) -> np.ndarray:
    """One rate-coding step: integrate the raw input current, fire, soft-reset."""
    x = _check_shape(state, x_in)
    m = state.v + x
    emission, idx = state._fire(m)
    state.v = m - emission
    state.spike_count += int(np.count_nonzero(idx))
    state.t += 1
    return emission


def step_differential(state: NeuronLayerState, x_in) -> np.ndarray:
    """One differential-coding step.

    The rate memory contributes to the input current and is then nudged by
    the time-weighted difference between what arrived and what was emitted,
    so the decoded output tracks the decoded input without decay.
    """
    x = _check_shape(state, x_in)
    t = state.t
    current = state.m_r + x
    m = state.v + current
    emission, idx = state._fire(m)
    state.v = m - emission
    state.m_r = (state.m_r + x / t) - emission / t
    state.spike_count += int(np.count_nonzero(idx))
    state.t = t + 1
    return emission
