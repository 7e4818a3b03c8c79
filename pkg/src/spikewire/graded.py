"""Differential graded units for layers that cannot spike.

A unary unit wraps a nonlinear map F: it accumulates the encoded input in a
membrane and emits the time-scaled change of F between consecutive steps, so
the decoded output tracks F(decoded input) exactly. A binary unit does the
same for bilinear operations (matrix or elementwise products) via the product
rule on its two accumulated operands. Emissions are real-valued ("graded"),
not ladder-quantized.

Rate-coding variants of both steps are provided for ablation runs; they keep
running input means instead of differential accumulators.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensor import ShapeError


@dataclass
class UnaryGradedState:
    """State of a single-input graded unit.

    ``m`` accumulates the encoded input (initialized with a folded upstream
    bias when there is one); ``f_cache`` holds F(m) from the previous step
    and starts at zero so the first emission carries the full F value.
    """

    func: Callable[[np.ndarray], np.ndarray]
    m: np.ndarray
    f_cache: np.ndarray
    t: int = 1

    @classmethod
    def create(cls, func, shape, m0=None):
        if m0 is None:
            m = np.zeros(shape)
        else:
            m = np.array(np.broadcast_to(np.asarray(m0, dtype=np.float64), shape))
        out_shape = np.asarray(func(m)).shape
        return cls(func=func, m=m, f_cache=np.zeros(out_shape))


@dataclass
class BinaryGradedState:
    """State of a two-input graded unit for a bilinear op."""

    op: Callable[[np.ndarray, np.ndarray], np.ndarray]
    m_a: np.ndarray
    m_b: np.ndarray
    t: int = 1

    @classmethod
    def create(cls, op, shape_a, shape_b, a0=None, b0=None):
        def init(shape, v0):
            if v0 is None:
                return np.zeros(shape)
            return np.array(np.broadcast_to(np.asarray(v0, dtype=np.float64), shape))

        return cls(op=op, m_a=init(shape_a, a0), m_b=init(shape_b, b0))


def _check(x, shape, name) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != shape:
        raise ShapeError(f"{name} shape {x.shape} does not match state shape {shape}")
    return x


def step_unary(state: UnaryGradedState, x_in) -> np.ndarray:
    """Differential step: emit t * (F(m + x/t) - F(m))."""
    x = _check(x_in, state.m.shape, "x_in")
    t = state.t
    state.m = state.m + x / t
    fm = np.asarray(state.func(state.m), dtype=np.float64)
    out = t * (fm - state.f_cache)
    state.f_cache = fm
    state.t = t + 1
    return out


def step_binary(state: BinaryGradedState, x_a, x_b) -> np.ndarray:
    """Differential step for a product; membranes update after the emission.

    Uses the pre-update membranes in the cross terms, which is what makes the
    decoded output equal the product of the decoded operands exactly.
    """
    xa = _check(x_a, state.m_a.shape, "x_a")
    xb = _check(x_b, state.m_b.shape, "x_b")
    t = state.t
    out = (state.op(xa, xb) / t + state.op(xa, state.m_b)) + state.op(state.m_a, xb)
    state.m_a = state.m_a + xa / t
    state.m_b = state.m_b + xb / t
    state.t = t + 1
    return out


def step_unary_rate(state: UnaryGradedState, x_in) -> np.ndarray:
    """Rate-coding step: ``m`` holds the running input mean."""
    x = _check(x_in, state.m.shape, "x_in")
    t = state.t
    state.m = state.m + (x - state.m) / t
    fm = np.asarray(state.func(state.m), dtype=np.float64)
    out = t * fm - (t - 1) * state.f_cache
    state.f_cache = fm
    state.t = t + 1
    return out


def step_binary_rate(state: BinaryGradedState, x_a, x_b) -> np.ndarray:
    """Rate-coding step: membranes hold running operand means."""
    xa = _check(x_a, state.m_a.shape, "x_a")
    xb = _check(x_b, state.m_b.shape, "x_b")
    t = state.t
    prev = state.op(state.m_a, state.m_b)
    state.m_a = state.m_a + (xa - state.m_a) / t
    state.m_b = state.m_b + (xb - state.m_b) / t
    out = t * state.op(state.m_a, state.m_b) - (t - 1) * prev
    state.t = t + 1
    return out
