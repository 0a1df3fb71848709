"""Causal coding/control policies over a finite channel alphabet.

A policy is a factory: ``encoder()`` and ``controller()`` return fresh
single-trajectory state machines. The encoder sees states x_0..x_t (one call
per step, in order); the controller sees only the symbols q_0..q_t. One
symbol of the alphabet is always reserved for quantizer overflow, so a policy
with ``c`` cells needs alphabet size at least ``c + 1``.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .dynamics import SystemModel

__all__ = [
    "CodingPolicy",
    "NullPolicy",
    "UniformQuantizerPolicy",
    "ZoomPolicy",
    "null_policy",
    "uniform_quantizer_policy",
    "zoom_policy",
]


class CodingPolicy:
    """Base: channel alphabet {1..m} and fresh encoder/controller sessions."""

    m: int

    def capacity(self) -> float:
        """Channel capacity in bits, log2 of the alphabet size."""
        return math.log2(self.m)

    def encoder(self):
        raise NotImplementedError

    def controller(self):
        raise NotImplementedError


# --------------------------------------------------------------------------
# Null policy

class NullPolicy(CodingPolicy):
    """Transmits symbol 1 and applies zero control; the open-loop baseline."""

    def __init__(self, m: int, control_dim: int = 1):
        if m < 1:
            raise ValueError("alphabet size must be at least 1")
        self.m = m
        self.control_dim = control_dim

    def encoder(self):
        return _NullEncoder()

    def controller(self):
        return _NullController(self.control_dim)


class _NullEncoder:
    def encode(self, t: int, x) -> int:
        return 1


class _NullController:
    def __init__(self, control_dim: int):
        self._zero = np.zeros(control_dim)

    def control(self, t: int, q: int) -> np.ndarray:
        return self._zero.copy()


def null_policy(m: int, control_dim: int = 1) -> NullPolicy:
    return NullPolicy(m, control_dim)


# --------------------------------------------------------------------------
# Memoryless uniform quantizer

class UniformQuantizerPolicy(CodingPolicy):
    """Fixed uniform grid over a box; symbols name cells, controls cancel the
    nominal one-step image of the cell centroid.

    Control rule for an in-box symbol: ``u = B^+ (target - f(centroid, w_mean))``
    with the Moore-Penrose pseudo-inverse of B. Overflow transmits the reserved
    symbol and applies zero control.
    """

    def __init__(
        self,
        model: SystemModel,
        box_low,
        box_high,
        bits_per_axis,
        target=None,
        noise_mean=None,
        m: Optional[int] = None,
    ):
        self.model = model
        self.low = np.broadcast_to(np.asarray(box_low, float), (model.n,)).copy()
        self.high = np.broadcast_to(np.asarray(box_high, float), (model.n,)).copy()
        if np.any(self.high <= self.low):
            raise ValueError("quantizer box is degenerate")
        bits = np.broadcast_to(np.asarray(bits_per_axis, int), (model.n,))
        if np.any(bits < 0):
            raise ValueError("bits per axis must be nonnegative integers")
        self.cells_per_axis = tuple(int(2**b) for b in bits)
        self.n_cells = int(np.prod(self.cells_per_axis))
        if m is None:
            m = self.n_cells + 1
        if m < self.n_cells + 1:
            raise ValueError(
                f"alphabet of size {m} cannot address {self.n_cells} cells plus overflow"
            )
        self.m = int(m)
        self.width = (self.high - self.low) / np.asarray(self.cells_per_axis, float)
        self.target = (
            np.zeros(model.n) if target is None else np.broadcast_to(np.asarray(target, float), (model.n,)).copy()
        )
        self.noise_mean = (
            np.zeros(model.noise_dim)
            if noise_mean is None
            else np.broadcast_to(np.asarray(noise_mean, float), (model.noise_dim,)).copy()
        )

    @property
    def overflow_symbol(self) -> int:
        return self.m

    def symbol_of(self, x) -> int:
        x = np.asarray(x, float)
        if np.all(x >= self.low) and np.all(x < self.high) and np.all(np.isfinite(x)):
            idx = ((x - self.low) / self.width).astype(int)
            idx = np.minimum(idx, np.asarray(self.cells_per_axis) - 1)
            return 1 + int(np.ravel_multi_index(tuple(idx), self.cells_per_axis))
        return self.overflow_symbol

    def cell_center(self, symbol: int) -> np.ndarray:
        idx = np.array(np.unravel_index(symbol - 1, self.cells_per_axis))
        return self.low + (idx + 0.5) * self.width

    def encoder(self):
        return _UniformEncoder(self)

    def controller(self):
        return _UniformController(self)


class _UniformEncoder:
    def __init__(self, policy: UniformQuantizerPolicy):
        self._policy = policy

    def encode(self, t: int, x) -> int:
        return self._policy.symbol_of(x)


class _UniformController:
    def __init__(self, policy: UniformQuantizerPolicy):
        self._policy = policy
        self._zero = np.zeros(policy.model.control_dim)
        self._cache: dict[int, np.ndarray] = {}

    def control(self, t: int, q: int) -> np.ndarray:
        policy = self._policy
        if q > policy.n_cells:
            return self._zero.copy()
        u = self._cache.get(q)
        if u is None:
            center = policy.cell_center(q)
            u = policy.model.b_pinv @ (policy.target - policy.model.f(center, policy.noise_mean))
            self._cache[q] = u
        return u.copy()


def uniform_quantizer_policy(
    model: SystemModel,
    box_low,
    box_high,
    bits_per_axis,
    target=None,
    noise_mean=None,
    m: Optional[int] = None,
) -> UniformQuantizerPolicy:
    return UniformQuantizerPolicy(model, box_low, box_high, bits_per_axis, target, noise_mean, m)


# --------------------------------------------------------------------------
# Adaptive zoom quantizer

class ZoomPolicy(CodingPolicy):
    """Adaptive quantizer over the moving box [center - L, center + L]^N.

    In-range measurements shrink the range (L <- alpha L) and recenter on the
    predicted image of the quantized point; overflow transmits the reserved
    symbol and expands the range (L <- beta L), so the scheme recovers on its
    own after excursions. Encoder and controller evolve replicas of the same
    (center, L) state driven purely by the symbol stream, which is what keeps
    them synchronized without side information.
    """

    def __init__(
        self,
        model: SystemModel,
        m: int,
        alpha: float,
        beta: float,
        initial_halfwidth: float,
        cells_per_axis=None,
        center=None,
        target=None,
        noise_mean=None,
    ):
        if m < 2:
            raise ValueError("zoom policy needs at least one cell plus the overflow symbol")
        if not (0.0 < alpha < 1.0):
            raise ValueError("zoom-in factor must lie in (0, 1)")
        if beta <= 1.0:
            raise ValueError("zoom-out factor must exceed 1")
        if initial_halfwidth <= 0.0:
            raise ValueError("initial halfwidth must be positive")
        self.model = model
        self.m = int(m)
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.initial_halfwidth = float(initial_halfwidth)
        if cells_per_axis is None:
            if model.n == 1:
                cells_per_axis = (m - 1,)
            else:
                k = int(math.floor((m - 1) ** (1.0 / model.n) + 1e-9))
                cells_per_axis = (max(k, 1),) * model.n
        self.cells_per_axis = tuple(int(c) for c in np.broadcast_to(cells_per_axis, (model.n,)))
        if any(c < 1 for c in self.cells_per_axis):
            raise ValueError("need at least one cell per axis")
        self.n_cells = int(np.prod(self.cells_per_axis))
        if self.n_cells > self.m - 1:
            raise ValueError(
                f"{self.n_cells} cells do not fit an alphabet of {self.m} with overflow reserved"
            )
        self.center0 = (
            np.zeros(model.n) if center is None else np.broadcast_to(np.asarray(center, float), (model.n,)).copy()
        )
        self.target = (
            np.zeros(model.n) if target is None else np.broadcast_to(np.asarray(target, float), (model.n,)).copy()
        )
        self.noise_mean = (
            np.zeros(model.noise_dim)
            if noise_mean is None
            else np.broadcast_to(np.asarray(noise_mean, float), (model.noise_dim,)).copy()
        )
        self._cells_arr = np.asarray(self.cells_per_axis, float)

    @property
    def overflow_symbol(self) -> int:
        return self.m

    def _fresh_state(self) -> "ZoomState":
        return ZoomState(center=self.center0.copy(), halfwidth=self.initial_halfwidth)

    def _symbol_of(self, state: "ZoomState", x) -> int:
        x = np.asarray(x, float)
        low = state.center - state.halfwidth
        span = 2.0 * state.halfwidth
        offset = x - low
        if np.all(offset >= 0.0) and np.all(offset < span) and np.all(np.isfinite(offset)):
            idx = (offset / span * self._cells_arr).astype(int)
            idx = np.minimum(idx, np.asarray(self.cells_per_axis) - 1)
            return 1 + int(np.ravel_multi_index(tuple(idx), self.cells_per_axis))
        return self.overflow_symbol

    def _centroid(self, state: "ZoomState", symbol: int) -> np.ndarray:
        idx = np.array(np.unravel_index(symbol - 1, self.cells_per_axis))
        low = state.center - state.halfwidth
        width = 2.0 * state.halfwidth / self._cells_arr
        return low + (idx + 0.5) * width

    def _advance(self, state: "ZoomState", symbol: int) -> np.ndarray:
        """Shared state update: returns the control for this symbol."""
        if symbol > self.n_cells:
            state.halfwidth *= self.beta
            return np.zeros(self.model.control_dim)
        xhat = self._centroid(state, symbol)
        image = self.model.f(xhat, self.noise_mean)
        u = self.model.b_pinv @ (self.target - image)
        state.center = image + self.model.b @ u
        state.halfwidth *= self.alpha
        return u

    def encoder(self):
        return _ZoomEncoder(self)

    def controller(self):
        return _ZoomController(self)


class ZoomState:
    """Mutable quantizer range; replicated on both sides of the channel."""

    __slots__ = ("center", "halfwidth")

    def __init__(self, center: np.ndarray, halfwidth: float):
        self.center = center
        self.halfwidth = halfwidth

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ZoomState)
            and self.halfwidth == other.halfwidth
            and np.array_equal(self.center, other.center)
        )

    def __repr__(self) -> str:
        return f"ZoomState(center={self.center!r}, halfwidth={self.halfwidth!r})"


class _ZoomEncoder:
    def __init__(self, policy: ZoomPolicy):
        self._policy = policy
        self.state = policy._fresh_state()

    def encode(self, t: int, x) -> int:
        symbol = self._policy._symbol_of(self.state, x)
        self._policy._advance(self.state, symbol)
        return symbol


class _ZoomController:
    def __init__(self, policy: ZoomPolicy):
        self._policy = policy
        self.state = policy._fresh_state()

    def control(self, t: int, q: int) -> np.ndarray:
        return self._policy._advance(self.state, q)


def zoom_policy(
    model: SystemModel,
    m: int,
    alpha: float,
    beta: float,
    initial_halfwidth: float,
    **kwargs,
) -> ZoomPolicy:
    return ZoomPolicy(model, m, alpha, beta, initial_halfwidth, **kwargs)
