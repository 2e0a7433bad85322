"""Matching specificity between paratopes.

A paratope is a ``(dim, l)`` array of normalized samples. Two paratopes are
compared by sliding the shorter one over the longer one, summing absolute
residuals per channel at every evaluated offset, thresholding each sum
against ``s`` and averaging over offsets and channels.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np


class HardwareClass(str, Enum):
    MOTOR = "Motor"
    SENSOR = "Sensor"

    @property
    def dim(self) -> int:
        return 3 if self is HardwareClass.MOTOR else 1


@dataclass(frozen=True)
class MatchParams:
    """Threshold ``s``, stride ``g`` and overhang allowance ``k``."""

    s: float
    g: int = 1
    k: int = 0

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"s must be positive, got {self.s}")
        if int(self.g) != self.g or self.g < 1:
            raise ValueError(f"g must be an integer >= 1, got {self.g}")
        if int(self.k) != self.k or self.k < 0:
            raise ValueError(f"k must be an integer >= 0, got {self.k}")

    def to_dict(self) -> dict:
        return {"s": self.s, "g": self.g, "k": self.k}

    @classmethod
    def from_dict(cls, d: dict) -> "MatchParams":
        return cls(s=float(d["s"]), g=int(d["g"]), k=int(d["k"]))


class Paratope:
    """Fixed-length multi-channel signature of robot behaviour.

    Parameters
    ----------
    values : array_like, shape (dim, l)
        Normalized samples in [0, 1]. A 1-D input is treated as one channel.
    hardware_class : HardwareClass
    """

    __slots__ = ("values", "hardware_class")

    def __init__(self, values, hardware_class: HardwareClass):
        arr = np.array(values, dtype=float)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] == 0:
            raise ValueError(f"paratope values must be (dim, l), got shape {arr.shape}")
        hardware_class = HardwareClass(hardware_class)
        if arr.shape[0] != hardware_class.dim:
            raise ValueError(
                f"{hardware_class.value} paratopes have {hardware_class.dim} channels, got {arr.shape[0]}"
            )
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("paratope samples must lie in [0, 1]")
        arr.setflags(write=False)
        self.values = arr
        self.hardware_class = hardware_class

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Paratope):
            return NotImplemented
        return self.hardware_class is other.hardware_class and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.hardware_class, self.values.tobytes()))

    def __repr__(self):
        return f"Paratope({self.hardware_class.value}, dim={self.dim}, l={self.length})"


def _as_array(p) -> np.ndarray:
    if isinstance(p, Paratope):
        return p.values
    arr = np.asarray(p, dtype=float)
    return arr[None, :] if arr.ndim == 1 else arr


def _relu(x):
    return np.maximum(x, 0.0)


def residual_at_offset(a, b, offset: int) -> float:
    """Sum of ``|a[offset + n] - b[n]|`` over the overlapping samples.

    ``a`` and ``b`` are single channels; ``b`` is placed starting at
    index ``offset`` of ``a``.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if offset < 0:
        raise ValueError("offset must be non-negative")
    eta = min(b.size, a.size - offset)
    if eta <= 0:
        raise ValueError(f"offset {offset} leaves no overlap between lengths {a.size} and {b.size}")
    return float(np.abs(a[offset:offset + eta] - b[:eta]).sum())


def offsets(l_long: int, l_short: int, params: MatchParams) -> np.ndarray:
    """Evaluated convolution offsets ``0, g, 2g, ... <= tau - 1``."""
    tau = l_long - l_short + params.k + 1
    if tau <= 0:
        raise ValueError(f"tau = {tau} <= 0: first paratope shorter than second by more than k")
    if params.k >= l_short:
        raise ValueError("k must be smaller than the shorter paratope length")
    return np.arange(0, tau, params.g)


def _order(pi: np.ndarray, pj: np.ndarray):
    return (pi, pj) if pi.shape[1] >= pj.shape[1] else (pj, pi)


def match_specificity(p_i, p_j, params: MatchParams, weights: Optional[Sequence[float]] = None) -> float:
    """Matching specificity ``m(p_i, p_j)`` in ``[0, s]``.

    The longer paratope is slid under the shorter one, so argument order
    only matters for equal lengths with ``k > 0``.
    """
    a, b = _order(_as_array(p_i), _as_array(p_j))
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    return float(match_matrix(b[None], a[None], params, weights)[0, 0])


def match_matrix(paratopes: np.ndarray, targets: np.ndarray, params: MatchParams,
                 weights: Optional[Sequence[float]] = None) -> np.ndarray:
    """Batched matching specificity.

    Parameters
    ----------
    paratopes : ndarray, shape (n, dim, l_short)
    targets : ndarray, shape (m, dim, l_long)
        Longer series (behavioural windows, or equal-length paratopes).
    params : MatchParams
    weights : sequence of float, optional
        Per-channel weights, normalized to sum to one. Uniform by default.

    Returns
    -------
    ndarray, shape (n, m)
        ``out[a, b] = m(targets[b], paratopes[a])``.
    """
    P = np.asarray(paratopes, dtype=float)
    T = np.asarray(targets, dtype=float)
    if P.ndim != 3 or T.ndim != 3:
        raise ValueError("paratopes and targets must be 3-D arrays")
    n, dim, ls = P.shape
    m, dim_t, ll = T.shape
    if dim != dim_t:
        raise ValueError(f"dimension mismatch: {dim} vs {dim_t}")
    if n == 0 or m == 0:
        return np.zeros((n, m))
    offs = offsets(ll, ls, params)
    if ll < ls:
        raise ValueError("targets must be at least as long as paratopes")
    w = np.full(dim, 1.0 / dim) if weights is None else np.asarray(weights, float) / np.sum(weights)

    # right-pad so every offset yields a full-length slice; padded cells are masked out
    pad = max(0, int(offs[-1]) + ls - ll)
    if pad:
        T = np.concatenate([T, np.zeros((m, dim, pad))], axis=2)
    windows = np.lib.stride_tricks.sliding_window_view(T, ls, axis=2)[:, :, offs, :]  # (m, dim, K, ls)
    K = offs.size
    out = np.empty((n, m))
    if pad:
        valid = (offs[:, None] + np.arange(ls)[None, :]) < ll  # (K, ls)
    # chunk over paratopes to bound memory
    chunk = max(1, int(4_000_000 // max(1, m * dim * K * ls)))
    for start in range(0, n, chunk):
        Pc = P[start:start + chunk]
        diff = np.abs(Pc[:, None, :, None, :] - windows[None])  # (c, m, dim, K, ls)
        if pad:
            diff *= valid
        res = diff.sum(axis=-1)
        g = _relu(params.s - res).mean(axis=-1)  # (c, m, dim)
        out[start:start + chunk] = g @ w
    return out


def best_match(p, repertoire, params: MatchParams) -> tuple[float, Optional[int]]:
    """Maximum matching specificity of ``p`` against a list of paratopes.

    Returns ``(0.0, None)`` for an empty repertoire; ties resolve to the
    first index.
    """
    entries = list(repertoire)
    if not entries:
        return 0.0, None
    pv = _as_array(p)
    arrs = [_as_array(e) for e in entries]
    same_shape = all(a.shape == arrs[0].shape for a in arrs)
    if same_shape and arrs[0].shape[1] == pv.shape[1]:
        # equal lengths: p stays first argument, entries slide over it
        scores = match_matrix(np.stack(arrs), pv[None], params)[:, 0]
    elif same_shape and arrs[0].shape[1] > pv.shape[1]:
        scores = match_matrix(pv[None], np.stack(arrs), params)[0]
    else:
        scores = np.array([match_specificity(pv, a, params) for a in arrs])
    idx = int(np.argmax(scores))
    return float(scores[idx]), idx
