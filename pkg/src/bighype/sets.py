"""Convex, compact leader strategy sets with exact Euclidean projections.

Every set exposes ``dim``, ``project(v)`` and ``contains(v, tol)``.  Products
are projected blockwise, in the order the parts were given.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _vec(a, name="vector"):
    a = np.asarray(a, dtype=float).reshape(-1)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    return a


def project_simplex(v, total=1.0):
    """Project ``v`` onto ``{w >= 0, sum(w) = total}`` by sorting."""
    v = np.asarray(v, dtype=float)
    if v.size == 1:
        return np.array([total])
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def _project_capped_box(v, lo, hi, cap):
    """Project onto ``{lo <= w <= hi, sum(w) <= cap}``.

    The solution is ``clip(v - tau, lo, hi)`` for the smallest ``tau >= 0``
    meeting the cap; ``sum(clip(v - tau))`` is piecewise linear in ``tau``,
    so the root is found exactly between sorted breakpoints.
    """
    w = np.clip(v, lo, hi)
    if w.sum() <= cap:
        return w
    bps = np.unique(np.concatenate([v - hi, v - lo]))
    bps = bps[bps > 0.0]
    total = lambda t: np.clip(v - t, lo, hi).sum()
    left, f_left = 0.0, w.sum()
    for t in bps:
        f_t = total(t)
        if f_t <= cap:
            # linear on [left, t]
            if f_left == f_t:
                return np.clip(v - t, lo, hi)
            tau = left + (f_left - cap) * (t - left) / (f_left - f_t)
            return np.clip(v - tau, lo, hi)
        left, f_left = t, f_t
    return np.clip(v - left, lo, hi)


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray
    sum_max: float | None = None

    def __post_init__(self):
        lo, hi = _vec(self.lo, "box lo"), _vec(self.hi, "box hi")
        if lo.shape != hi.shape:
            raise ValueError("box bounds have different lengths")
        if np.any(lo > hi):
            raise ValueError("box lo exceeds hi")
        if self.sum_max is not None and self.sum_max < lo.sum() - 1e-12:
            raise ValueError("box sum cap below the sum of lower bounds (empty set)")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.size

    def project(self, v):
        v = np.asarray(v, dtype=float)
        if self.sum_max is None:
            return np.clip(v, self.lo, self.hi)
        return _project_capped_box(v, self.lo, self.hi, self.sum_max)

    def contains(self, v, tol=1e-9):
        v = np.asarray(v, dtype=float)
        ok = np.all(v >= self.lo - tol) and np.all(v <= self.hi + tol)
        if self.sum_max is not None:
            ok = ok and v.sum() <= self.sum_max + tol
        return bool(ok)

    def center(self):
        c = 0.5 * (self.lo + self.hi)
        return self.project(c)


@dataclass(frozen=True, eq=False)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center, "ball center"))
        if not (np.isfinite(self.radius) and self.radius >= 0):
            raise ValueError("ball radius must be finite and nonnegative")

    @property
    def dim(self):
        return self.center.size

    def project(self, v):
        d = np.asarray(v, dtype=float) - self.center
        nrm = np.linalg.norm(d)
        if nrm <= self.radius:
            return self.center + d
        return self.center + d * (self.radius / nrm)

    def contains(self, v, tol=1e-9):
        return bool(np.linalg.norm(np.asarray(v, dtype=float) - self.center) <= self.radius + tol)


@dataclass(frozen=True, eq=False)
class Simplex:
    """``{w >= lower, sum(w) = total}``; the default is the unit simplex."""

    dim: int
    lower: np.ndarray | None = None
    total: float = 1.0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("simplex dimension must be positive")
        lower = np.zeros(self.dim) if self.lower is None else _vec(self.lower, "simplex lower")
        if lower.size != self.dim:
            raise ValueError("simplex lower bounds have wrong length")
        if lower.sum() > self.total + 1e-12:
            raise ValueError("simplex lower bounds exceed the total (empty set)")
        object.__setattr__(self, "lower", lower)

    def project(self, v):
        v = np.asarray(v, dtype=float)
        slack = self.total - self.lower.sum()
        return self.lower + project_simplex(v - self.lower, slack)

    def contains(self, v, tol=1e-9):
        v = np.asarray(v, dtype=float)
        return bool(np.all(v >= self.lower - tol) and abs(v.sum() - self.total) <= tol)

    def center(self):
        return self.lower + (self.total - self.lower.sum()) / self.dim


@dataclass(frozen=True, eq=False)
class Product:
    parts: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ValueError("empty product set")

    @property
    def dim(self):
        return sum(p.dim for p in self.parts)

    def _split(self, v):
        out, start = [], 0
        for p in self.parts:
            out.append(v[start:start + p.dim])
            start += p.dim
        return out

    def project(self, v):
        v = np.asarray(v, dtype=float)
        return np.concatenate([p.project(b) for p, b in zip(self.parts, self._split(v))])

    def contains(self, v, tol=1e-9):
        v = np.asarray(v, dtype=float)
        return all(p.contains(b, tol) for p, b in zip(self.parts, self._split(v)))


def project(leader_set, v):
    """Euclidean projection of ``v`` onto a leader set descriptor."""
    v = np.asarray(v, dtype=float)
    if v.shape != (leader_set.dim,):
        from .errors import DimensionMismatch

        raise DimensionMismatch(f"expected vector of length {leader_set.dim}, got shape {v.shape}")
    return leader_set.project(v)


def default_point(leader_set):
    """A deterministic feasible point, used as the default initial iterate."""
    if isinstance(leader_set, Ball):
        return leader_set.center.copy()
    if isinstance(leader_set, Product):
        return np.concatenate([default_point(p) for p in leader_set.parts])
    return leader_set.center()
