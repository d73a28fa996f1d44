"""Probability measures on the line, as atom lists or grid densities.

Grid measures live on a uniform velocity grid and are integrated with the
trapezoid rule; atomic measures keep sorted positions with nonnegative
weights.  Both expose a CDF and a monotone quantile function, which is all
the optimal-transport machinery in one dimension ever needs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ATOMS = "atoms"
GRID = "grid"

_MASS_TOL = 1e-8


@dataclass(frozen=True)
class QuantileFn:
    """Monotone map u in (0,1) -> velocity built from a measure's CDF.

    For atomic measures this is the usual right-continuous step inverse; for
    grid measures the CDF is inverted by searchsorted plus linear
    interpolation, with ties resolved to the leftmost grid point.
    """

    u_knots: np.ndarray
    v_knots: np.ndarray
    step: bool = False

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.step:
            idx = np.searchsorted(self.u_knots, u, side="left")
            idx = np.clip(idx, 0, len(self.v_knots) - 1)
            out = self.v_knots[idx]
        else:
            out = np.interp(u, self.u_knots, self.v_knots)
        return out if out.ndim else float(out)


class Measure1D:
    """Bounded nonnegative measure on R (atoms or uniform-grid density)."""

    def __init__(self, kind: str, x: np.ndarray, w: np.ndarray):
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        if x.shape != w.shape or x.ndim != 1 or len(x) == 0:
            raise ValueError("positions and weights must be equal-length 1-d arrays")
        if not np.all(np.isfinite(x)):
            raise ValueError("positions must be finite")
        if np.any(w < 0):
            raise ValueError("weights/density values must be nonnegative")
        if kind == ATOMS:
            order = np.argsort(x, kind="stable")
            x, w = x[order], w[order]
        elif kind == GRID:
            if len(x) < 2:
                raise ValueError("grid measures need at least 2 nodes")
            dv = np.diff(x)
            if not np.allclose(dv, dv[0], rtol=1e-9, atol=0):
                raise ValueError("grid must be uniform")
        else:
            raise ValueError(f"unknown measure kind {kind!r}")
        self.kind = kind
        self.x = x
        self.w = w
        self._mass = None
        self._cdf = None
        self._quantile = None

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_atoms(cls, positions, weights) -> "Measure1D":
        return cls(ATOMS, positions, weights)

    @classmethod
    def point_mass(cls, position: float, mass: float = 1.0) -> "Measure1D":
        return cls(ATOMS, [position], [mass])

    @classmethod
    def two_point(cls, level: float) -> "Measure1D":
        """Symmetric two-atom law (1/2) d_{-a} + (1/2) d_{+a}."""
        return cls(ATOMS, [-level, level], [0.5, 0.5])

    @classmethod
    def from_grid(cls, v, density) -> "Measure1D":
        return cls(GRID, v, density)

    @classmethod
    def gaussian(cls, variance: float, v_max: float | None = None,
                 n: int = 4096) -> "Measure1D":
        """Centered Gaussian density on a symmetric grid."""
        if v_max is None:
            v_max = 8.0 * math.sqrt(variance)
        v = np.linspace(-v_max, v_max, n)
        dens = np.exp(-v * v / (2.0 * variance)) / math.sqrt(2.0 * math.pi * variance)
        return cls(GRID, v, dens)

    @classmethod
    def uniform(cls, low: float, high: float, n: int = 4096) -> "Measure1D":
        if not high > low:
            raise ValueError("need high > low")
        v = np.linspace(low, high, n)
        return cls(GRID, v, np.full(n, 1.0 / (high - low)))

    @classmethod
    def from_samples(cls, samples) -> "Measure1D":
        samples = np.asarray(samples, dtype=float)
        return cls(ATOMS, samples, np.full(len(samples), 1.0 / len(samples)))

    # -- basic functionals -------------------------------------------------

    @property
    def dv(self) -> float:
        if self.kind != GRID:
            raise ValueError("dv only defined for grid measures")
        return float(self.x[1] - self.x[0])

    @property
    def mass(self) -> float:
        if self._mass is None:
            if self.kind == ATOMS:
                self._mass = float(self.w.sum())
            else:
                self._mass = float(np.trapezoid(self.w, self.x))
        return self._mass

    def moment(self, r: float) -> float:
        """Absolute moment for non-even r, plain moment for even integer r."""
        if r == int(r) and int(r) % 2 == 0:
            integrand = self.x ** int(r)
        else:
            integrand = np.abs(self.x) ** r
        if self.kind == ATOMS:
            return float(np.sum(self.w * integrand))
        return float(np.trapezoid(self.w * integrand, self.x))

    def normalized(self) -> "Measure1D":
        m = self.mass
        if m <= 0:
            raise ValueError("cannot normalize a zero measure")
        return Measure1D(self.kind, self.x, self.w / m)

    def is_probability(self, tol: float = _MASS_TOL) -> bool:
        return abs(self.mass - 1.0) <= tol

    def cdf(self) -> np.ndarray:
        """CDF at atom positions (inclusive) or grid nodes."""
        if self._cdf is None:
            if self.kind == ATOMS:
                self._cdf = np.cumsum(self.w)
            else:
                dv = self.dv
                mid = 0.5 * (self.w[1:] + self.w[:-1]) * dv
                self._cdf = np.concatenate([[0.0], np.cumsum(mid)])
        return self._cdf

    def quantile_fn(self) -> QuantileFn:
        if self._quantile is None:
            m = self.mass
            F = self.cdf() / m
            if self.kind == ATOMS:
                self._quantile = QuantileFn(F, self.x, step=True)
            else:
                F = np.minimum.accumulate(F[::-1])[::-1]
                F = np.maximum.accumulate(F)
                keep = np.concatenate([[True], np.diff(F) > 0])
                self._quantile = QuantileFn(F[keep], self.x[keep], step=False)
        return self._quantile

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Inverse-CDF sampling (exact for the discretized measure)."""
        return np.asarray(self.quantile_fn()(rng.random(size)))

    def __repr__(self):
        return f"Measure1D({self.kind}, n={len(self.x)}, mass={self.mass:.6g})"
