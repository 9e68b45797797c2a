"""Discretized type spaces.

A :class:`TypeSpace` is a weighted point set standing in for a measure space
``(S, mu)``: points are cell representatives, weights are cell masses.  Every
integral against ``mu`` in the package goes through :func:`integrate`.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "TypeSpace",
    "build_uniform_mesh",
    "build_graded_mesh",
    "build_powerlaw_space",
    "build_finite_space",
    "integrate",
    "to_csv",
    "from_csv",
]


@dataclass(frozen=True, eq=False)
class TypeSpace:
    """Weighted point set approximating a measure space.

    ``bounds`` holds the cell boundaries for interval-based spaces (length
    ``m + 1``) and is ``None`` for finite spaces.  ``kind`` is one of
    ``"interval"``, ``"powerlaw"`` or ``"finite"``; the graph sampler uses it
    to draw i.i.d. types from the underlying continuous measure.
    """

    points: np.ndarray
    weights: np.ndarray
    total_mass: float
    description: str = ""
    kind: str = "interval"
    bounds: Optional[np.ndarray] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        wts = np.asarray(self.weights, dtype=float)
        if pts.ndim != 1 or pts.shape != wts.shape or pts.size == 0:
            raise ValueError("points and weights must be non-empty 1-d arrays of equal length")
        if not np.all(wts > 0):
            raise ValueError("all weights must be positive")
        total = float(self.total_mass)
        if abs(wts.sum() - total) > 1e-12 * max(total, 1.0):
            raise ValueError("weights do not sum to total_mass")
        pts.setflags(write=False)
        wts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)
        object.__setattr__(self, "total_mass", total)
        if self.bounds is not None:
            b = np.asarray(self.bounds, dtype=float)
            b.setflags(write=False)
            object.__setattr__(self, "bounds", b)

    @property
    def size(self) -> int:
        return int(self.points.size)

    def __len__(self) -> int:
        return self.size

    def permuted(self, perm) -> "TypeSpace":
        """Same measure with (point, weight) pairs reordered; drops ``bounds``."""
        perm = np.asarray(perm)
        return TypeSpace(self.points[perm], self.weights[perm], self.total_mass,
                         self.description, kind=self.kind, bounds=None,
                         params=dict(self.params))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` i.i.d. types from the measure normalized to mass 1.

        Interval meshes draw uniformly inside the chosen cell (exact for
        Lebesgue measure); power-law spaces invert the cell CDF exactly;
        finite spaces return atom labels.
        """
        p = self.weights / self.weights.sum()
        cells = rng.choice(self.size, size=n, p=p)
        if self.kind == "finite" or self.bounds is None:
            return self.points[cells].copy()
        lo = self.bounds[cells]
        hi = self.bounds[cells + 1]
        u = rng.random(n)
        if self.kind == "powerlaw":
            q = self.params["q"]
            # mass of [lo, x] is lo^-q - x^-q
            return (lo ** -q - u * (lo ** -q - hi ** -q)) ** (-1.0 / q)
        return lo + u * (hi - lo)


def build_uniform_mesh(m: int) -> TypeSpace:
    """Midpoint mesh of Lebesgue measure on (0, 1] with ``m`` equal cells."""
    if int(m) != m or m < 1:
        raise ValueError(f"mesh size must be a positive integer, got {m!r}")
    m = int(m)
    bounds = np.arange(m + 1) / m
    points = (np.arange(m) + 0.5) / m
    weights = np.full(m, 1.0 / m)
    return TypeSpace(points, weights, 1.0, f"uniform:{m}", bounds=bounds,
                     params={"m": m})


def build_graded_mesh(m: int, gamma: float = 2.0) -> TypeSpace:
    """Mesh of (0, 1] with boundaries ``(i/m)**gamma``, refined toward 0."""
    if int(m) != m or m < 1:
        raise ValueError(f"mesh size must be a positive integer, got {m!r}")
    if not gamma >= 1:
        raise ValueError(f"grading exponent must be >= 1, got {gamma!r}")
    m = int(m)
    if gamma == 1:
        ts = build_uniform_mesh(m)
        return TypeSpace(ts.points, ts.weights, 1.0, f"graded:{m}:1",
                         bounds=ts.bounds, params={"m": m, "gamma": 1.0})
    bounds = (np.arange(m + 1) / m) ** gamma
    points = 0.5 * (bounds[1:] + bounds[:-1])
    weights = np.diff(bounds)
    # telescoping sum is 1 up to rounding; pin it to the realized sum
    return TypeSpace(points, weights, float(weights.sum()), f"graded:{m}:{gamma:g}",
                     bounds=bounds, params={"m": m, "gamma": float(gamma)})


def build_powerlaw_space(q: float, x_max: float, m: int) -> TypeSpace:
    """Truncation of ``dmu = q x^(-q-1) dx`` on ``[1, x_max]``.

    Cells are geometric and each weight is the exact cell mass, so the only
    error in the measure is the missing tail ``x_max**-q``, which is recorded
    in the description.
    """
    if not q > 1:
        raise ValueError(f"power-law exponent must exceed 1, got {q!r}")
    if not x_max > 1:
        raise ValueError(f"x_max must exceed 1, got {x_max!r}")
    if int(m) != m or m < 1:
        raise ValueError(f"mesh size must be a positive integer, got {m!r}")
    m = int(m)
    bounds = np.geomspace(1.0, x_max, m + 1)
    bounds[0], bounds[-1] = 1.0, float(x_max)
    points = 0.5 * (bounds[1:] + bounds[:-1])
    weights = bounds[:-1] ** -q - bounds[1:] ** -q
    deficit = float(x_max) ** -q
    desc = f"powerlaw:{q:g}:{x_max:g}:{m} (truncated tail mass {deficit:.3e})"
    return TypeSpace(points, weights, float(weights.sum()), desc, kind="powerlaw",
                     bounds=bounds, params={"q": float(q), "x_max": float(x_max),
                                            "m": m, "deficit": deficit})


def build_finite_space(masses) -> TypeSpace:
    """Atoms labelled ``1..n`` carrying the given masses."""
    masses = np.asarray(masses, dtype=float)
    if masses.ndim != 1 or masses.size == 0:
        raise ValueError("masses must be a non-empty sequence")
    if not np.all(masses > 0):
        raise ValueError("all atom masses must be positive")
    points = np.arange(1, masses.size + 1, dtype=float)
    label = "atom" if masses.size == 1 else "finite:" + ",".join(f"{v:g}" for v in masses)
    return TypeSpace(points, masses, float(math.fsum(masses)), label, kind="finite")


def integrate(ts: TypeSpace, f: Callable) -> float:
    """Quadrature ``sum_i w_i f(x_i)``; ``f`` is called on the full point array."""
    vals = np.asarray(f(ts.points), dtype=float)
    if vals.shape == ():
        vals = np.full(ts.size, float(vals))
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("integrand is not finite at every mesh point")
    return float(np.dot(ts.weights, vals))


def to_csv(ts: TypeSpace) -> str:
    """Serialize as ``# total_mass=...,description=...`` then ``point,weight`` rows."""
    buf = io.StringIO()
    buf.write(f"# total_mass={ts.total_mass!r},description={ts.description}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["point", "weight"])
    for x, w in zip(ts.points, ts.weights):
        writer.writerow([repr(float(x)), repr(float(w))])
    return buf.getvalue()


def from_csv(text: str) -> TypeSpace:
    lines = text.splitlines()
    header = lines[0].lstrip("# ")
    total_part, _, desc_part = header.partition(",description=")
    total = float(total_part.split("=", 1)[1])
    rows = list(csv.reader(lines[2:]))
    pts = [float(r[0]) for r in rows if r]
    wts = [float(r[1]) for r in rows if r]
    return TypeSpace(np.array(pts), np.array(wts), total, desc_part)
