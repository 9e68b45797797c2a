"""Kernel catalog.

Kernels are pure evaluation objects.  ``evaluate`` is vectorized: it accepts
numpy arrays (broadcast against each other) as well as scalars.  Structure
that other modules exploit is carried as metadata:

* ``bound`` for bounded kernels (thinning sampler),
* ``phi`` for kernels of the form ``phi(max(x, y))`` (sorted sampler, ODE route),
* ``psi`` and ``moments`` for rank-1 kernels ``psi(x) psi(y)``,
* ``matrix`` for kernels on finite type spaces.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

NONE = "none"
INVERSE_AT_ZERO = "inverse_at_zero"


@dataclass(frozen=True)
class Kernel:
    evaluate: Callable
    name: str
    bound: Optional[float] = None
    singularity: str = NONE
    closed_form_tags: frozenset = frozenset()
    phi: Optional[Callable] = None
    phi_derivative: Optional[Callable] = None
    psi: Optional[Callable] = None
    moments: Optional[dict] = None
    matrix: Optional[np.ndarray] = field(default=None, compare=False)
    scale: float = 1.0

    def __call__(self, x, y):
        return self.evaluate(x, y)

    @property
    def bounded(self) -> bool:
        return self.bound is not None


def _const(c):
    def evaluate(x, y):
        return np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, c)[()]
    return evaluate


def constant_kernel(c: float) -> Kernel:
    """Erdos-Renyi kernel ``kappa == c``."""
    if not c > 0:
        raise ValueError(f"constant kernel needs c > 0, got {c!r}")
    c = float(c)
    return Kernel(_const(c), f"constant:{c:g}", bound=c,
                  closed_form_tags=frozenset({"chi_sub", "chi_hat", "rho_k", "lambda_c"}),
                  phi=lambda t: np.full_like(np.asarray(t, dtype=float), c),
                  phi_derivative=lambda t: np.zeros_like(np.asarray(t, dtype=float)),
                  psi=lambda t: np.full_like(np.asarray(t, dtype=float), np.sqrt(c)),
                  moments={1: np.sqrt(c), 2: c, 3: c ** 1.5, 4: c ** 2})


# named psi functions with their exact moments on (0, 1] under Lebesgue measure
_PSI_CATALOG = {
    "one": (lambda x: np.ones_like(np.asarray(x, dtype=float)), {1: 1.0, 2: 1.0, 3: 1.0, 4: 1.0}),
    "one_plus_x": (lambda x: 1.0 + np.asarray(x, dtype=float),
                   {1: 3 / 2, 2: 7 / 3, 3: 15 / 4, 4: 31 / 5}),
    "linear": (lambda x: np.asarray(x, dtype=float), None),
}


def rank1_kernel(psi: Callable | str, psi_name: str | None = None,
                 moments: dict | None = None, bound: float | None = None) -> Kernel:
    """``kappa(x, y) = psi(x) psi(y)``.

    ``psi`` may be a callable or a catalog name (``"one"``, ``"one_plus_x"``,
    ``"linear"``).  ``moments`` maps p to the exact integral of ``psi**p``
    when known; callers fall back to quadrature otherwise.
    """
    if isinstance(psi, str):
        psi_name = psi_name or psi
        try:
            psi, cat_moments = _PSI_CATALOG[psi]
        except KeyError:
            raise ValueError(f"unknown psi {psi!r}; known: {sorted(_PSI_CATALOG)}") from None
        moments = moments if moments is not None else cat_moments
        if bound is None and psi_name == "one_plus_x":
            bound = 4.0
        if bound is None and psi_name == "one":
            bound = 1.0
    psi_name = psi_name or getattr(psi, "__name__", "psi")
    f = psi

    def evaluate(x, y):
        return f(x) * f(y)

    return Kernel(evaluate, f"rank1:psi={psi_name}", bound=bound, psi=f,
                  moments=dict(moments) if moments else None,
                  closed_form_tags=frozenset({"chi_sub", "chi_hat", "lambda_c"}))


def _inv_max_minus_one(t):
    return 1.0 / t - 1.0


def _inv(t):
    return 1.0 / t


def _max_args(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    mx = np.maximum(x, y)
    if np.any(mx <= 0):
        raise ValueError("kernel is singular at x = y = 0 (types must lie in (0, 1])")
    return mx


def chkns_kernel() -> Kernel:
    """``1/max(x, y) - 1`` on (0, 1]."""
    def evaluate(x, y):
        return 1.0 / _max_args(x, y) - 1.0

    return Kernel(evaluate, "chkns", singularity=INVERSE_AT_ZERO,
                  closed_form_tags=frozenset({"chi_sub", "chi_hat", "rho_k", "lambda_c"}),
                  phi=_inv_max_minus_one, phi_derivative=lambda t: -1.0 / np.asarray(t) ** 2)


def dubins_kernel() -> Kernel:
    """``1/max(x, y)`` on (0, 1]."""
    def evaluate(x, y):
        return 1.0 / _max_args(x, y)

    return Kernel(evaluate, "dubins", singularity=INVERSE_AT_ZERO,
                  closed_form_tags=frozenset({"chi_sub", "rho_k", "lambda_c"}),
                  phi=_inv, phi_derivative=lambda t: -1.0 / np.asarray(t) ** 2)


_PHI_CATALOG = {
    "one": (lambda t: np.ones_like(np.asarray(t, dtype=float)),
            lambda t: np.zeros_like(np.asarray(t, dtype=float)), 1.0, NONE),
    "one_minus_x": (lambda t: 1.0 - np.asarray(t, dtype=float),
                    lambda t: -np.ones_like(np.asarray(t, dtype=float)), 1.0, NONE),
    "inverse": (_inv, lambda t: -1.0 / np.asarray(t) ** 2, None, INVERSE_AT_ZERO),
}


def max_kernel(phi: Callable | str, phi_name: str | None = None,
               phi_derivative: Callable | None = None, bound: float | None = None) -> Kernel:
    """``kappa(x, y) = phi(max(x, y))`` on (0, 1]."""
    singularity = NONE
    if isinstance(phi, str):
        phi_name = phi_name or phi
        try:
            phi, dphi, cat_bound, singularity = _PHI_CATALOG[phi]
        except KeyError:
            raise ValueError(f"unknown phi {phi!r}; known: {sorted(_PHI_CATALOG)}") from None
        phi_derivative = phi_derivative or dphi
        bound = bound if bound is not None else cat_bound
    phi_name = phi_name or getattr(phi, "__name__", "phi")
    f = phi

    def evaluate(x, y):
        return f(np.maximum(np.asarray(x, dtype=float), np.asarray(y, dtype=float)))

    return Kernel(evaluate, f"max:phi={phi_name}", bound=bound, singularity=singularity,
                  closed_form_tags=frozenset({"chi_sub", "lambda_c"}),
                  phi=f, phi_derivative=phi_derivative)


def finite_kernel(matrix) -> Kernel:
    """Kernel on atoms ``1..n`` given by a symmetric non-negative matrix."""
    mat = np.array(matrix, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.size == 0:
        raise ValueError("finite kernel needs a non-empty square matrix")
    if not np.array_equal(mat, mat.T):
        raise ValueError("finite kernel matrix must be symmetric")
    if np.any(mat < 0):
        raise ValueError("finite kernel matrix must be non-negative")
    mat.setflags(write=False)

    def evaluate(i, j):
        i = np.asarray(i)
        j = np.asarray(j)
        ii = np.rint(i).astype(np.int64) - 1
        jj = np.rint(j).astype(np.int64) - 1
        if np.any(ii < 0) or np.any(jj < 0) or np.any(ii >= mat.shape[0]) or np.any(jj >= mat.shape[0]):
            raise IndexError("atom label outside 1..n")
        return mat[ii, jj]

    label = "finite:" + ";".join(",".join(f"{v:g}" for v in row) for row in mat)
    return Kernel(evaluate, label, bound=float(mat.max()), matrix=mat,
                  closed_form_tags=frozenset({"lambda_c"}))


def e2_kernel(eps: float) -> Kernel:
    """Two-type kernel with diagonal (2, 1) and off-diagonal ``eps``."""
    k = finite_kernel([[2.0, eps], [eps, 1.0]])
    return replace(k, name=f"finite:2,eps={eps:g}")


def scale(k: Kernel, lam: float) -> Kernel:
    """Pointwise multiple ``lam * kappa``; structure metadata is carried along."""
    if not lam > 0:
        raise ValueError(f"scale factor must be positive, got {lam!r}")
    lam = float(lam)
    if lam == 1.0:
        return k
    base = k.evaluate

    def evaluate(x, y):
        return lam * base(x, y)

    phi = dphi = psi = None
    if k.phi is not None:
        p0 = k.phi
        phi = lambda t: lam * p0(t)  # noqa: E731
        if k.phi_derivative is not None:
            d0 = k.phi_derivative
            dphi = lambda t: lam * d0(t)  # noqa: E731
    if k.psi is not None:
        s0 = k.psi
        r = np.sqrt(lam)
        psi = lambda t: r * s0(t)  # noqa: E731
    moments = None
    if k.moments:
        moments = {p: v * lam ** (p / 2) for p, v in k.moments.items()}
    matrix = None if k.matrix is None else k.matrix * lam
    return replace(k, evaluate=evaluate, bound=None if k.bound is None else k.bound * lam,
                   phi=phi, phi_derivative=dphi, psi=psi, moments=moments,
                   matrix=matrix, scale=k.scale * lam)


_PSI_ALIASES = {"linear": "linear", "x": "linear", "one_plus_x": "one_plus_x",
                "1+x": "one_plus_x", "one": "one", "1": "one"}
_PHI_ALIASES = {"one_minus_x": "one_minus_x", "1-x": "one_minus_x", "one": "one",
                "1": "one", "inverse": "inverse", "1/x": "inverse"}


def parse_kernel(spec: str) -> Kernel:
    """Build a kernel from a CLI spec string.

    Accepted forms: ``constant:<c>``, ``chkns``, ``dubins``,
    ``rank1:psi=<name>``, ``max:phi=<name>``, ``finite:2,eps=<e>`` (the
    two-type example) and ``finite:<a>,<b>;<c>,<d>`` (explicit matrix rows).
    """
    name, _, rest = spec.strip().partition(":")
    name = name.lower()
    try:
        if name == "constant":
            return constant_kernel(float(rest) if rest else 1.0)
        if name == "chkns" and not rest:
            return chkns_kernel()
        if name == "dubins" and not rest:
            return dubins_kernel()
        if name == "rank1":
            key, _, val = rest.partition("=")
            if key != "psi" or val not in _PSI_ALIASES:
                raise ValueError
            return rank1_kernel(_PSI_ALIASES[val])
        if name == "max":
            key, _, val = rest.partition("=")
            if key != "phi" or val not in _PHI_ALIASES:
                raise ValueError
            return max_kernel(_PHI_ALIASES[val])
        if name == "finite":
            if rest.startswith("2,eps="):
                return e2_kernel(float(rest.split("=", 1)[1]))
            rows = [[float(v) for v in row.split(",")] for row in rest.split(";")]
            return finite_kernel(rows)
    except ValueError as exc:
        raise ValueError(f"invalid kernel spec {spec!r}: {exc}" if str(exc) else
                         f"invalid kernel spec {spec!r}") from None
    raise ValueError(f"invalid kernel spec {spec!r}")
