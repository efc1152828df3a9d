"""Polynomial basis b(d, x) over the variables z = (d, x_1, ..., x_p).

Term order is fixed so coefficient vectors are portable between runs:

1. linear terms ``z_0, ..., z_p`` (``z_0 = d``);
2. squares ``z_0^2, ..., z_p^2`` (degree >= 2);
3. pairwise interactions ``z_a z_b`` for ``a < b`` in lexicographic order
   (degree >= 2 with interactions);
4. cubes ``z_k^3`` (degree 3);
5. remaining degree-3 monomials ``z_a^2 z_b`` (a != b) and ``z_a z_b z_c``
   (a < b < c), lexicographic in the sorted exponent tuple (degree 3 with
   interactions).

No constant term is produced; estimators add an intercept themselves.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np
import scipy.linalg

# Pivot threshold for the rank-revealing QR used by ``drop_collinear``.
COLLINEAR_TOL = 1e-9


@dataclass(frozen=True)
class BasisSpec:
    degree: int = 2
    include_interactions: bool = True
    drop_collinear: bool = False

    def __post_init__(self):
        if self.degree not in (1, 2, 3):
            raise ValueError(f"basis degree must be 1, 2 or 3, got {self.degree}")

    def terms(self, p_x: int) -> list[tuple[int, ...]]:
        """Monomials as sorted tuples of variable indices (0 is d)."""
        q = p_x + 1
        out: list[tuple[int, ...]] = [(k,) for k in range(q)]
        if self.degree >= 2:
            out += [(k, k) for k in range(q)]
            if self.include_interactions:
                out += list(itertools.combinations(range(q), 2))
        if self.degree >= 3:
            out += [(k, k, k) for k in range(q)]
            if self.include_interactions:
                out += [
                    t
                    for t in itertools.combinations_with_replacement(range(q), 3)
                    if len(set(t)) > 1
                ]
        return out

    def dimension(self, p_x: int) -> int:
        """Closed-form number of terms before any collinearity drop."""
        q = p_x + 1
        if self.include_interactions:
            return comb(q + self.degree, self.degree) - 1
        return q * self.degree

    def fit(self, d, x) -> Basis:
        """Bind the basis definition to a sample, resolving collinear terms if requested."""
        x = np.atleast_2d(np.asarray(x, dtype=float).T).T
        basis = Basis(self, x.shape[1], None)
        if not self.drop_collinear:
            return basis
        keep = collinear_keep(basis.design(d, x))
        return Basis(self, x.shape[1], tuple(int(k) for k in keep))


def collinear_keep(B: np.ndarray, tol: float = COLLINEAR_TOL) -> np.ndarray:
    """Indices of a maximal linearly independent set of columns of ``[1, B]``.

    Columns are centred and scaled first, so constant columns (collinear with
    the intercept) are always dropped.
    """
    sd = B.std(axis=0)
    live = np.flatnonzero(sd > tol * np.maximum(1.0, np.abs(B).max(axis=0)))
    if live.size == 0:
        return live
    Z = (B[:, live] - B[:, live].mean(axis=0)) / sd[live]
    _, R, piv = scipy.linalg.qr(Z, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * diag[0]))
    return np.sort(live[piv[:rank]])


@dataclass(frozen=True)
class Basis:
    """A basis spec bound to a control dimension (and optional kept columns)."""

    spec: BasisSpec
    p_x: int
    keep: tuple[int, ...] | None = None

    @property
    def terms(self) -> list[tuple[int, ...]]:
        t = self.spec.terms(self.p_x)
        return t if self.keep is None else [t[k] for k in self.keep]

    @property
    def dim(self) -> int:
        return len(self.terms)

    def names(self, columns=None) -> list[str]:
        cols = ["d"] + list(columns or [f"x{j + 1}" for j in range(self.p_x)])
        out = []
        for t in self.terms:
            parts = []
            for k in sorted(set(t)):
                m = t.count(k)
                parts.append(cols[k] if m == 1 else f"{cols[k]}^{m}")
            out.append("*".join(parts))
        return out

    def _z(self, d, x):
        d = np.atleast_1d(np.asarray(d, dtype=float))
        x = np.asarray(x, dtype=float)
        if x.ndim <= 1:
            x = x.reshape(1, -1) if d.shape[0] == 1 else x.reshape(-1, 1)
        if x.shape[1] != self.p_x:
            raise ValueError(f"expected {self.p_x} controls, got {x.shape[1]}")
        return np.column_stack([d, x])

    def design(self, d, x) -> np.ndarray:
        """Matrix of basis values, one row per observation."""
        z = self._z(d, x)
        out = np.empty((z.shape[0], self.dim))
        for col, t in enumerate(self.terms):
            v = z[:, t[0]].copy()
            for k in t[1:]:
                v *= z[:, k]
            out[:, col] = v
        return out

    def ddesign(self, d, x) -> np.ndarray:
        """Exact partial derivative in d of every basis column."""
        z = self._z(d, x)
        out = np.zeros((z.shape[0], self.dim))
        for col, t in enumerate(self.terms):
            m = t.count(0)
            if m == 0:
                continue
            rest = list(t)
            rest.remove(0)
            v = np.full(z.shape[0], float(m))
            for k in rest:
                v = v * z[:, k]
            out[:, col] = v
        return out


def _single(spec, d, x, method):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    scalar = np.ndim(d) == 0
    p_x = x.shape[-1] if (scalar or x.ndim == 2) else 1
    out = getattr(Basis(spec, p_x), method)(d, x)
    return out[0] if scalar else out


def expand_basis(spec: BasisSpec, d, x) -> np.ndarray:
    """Basis vector at one point (scalar d), or a design matrix."""
    return _single(spec, d, x, "design")


def expand_basis_ddot(spec: BasisSpec, d, x) -> np.ndarray:
    """Derivative in d of :func:`expand_basis`."""
    return _single(spec, d, x, "ddesign")
