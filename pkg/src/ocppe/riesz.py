"""Lasso minimum-distance estimation of the Riesz representer.

The representer L(d, x) = d_d(vartheta f)(d, x) / f(d, x) is characterised by
the integration-by-parts identity E[d_d h(D, X) vartheta(D) + L(D, X) h(D, X)] = 0
for every basis function h, so it can be fitted as L_hat = h' gamma_hat without
estimating the joint density f.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .basis import Basis
from .errors import ConvergenceError
from .solvers import cd_quadratic_l1, l1_objective


def penalty_level_gamma(n: int, p_h: int, A: float | None = None) -> float:
    """lambda_gamma = A sqrt(log(max(p_h, n)) / n) with A = log(log n) by default."""
    if n < 16:
        raise ValueError("penalty_level_gamma needs n >= 16 so that log(log n) > 0")
    if A is None:
        A = math.log(math.log(n))
    return A * math.sqrt(math.log(max(p_h, n)) / n)


@dataclass(frozen=True)
class RieszConfig:
    intercept: bool = True
    A: float | None = None
    lambda_gamma: float | None = None
    tol: float = 1e-10
    max_sweeps: int = 100000
    # Unpenalised minimum-distance refit on the selected support (off by default).
    refit: bool = False


def riesz_design(basis: Basis, d, x, intercept: bool = True):
    """Values and d-derivatives of h(d, x), with an optional leading constant."""
    H = basis.design(d, x)
    dH = basis.ddesign(d, x)
    if intercept:
        H = np.column_stack([np.ones(H.shape[0]), H])
        dH = np.column_stack([np.zeros(dH.shape[0]), dH])
    return H, dH


def build_moments(H: np.ndarray, dH: np.ndarray, theta_d) -> tuple[np.ndarray, np.ndarray]:
    """M_hat = -mean(d_d h * vartheta), G_hat = mean(h h')."""
    n = H.shape[0]
    M = -(dH.T @ np.asarray(theta_d, dtype=float)) / n
    G = H.T @ H / n
    return M, G


@dataclass
class RieszFit:
    gamma: np.ndarray
    lambda_gamma: float
    sigma: tuple = ()
    intercept: bool = True
    basis: Basis | None = field(default=None, repr=False)
    sweeps: int = 0
    kkt: float = 0.0
    objective: float = 0.0

    @property
    def support(self):
        return np.flatnonzero(self.gamma)

    def __call__(self, d, x):
        H, _ = riesz_design(self.basis, d, x, self.intercept)
        return H @ self.gamma

    def to_dict(self):
        names = (["(intercept)"] if self.intercept else []) + (self.basis.names() if self.basis else [])
        sup = self.support
        return {
            "lambda": self.lambda_gamma,
            "sigma": list(self.sigma),
            "support": [int(k) for k in sup],
            "terms": [names[k] for k in sup] if names else [],
            "coef": [float(self.gamma[k]) for k in sup],
        }


def lasso_md_fit(M: np.ndarray, G: np.ndarray, lambda_gamma: float, penalize=None,
                 gamma0=None, tol: float = 1e-10, max_sweeps: int = 100000) -> RieszFit:
    """argmin_gamma  -2 M'gamma + gamma' G gamma + 2 lambda ||gamma||_1.

    Equivalent to  -M'gamma + gamma'G gamma / 2 + lambda ||gamma||_1, whose KKT
    conditions are |M - G gamma|_j <= lambda (equality with sign(gamma_j) on the
    support). ``penalize`` is an optional boolean mask; unpenalised coordinates get
    weight 0.
    """
    M = np.asarray(M, dtype=float)
    w = np.full(M.shape, float(lambda_gamma))
    if penalize is not None:
        w[~np.asarray(penalize, dtype=bool)] = 0.0
    gamma, sweeps, viol = cd_quadratic_l1(G, -M, w, gamma0, max_sweeps=max_sweeps, tol=tol)
    obj = 2.0 * l1_objective(G, -M, w, gamma)
    if not np.isfinite(viol) or viol > max(tol, 1e-8 * max(lambda_gamma, 1.0)) * 10:
        raise ConvergenceError(
            f"Riesz minimum-distance fit did not converge (KKT violation {viol:.3g}, "
            f"objective {obj:.10g})",
            context={"kkt": viol, "objective": obj},
        )
    return RieszFit(gamma, float(lambda_gamma), sweeps=sweeps, kkt=viol, objective=obj)


def refit_support(M, G, support) -> np.ndarray:
    """Solve G_SS gamma_S = M_S on the support S (least squares if singular)."""
    S = np.asarray(support, dtype=int)
    gamma = np.zeros(M.shape[0])
    if S.size:
        gamma[S] = np.linalg.lstsq(G[np.ix_(S, S)], M[S], rcond=None)[0]
    return gamma


def fit_riesz(data, basis: Basis, intervention, config: RieszConfig | None = None,
              design=None, gamma0=None) -> RieszFit:
    """Fit L_hat for one intervention (family member) on ``data``."""
    config = config or RieszConfig()
    if design is None:
        design = riesz_design(basis, data.d, data.x, config.intercept)
    H, dH = design
    theta_d = intervention.vartheta(data.d, data.x)
    M, G = build_moments(H, dH, theta_d)
    lam = config.lambda_gamma
    if lam is None:
        lam = penalty_level_gamma(data.n, basis.dim, config.A)
    mask = None
    if config.intercept:
        mask = np.ones(H.shape[1], dtype=bool)
        mask[0] = False
    fit = lasso_md_fit(M, G, lam, mask, gamma0=gamma0, tol=config.tol, max_sweeps=config.max_sweeps)
    if config.refit:
        fit.gamma = refit_support(M, G, fit.support)
    fit.sigma = tuple(intervention.sigma)
    fit.intercept = config.intercept
    fit.basis = basis
    return fit


def L_hat(fit: RieszFit, d, x):
    return fit(d, x)
