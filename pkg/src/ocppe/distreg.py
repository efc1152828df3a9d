"""Lasso distribution regression F_Y(y | d, x) ~ Lambda(b(d, x)' beta(y)).

At every outcome threshold y the binary outcome 1{Y <= y} is regressed on
``[1, b(d, x)]`` by weighted-l1 penalised maximum likelihood, followed by an
unpenalised refit on the selected support. The intercept is unpenalised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_ndtr, ndtr
from scipy.stats import norm

from .basis import Basis
from .errors import ConvergenceError
from .solvers import cd_quadratic_l1, kkt_violation

LOADING_FLOOR = 1e-8
# Intercept used for a threshold where every 1{Y <= y} is equal.
DEGENERATE_INDEX = 40.0


def penalty_level_beta(n: int, p_b: int) -> float:
    """lambda = 1.1 sqrt(n) Phi^{-1}(1 - (0.1 / log n) / (2 p_b n))."""
    if n < 2 or p_b < 1:
        raise ValueError("need n >= 2 and p_b >= 1")
    return 1.1 * math.sqrt(n) * float(norm.isf((0.1 / math.log(n)) / (2 * p_b * n)))


class Link:
    name = "abstract"

    def cdf(self, t):
        raise NotImplementedError

    def pdf(self, t):
        """Derivative of ``cdf`` in its argument."""
        raise NotImplementedError

    def nll(self, eta, z) -> float:
        raise NotImplementedError

    def grad_weight(self, eta, z):
        """Per-observation derivative and curvature weight of the NLL in eta."""
        raise NotImplementedError

    def index(self, p):
        raise NotImplementedError


class LogisticLink(Link):
    name = "logistic"

    def cdf(self, t):
        return expit(t)

    def pdf(self, t):
        p = expit(t)
        return p * (1.0 - p)

    def nll(self, eta, z):
        # log(1 + e^eta) - z eta, computed stably.
        return float(np.mean(np.logaddexp(0.0, eta) - z * eta))

    def grad_weight(self, eta, z):
        p = expit(eta)
        return p - z, p * (1.0 - p)

    def index(self, p):
        return math.log(p / (1.0 - p))


class ProbitLink(Link):
    name = "probit"

    def cdf(self, t):
        return ndtr(t)

    def pdf(self, t):
        return norm.pdf(t)

    def nll(self, eta, z):
        return float(-np.mean(z * log_ndtr(eta) + (1.0 - z) * log_ndtr(-eta)))

    def grad_weight(self, eta, z):
        # Inverse Mills ratios via log-CDFs for tail stability; Fisher weights.
        phi = norm.logpdf(eta)
        r1 = np.exp(phi - log_ndtr(eta))
        r0 = np.exp(phi - log_ndtr(-eta))
        g = -(z * r1 - (1.0 - z) * r0)
        return g, r1 * r0

    def index(self, p):
        return float(norm.ppf(p))


LINKS = {"logistic": LogisticLink(), "probit": ProbitLink()}


@dataclass(frozen=True)
class DistRegConfig:
    J: int = 100
    link: str = "logistic"
    loading_rounds: int = 2
    max_iter: int = 1000
    kkt_tol: float = 1e-7
    lambda_scale: float = 1.0
    # Fitted values used to update the penalty loadings: "post" (Post-Lasso) or "lasso".
    loading_source: str = "post"

    def __post_init__(self):
        if self.J < 2:
            raise ValueError("J must be at least 2")
        if self.link not in LINKS:
            raise ValueError(f"unknown link {self.link!r}")
        if self.loading_source not in ("post", "lasso"):
            raise ValueError("loading_source must be 'post' or 'lasso'")
        if self.loading_rounds < 1:
            raise ValueError("loading_rounds must be at least 1")


@dataclass
class LassoResult:
    beta: np.ndarray
    n_iter: int
    kkt: float
    objective: float
    objective_trace: list = field(default_factory=list)


def penalty_loadings(B1: np.ndarray, z: np.ndarray, fitted) -> np.ndarray:
    """psi_j = sqrt(mean(b_j^2 (z - fitted)^2)); the intercept (column 0) gets 0."""
    r2 = np.square(z - fitted)
    psi = np.sqrt(np.square(B1).T @ r2 / B1.shape[0])
    psi = np.maximum(psi, LOADING_FLOOR)
    psi[0] = 0.0
    return psi


def _objective(link, eta, z, beta, w):
    return link.nll(eta, z) + float(np.sum(w * np.abs(beta)))


def lasso_dr_fit(
    B1: np.ndarray,
    z: np.ndarray,
    lam: float,
    loadings: np.ndarray,
    link: Link | str = "logistic",
    beta0: np.ndarray | None = None,
    max_iter: int = 1000,
    kkt_tol: float = 1e-7,
) -> LassoResult:
    """Weighted-l1 penalised binary-link regression of ``z`` on ``B1``.

    Minimises  mean NLL + (lam / n) sum_j psi_j |beta_j|  by proximal Newton:
    each outer iteration solves the local quadratic model on an active set
    with coordinate descent and takes a backtracking step on the exact
    objective, so the objective never increases. ``B1[:, 0]`` must be the
    intercept column (its loading is ignored and treated as 0).
    """
    link = LINKS[link] if isinstance(link, str) else link
    n, p = B1.shape
    z = np.asarray(z, dtype=float)
    w = (lam / n) * np.asarray(loadings, dtype=float)
    w = w.copy()
    w[0] = 0.0
    tol = max(kkt_tol * (lam / n), 1e-10)
    if beta0 is None:
        beta = np.zeros(p)
        zbar = min(max(z.mean(), 1e-6), 1 - 1e-6)
        beta[0] = link.index(zbar)
    else:
        beta = np.array(beta0, dtype=float)
    eta = B1 @ beta
    F = _objective(link, eta, z, beta, w)
    trace = [F]
    viol = np.inf
    for it in range(1, max_iter + 1):
        g_eta, h_eta = link.grad_weight(eta, z)
        grad = B1.T @ g_eta / n
        viol = kkt_violation(grad, beta, w)
        if viol <= tol:
            return LassoResult(beta, it - 1, viol, F, trace)
        active = (beta != 0.0) | (np.abs(grad) > w)
        active[0] = True
        A = np.flatnonzero(active)
        BA = B1[:, A]
        H = (BA * h_eta[:, None]).T @ BA / n
        bA = beta[A]
        c = grad[A] - H @ bA
        new, _, _ = cd_quadratic_l1(H, c, w[A], bA, max_sweeps=20000, tol=0.1 * tol)
        delta = new - bA
        if not np.any(delta):
            break
        descent = float(grad[A] @ delta + np.sum(w[A] * (np.abs(new) - np.abs(bA))))
        deta = BA @ delta
        t = 1.0
        for _ in range(40):
            trial = bA + t * delta
            eta_t = eta + t * deta
            beta_t = beta.copy()
            beta_t[A] = trial
            F_t = _objective(link, eta_t, z, beta_t, w)
            if F_t <= F + 1e-4 * t * descent or F_t <= F and t < 1e-6:
                break
            t *= 0.5
        else:
            break
        if F_t > F:
            break
        beta, eta, F = beta_t, eta_t, F_t
        trace.append(F)
    g_eta, _ = link.grad_weight(eta, z)
    viol = kkt_violation(B1.T @ g_eta / n, beta, w)
    if viol <= 10 * tol:
        return LassoResult(beta, max_iter, viol, F, trace)
    raise ConvergenceError(
        f"lasso distribution regression did not converge (KKT violation {viol:.3g}, "
        f"tolerance {tol:.3g}, objective {F:.10g})",
        context={"kkt": viol, "objective": F},
    )


def post_lasso_refit(B1: np.ndarray, z: np.ndarray, support, link: Link | str = "logistic",
                     start: np.ndarray | None = None, grad_tol: float = 1e-8, max_iter: int = 100):
    """Unpenalised MLE restricted to ``support``; zeros elsewhere.

    Returns ``(beta, separated)``. When the restricted MLE does not exist
    (separation) ``start`` restricted to the support is returned instead and
    ``separated`` is True.
    """
    link = LINKS[link] if isinstance(link, str) else link
    n, p = B1.shape
    S = np.asarray(sorted(support), dtype=int)
    beta = np.zeros(p)
    if S.size == 0:
        return beta, False
    BS = B1[:, S]
    b = np.zeros(S.size) if start is None else np.array(start, dtype=float)[S]
    eta = BS @ b
    f = link.nll(eta, z)
    ok = False
    for _ in range(max_iter):
        g_eta, h_eta = link.grad_weight(eta, z)
        grad = BS.T @ g_eta / n
        if np.max(np.abs(grad)) <= grad_tol:
            ok = True
            break
        H = (BS * h_eta[:, None]).T @ BS / n
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        dstep = BS @ step
        t = 1.0
        for _ in range(40):
            f_t = link.nll(eta - t * dstep, z)
            if f_t <= f - 1e-4 * t * float(grad @ step):
                break
            t *= 0.5
        else:
            break
        b = b - t * step
        eta = eta - t * dstep
        f = f_t
        if np.max(np.abs(eta)) > 35.0:
            break
    if not ok or not np.all(np.isfinite(b)):
        fallback = np.zeros(p)
        if start is not None:
            fallback[S] = np.asarray(start, dtype=float)[S]
        return fallback, True
    beta[S] = b
    return beta, False


@dataclass
class PointFit:
    y: float
    beta_tilde: np.ndarray
    beta_hat: np.ndarray
    loadings: np.ndarray
    n_iter: int
    kkt: float
    flags: tuple[str, ...] = ()

    @property
    def lasso_support(self):
        return np.flatnonzero(self.beta_tilde)

    @property
    def support(self):
        return np.flatnonzero(self.beta_hat)


def fit_point(B1, y_obs, y: float, lam: float, config: DistRegConfig, warm=None) -> PointFit:
    """Full Step-2 fit at one threshold: loadings, Lasso, post-Lasso."""
    link = LINKS[config.link]
    z = (y_obs <= y).astype(float)
    zbar = z.mean()
    p = B1.shape[1]
    if zbar in (0.0, 1.0):
        beta = np.zeros(p)
        beta[0] = DEGENERATE_INDEX if zbar == 1.0 else -DEGENERATE_INDEX
        return PointFit(float(y), beta, beta.copy(), np.zeros(p), 0, 0.0, ("degenerate",))
    psi = penalty_loadings(B1, z, zbar)
    res = None
    for r in range(config.loading_rounds):
        if r > 0:
            ref = beta_hat if config.loading_source == "post" else res.beta
            psi = penalty_loadings(B1, z, link.cdf(B1 @ ref))
        start = res.beta if res is not None else warm
        res = lasso_dr_fit(B1, z, lam, psi, link, beta0=start, max_iter=config.max_iter,
                           kkt_tol=config.kkt_tol)
        beta_hat, separated = post_lasso_refit(B1, z, np.flatnonzero(res.beta), link, start=res.beta)
    flags = ("separation",) if separated else ()
    return PointFit(float(y), res.beta, beta_hat, psi, res.n_iter, res.kkt, flags)


def _with_intercept(M):
    return np.column_stack([np.ones(M.shape[0]), M])


def _without_intercept(M):
    return np.column_stack([np.zeros(M.shape[0]), M])


@dataclass
class DRGridFit:
    """Fitted distribution regression on an increasing set of thresholds.

    ``coef`` has one row per threshold; column 0 is the intercept and columns
    1.. follow the basis term order. The Riemann functionals use the
    right-endpoint rule over the knots: ``IF = sum_j F(y_j) (y_j - y_{j-1})``
    for j = 1..K, which is the equally spaced rule when the knots are evenly
    spaced.
    """

    y_grid: np.ndarray
    coef: np.ndarray
    basis: Basis
    link: str
    lambda_beta: float
    points: list[PointFit] = field(repr=False, default_factory=list)

    @property
    def supports(self):
        return [pt.support for pt in self.points]

    @property
    def loadings(self):
        return [pt.loadings for pt in self.points]

    @property
    def flags(self):
        out = {}
        for pt in self.points:
            for f in pt.flags:
                out[f] = out.get(f, 0) + 1
        return out

    @property
    def widths(self):
        return np.diff(self.y_grid)

    def _eval(self, d, x, cols=None):
        coef = self.coef if cols is None else self.coef[cols]
        B1 = _with_intercept(self.basis.design(d, x))
        dB1 = _without_intercept(self.basis.ddesign(d, x))
        eta = B1 @ coef.T
        deta = dB1 @ coef.T
        return eta, deta

    def cdf(self, d, x, cols=None):
        """Matrix of F_hat(y_j | d_i, x_i)."""
        eta, _ = self._eval(d, x, cols)
        return LINKS[self.link].cdf(eta)

    def dcdf(self, d, x, cols=None):
        """Matrix of dF_hat(y_j | d_i, x_i) / dd."""
        eta, deta = self._eval(d, x, cols)
        return LINKS[self.link].pdf(eta) * deta

    def evaluate(self, d, x):
        """Both matrices at once (one basis expansion)."""
        eta, deta = self._eval(d, x)
        link = LINKS[self.link]
        return link.cdf(eta), link.pdf(eta) * deta

    def integrals(self, F, DF, lo: int = 0, hi: int | None = None):
        """Right-endpoint sums of F and DF over knots ``lo..hi``."""
        hi = len(self.y_grid) - 1 if hi is None else hi
        w = self.widths[lo:hi]
        return F[:, lo + 1 : hi + 1] @ w, DF[:, lo + 1 : hi + 1] @ w

    def to_dict(self):
        names = ["(intercept)"] + self.basis.names()
        return {
            "link": self.link,
            "lambda": self.lambda_beta,
            "y_grid": self.y_grid.tolist(),
            "points": [
                {
                    "y": pt.y,
                    "support": [int(k) for k in pt.support],
                    "terms": [names[k] for k in pt.support],
                    "coef": [float(pt.beta_hat[k]) for k in pt.support],
                    "lasso_support": [int(k) for k in pt.lasso_support],
                    "loadings": [float(v) for v in pt.loadings],
                    "flags": list(pt.flags),
                }
                for pt in self.points
            ],
        }


def fit_knots(data, basis: Basis, knots, config: DistRegConfig | None = None,
              B1: np.ndarray | None = None) -> DRGridFit:
    """Fit the distribution regression at every threshold in ``knots``."""
    config = config or DistRegConfig()
    knots = np.asarray(knots, dtype=float)
    if B1 is None:
        B1 = _with_intercept(basis.design(data.d, data.x))
    lam = config.lambda_scale * penalty_level_beta(data.n, basis.dim)
    points = []
    warm = None
    for y in knots:
        pt = fit_point(B1, data.y, float(y), lam, config, warm=warm)
        if "degenerate" not in pt.flags:
            warm = pt.beta_tilde
        points.append(pt)
    coef = np.vstack([pt.beta_hat for pt in points])
    return DRGridFit(knots, coef, basis, config.link, lam, points)


def quantile_grid(q1: float, q2: float, J: int) -> np.ndarray:
    """y_j = q1 + j (q2 - q1) / J for j = 0..J, with exact endpoints."""
    g = q1 + np.arange(J + 1) * ((q2 - q1) / J)
    g[-1] = q2
    return g


def fit_grid(data, tau1: float, tau2: float, basis: Basis, config: DistRegConfig | None = None,
             B1=None) -> DRGridFit:
    from .quantile import estimate_quantile

    config = config or DistRegConfig()
    q1 = estimate_quantile(data.y, tau1).q_hat
    q2 = estimate_quantile(data.y, tau2).q_hat
    return fit_knots(data, basis, quantile_grid(q1, q2, config.J), config, B1=B1)


def F_hat(fit: DRGridFit, d, x):
    return fit.cdf(d, x)


def DF_hat(fit: DRGridFit, d, x):
    return fit.dcdf(d, x)


def IF_hat(fit: DRGridFit, d, x):
    F, DF = fit.evaluate(d, x)
    return fit.integrals(F, DF)[0]


def IDF_hat(fit: DRGridFit, d, x):
    F, DF = fit.evaluate(d, x)
    return fit.integrals(F, DF)[1]
