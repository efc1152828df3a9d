"""Orthogonal score, debiased estimator, naive plug-in and the distributional
perturbation plug-in for outcome-conditioned partial policy effects.

For an index u = (tau1, tau2, sigma) the score of one observation is

    psi = [ -vartheta * IDF
            - L * (IF - int_{Q1}^{Q2} 1{Y <= y} dy)
            - c1 (1{Y <= Q1} - tau1)
            + c2 (1{Y <= Q2} - tau2) ] / (tau2 - tau1)  -  theta

with c_t = mean(vartheta * DF(Q_t)) / f_Y(Q_t). The estimate is the value of
theta that sets the sample mean of psi to zero.

Several indices are estimated from one set of distribution-regression fits: the
thresholds are the estimated quantiles at every tau involved plus evenly spaced
points inside each segment between consecutive quantiles, dense enough that
every requested range has at least J steps.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from .basis import Basis, BasisSpec
from .data import Dataset, IndexU
from .distreg import DistRegConfig, DRGridFit, fit_knots
from .errors import ConfigError, NumericalError
from .interventions import Intervention
from .quantile import BandwidthConfig, DensityFit, QuantileFit, estimate_density, estimate_quantile, kde
from .riesz import RieszConfig, RieszFit, fit_riesz, riesz_design

DENSITY_FLOOR = 1e-12
DIST_DENSITY_FLOOR = 1e-6


@dataclass(frozen=True)
class EstimatorConfig:
    basis: BasisSpec = field(default_factory=BasisSpec)
    # Basis of the Riesz representer; None means the same as ``basis``.
    riesz_basis: BasisSpec | None = None
    distreg: DistRegConfig = field(default_factory=DistRegConfig)
    bandwidth: BandwidthConfig = field(default_factory=BandwidthConfig)
    riesz: RieszConfig = field(default_factory=RieszConfig)
    # Minimum thresholds per segment when several quantile ranges share fits.
    min_segment_points: int = 5
    level: float = 0.95

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# Closed-form pieces


def indicator_integral(y, q1: float, q2: float):
    """int_{q1}^{q2} 1{y <= t} dt = q2 - max(y, q1) if y <= q2, else 0."""
    y = np.asarray(y, dtype=float)
    return np.where(y <= q2, q2 - np.maximum(y, q1), 0.0)


def score_terms(vt, IDF, IF, L, y, q1, q2, c1, c2, tau1, tau2) -> dict:
    """The four additive pieces of the score (theta-free), already divided by tau2 - tau1."""
    width = tau2 - tau1
    y = np.asarray(y, dtype=float)
    return {
        "plugin": -np.asarray(vt) * IDF / width,
        "riesz": -np.asarray(L) * (IF - indicator_integral(y, q1, q2)) / width,
        "quantile1": -c1 * ((y <= q1) - tau1) / width,
        "quantile2": c2 * ((y <= q2) - tau2) / width,
    }


def score_signal(vt, IDF, IF, L, y, q1, q2, c1, c2, tau1, tau2):
    """Score evaluated at theta = 0; its sample mean is the estimate."""
    t = score_terms(vt, IDF, IF, L, y, q1, q2, c1, c2, tau1, tau2)
    return t["plugin"] + t["riesz"] + t["quantile1"] + t["quantile2"]


# ---------------------------------------------------------------------------
# Results


@dataclass
class OcppeResult:
    theta_hat: float
    scores: np.ndarray = field(repr=False)
    se_analytic: float
    ci95: tuple[float, float]
    index: IndexU
    estimator: str = "dml"
    diagnostics: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    @property
    def n(self):
        return self.scores.shape[0]

    @property
    def signals(self):
        """Per-observation score at theta = 0 (mean equals ``theta_hat``)."""
        return self.scores + self.theta_hat

    def to_dict(self):
        return {
            "tau1": self.index.tau1,
            "tau2": self.index.tau2,
            "sigma": list(self.index.sigma),
            "estimator": self.estimator,
            "theta_hat": self.theta_hat,
            "se_analytic": self.se_analytic,
            "ci95": list(self.ci95),
            "n": self.n,
            "flags": list(self.flags),
            "diagnostics": self.diagnostics,
        }


def _result(signal, u, estimator, level, diagnostics, flags) -> OcppeResult:
    signal = np.asarray(signal, dtype=float)
    theta = float(np.mean(signal))
    scores = signal - theta
    se = float(np.std(scores) / math.sqrt(scores.shape[0]))
    z = float(norm.ppf(0.5 + level / 2))
    return OcppeResult(theta, scores, se, (theta - z * se, theta + z * se), u, estimator,
                       diagnostics, flags)


# ---------------------------------------------------------------------------
# Nuisances


@dataclass
class NuisanceFit:
    """Every fitted nuisance for one index u on one dataset."""

    u: IndexU
    q1: QuantileFit
    q2: QuantileFit
    f1: DensityFit
    f2: DensityFit
    dr: DRGridFit
    lo: int
    hi: int
    riesz: RieszFit
    intervention: Intervention
    gamma_terms: tuple[float, float]

    @property
    def c1(self):
        return self.gamma_terms[0] / self.f1.f_hat

    @property
    def c2(self):
        return self.gamma_terms[1] / self.f2.f_hat

    def integrals(self, d, x):
        F, DF = self.dr.evaluate(d, x)
        return self.dr.integrals(F, DF, self.lo, self.hi)


def orthogonal_score(y, d, x, theta: float, eta: NuisanceFit):
    """Score of each observation (arrays or scalars) at ``theta`` given fitted nuisances."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    d = np.atleast_1d(np.asarray(d, dtype=float))
    x = np.asarray(x, dtype=float).reshape(d.shape[0], -1)
    IF, IDF = eta.integrals(d, x)
    vt = eta.intervention.vartheta(d, x)
    L = eta.riesz(d, x)
    u = eta.u
    s = score_signal(vt, IDF, IF, L, y, eta.q1.q_hat, eta.q2.q_hat, eta.c1, eta.c2, u.tau1, u.tau2)
    return s - theta


def segment_knots(q: Sequence[float], ranges: Sequence[tuple[int, int]], J: int,
                  min_points: int) -> tuple[np.ndarray, list[int]]:
    """Thresholds covering sorted quantiles ``q`` and the knot position of each q.

    ``ranges`` are (lo, hi) positions into ``q``. Segment k (between q[k] and
    q[k+1]) gets the largest ceil(J * width_k / width_r) over requested ranges r
    that contain it, and at least ``min_points`` steps, so every range has at
    least J steps and a single range gets exactly J equal steps.
    """
    q = np.asarray(q, dtype=float)
    knots = [q[0]]
    pos = [0]
    for k in range(len(q) - 1):
        w = q[k + 1] - q[k]
        if w <= 0:
            pos.append(len(knots) - 1)
            continue
        m = min_points
        for lo, hi in ranges:
            if lo <= k < hi:
                m = max(m, math.ceil(J * w / (q[hi] - q[lo]) - 1e-9))
        seg = q[k] + np.arange(1, m + 1) * (w / m)
        seg[-1] = q[k + 1]
        knots.extend(seg.tolist())
        pos.append(len(knots) - 1)
    return np.asarray(knots), pos


class ProcessFit:
    """Distribution-regression, quantile and density fits shared by many indices.

    Riesz fits are cached per intervention member (sigma).
    """

    def __init__(self, data: Dataset, ranges, config: EstimatorConfig | None = None):
        self.data = data
        self.config = config = config or EstimatorConfig()
        ranges = [(float(a), float(b)) for a, b in ranges]
        if not ranges:
            raise ValueError("need at least one quantile range")
        taus = sorted(set(t for rg in ranges for t in rg))
        self.taus = taus
        self.ranges = ranges
        self.quantiles = {t: estimate_quantile(data.y, t) for t in taus}
        qs = [self.quantiles[t].q_hat for t in taus]
        h = config.bandwidth.bandwidth(data.y)
        self.densities = {t: estimate_density(data.y, self.quantiles[t].q_hat, config.bandwidth, h)
                          for t in taus}
        at = {t: k for k, t in enumerate(taus)}
        knots, pos = segment_knots(qs, [(at[a], at[b]) for a, b in ranges], config.distreg.J,
                                   config.min_segment_points)
        self.position = dict(zip(taus, pos))
        self.basis = config.basis.fit(data.d, data.x)
        rb = config.riesz_basis
        self.riesz_basis = self.basis if rb is None or rb == config.basis else rb.fit(data.d, data.x)
        self.dr = fit_knots(data, self.basis, knots, config.distreg)
        self.F, self.DF = self.dr.evaluate(data.d, data.x)
        self._riesz: dict = {}
        self._riesz_design = None

    def riesz_fit(self, intervention: Intervention) -> RieszFit:
        key = (type(intervention).__name__, repr(intervention))
        if key not in self._riesz:
            if self._riesz_design is None:
                self._riesz_design = riesz_design(self.riesz_basis, self.data.d, self.data.x,
                                                  self.config.riesz.intercept)
            warm = next(reversed(self._riesz.values())).gamma if self._riesz else None
            self._riesz[key] = fit_riesz(self.data, self.riesz_basis, intervention, self.config.riesz,
                                         design=self._riesz_design, gamma0=warm)
        return self._riesz[key]

    def nuisance(self, u: IndexU, intervention: Intervention) -> NuisanceFit:
        lo, hi = self.position[u.tau1], self.position[u.tau2]
        f1, f2 = self.densities[u.tau1], self.densities[u.tau2]
        for f in (f1, f2):
            if not f.f_hat > DENSITY_FLOOR:
                raise NumericalError(
                    f"outcome density estimate at {f.at:.6g} is degenerate ({f.f_hat:.3g})",
                    context={"module": "quantile", "at": f.at},
                )
        vt = intervention.vartheta(self.data.d, self.data.x)
        g = (float(np.mean(vt * self.DF[:, lo])), float(np.mean(vt * self.DF[:, hi])))
        return NuisanceFit(u, self.quantiles[u.tau1], self.quantiles[u.tau2], f1, f2, self.dr, lo, hi,
                           self.riesz_fit(intervention), intervention, g)

    def _pieces(self, u: IndexU, intervention: Intervention):
        lo, hi = self.position[u.tau1], self.position[u.tau2]
        IF, IDF = self.dr.integrals(self.F, self.DF, lo, hi)
        vt = intervention.vartheta(self.data.d, self.data.x)
        return lo, hi, IF, IDF, vt

    def _diagnostics(self, lo, hi, riesz=None):
        pts = self.dr.points[lo : hi + 1]
        sizes = [len(p.support) for p in pts]
        out = {
            "n_thresholds": hi - lo,
            "lambda_beta": self.dr.lambda_beta,
            "dr_support_mean": float(np.mean(sizes)),
            "dr_support_max": int(max(sizes)),
            "dr_iterations_max": int(max(p.n_iter for p in pts)),
        }
        if riesz is not None:
            out.update(lambda_gamma=riesz.lambda_gamma, riesz_support=int(riesz.support.size),
                       riesz_sweeps=riesz.sweeps)
        return out

    def _flags(self, lo, hi):
        counts: dict = {}
        for p in self.dr.points[lo : hi + 1]:
            for f in p.flags:
                counts[f] = counts.get(f, 0) + 1
        return [f"{k}:{v}" for k, v in sorted(counts.items())]

    def terms(self, u: IndexU, intervention: Intervention) -> dict:
        eta = self.nuisance(u, intervention)
        _, _, IF, IDF, vt = self._pieces(u, intervention)
        L = eta.riesz(self.data.d, self.data.x)
        return score_terms(vt, IDF, IF, L, self.data.y, eta.q1.q_hat, eta.q2.q_hat, eta.c1, eta.c2,
                           u.tau1, u.tau2)

    def dml(self, u: IndexU, intervention: Intervention) -> OcppeResult:
        t = self.terms(u, intervention)
        signal = t["plugin"] + t["riesz"] + t["quantile1"] + t["quantile2"]
        lo, hi = self.position[u.tau1], self.position[u.tau2]
        return _result(signal, u, "dml", self.config.level,
                       self._diagnostics(lo, hi, self.riesz_fit(intervention)), self._flags(lo, hi))

    def naive(self, u: IndexU, intervention: Intervention) -> OcppeResult:
        lo, hi, _, IDF, vt = self._pieces(u, intervention)
        signal = -vt * IDF / u.width
        return _result(signal, u, "naive", self.config.level, self._diagnostics(lo, hi),
                       self._flags(lo, hi))

    def dist_plugin(self, u: IndexU, vt: np.ndarray, trimmed: int) -> OcppeResult:
        lo, hi = self.position[u.tau1], self.position[u.tau2]
        _, IDF = self.dr.integrals(self.F, self.DF, lo, hi)
        keep = np.isfinite(vt)
        signal = -vt[keep] * IDF[keep] / u.width
        diag = self._diagnostics(lo, hi)
        diag["trimmed"] = int(trimmed)
        return _result(signal, u, "dist_plugin", self.config.level, diag,
                       ["plug-in only, not debiased"] + self._flags(lo, hi))


def _ranges(indices: Sequence[IndexU]):
    return sorted(set((u.tau1, u.tau2) for u in indices))


def _member(intervention: Intervention, u: IndexU) -> Intervention:
    return intervention.at(u.sigma) if u.sigma else intervention


def estimate_many(data: Dataset, indices: Sequence[IndexU], intervention: Intervention,
                  config: EstimatorConfig | None = None, estimator: str = "dml",
                  process: ProcessFit | None = None) -> list[OcppeResult]:
    """Estimates at several indices from one shared set of nuisance fits."""
    indices = list(indices)
    process = process or ProcessFit(data, _ranges(indices), config)
    out = []
    for u in indices:
        member = _member(intervention, u)
        member.check_monotone(data.d, data.x if member.needs_x else None)
        if estimator == "dml":
            out.append(process.dml(u, member))
        elif estimator == "naive":
            out.append(process.naive(u, member))
        else:
            raise ValueError(f"unknown estimator {estimator!r}")
    return out


def estimate_ocppe(data: Dataset, u: IndexU, intervention: Intervention,
                   config: EstimatorConfig | None = None) -> OcppeResult:
    """Debiased estimate at one index."""
    return estimate_many(data, [u], intervention, config, "dml")[0]


def naive_estimate(data: Dataset, u: IndexU, intervention: Intervention,
                   config: EstimatorConfig | None = None) -> OcppeResult:
    """Plug-in estimate -mean(vartheta * IDF) / (tau2 - tau1) without corrections."""
    return estimate_many(data, [u], intervention, config, "naive")[0]


def fit_nuisances(data: Dataset, u: IndexU, intervention: Intervention,
                  config: EstimatorConfig | None = None) -> NuisanceFit:
    return ProcessFit(data, [(u.tau1, u.tau2)], config).nuisance(u, _member(intervention, u))


# ---------------------------------------------------------------------------
# Perturbation of the marginal distribution of D towards a target CDF


def empirical_cdf(d):
    """F_hat_D at the sample points: rank / (n + 1), ties sharing the top rank."""
    d = np.asarray(d, dtype=float)
    s = np.sort(d)
    return np.searchsorted(s, d, side="right") / (d.shape[0] + 1.0)


def validate_cdf(G0: Callable, d, points: int = 2001, max_jump: float = 0.5) -> None:
    """Reject targets that are not a proper continuous-enough CDF on the data range."""
    d = np.asarray(d, dtype=float)
    lo, hi = float(d.min()), float(d.max())
    span = max(hi - lo, 1.0)
    grid = np.linspace(lo - 10 * span, hi + 10 * span, points)
    grid = np.union1d(grid, np.linspace(lo - 0.05 * span, hi + 0.05 * span, points))
    v = np.asarray(G0(grid), dtype=float)
    if v.shape != grid.shape or not np.all(np.isfinite(v)):
        raise ConfigError("target CDF must return finite values")
    if np.any(v < -1e-12) or np.any(v > 1 + 1e-12):
        raise ConfigError("target CDF values must lie in [0, 1]")
    if np.any(np.diff(v) < -1e-12):
        raise ConfigError("target CDF must be nondecreasing")
    if v[0] > 0.01 or v[-1] < 0.99:
        raise ConfigError("target CDF must approach 0 and 1 in the tails")
    if np.max(np.diff(v)) >= max_jump:
        raise ConfigError("target CDF has a point mass (jump >= 0.5)")


def target_cdf_from_config(cfg, data=None) -> Callable:
    """Target CDF from a config mapping.

    ``{kind: normal, mean, sd}``; ``{kind: shift, shift}`` (the empirical CDF of D
    moved right by ``shift``); ``{kind: empirical}`` (no-op target).
    """
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ConfigError("intervention.target must be a mapping with a kind")
    cfg = dict(cfg)
    kind = cfg.pop("kind")
    if kind == "normal":
        mean, sd = float(cfg.pop("mean", 0.0)), float(cfg.pop("sd", 1.0))
        if sd <= 0:
            raise ConfigError("intervention.target.sd must be positive")
        out = lambda t: norm.cdf((np.asarray(t, dtype=float) - mean) / sd)  # noqa: E731
    elif kind in ("shift", "empirical"):
        if data is None:
            raise ConfigError(f"target kind {kind} needs data")
        shift = float(cfg.pop("shift", 0.0)) if kind == "shift" else 0.0
        s = np.sort(np.asarray(data.d, dtype=float))
        out = lambda t: np.searchsorted(s, np.asarray(t, dtype=float) - shift,  # noqa: E731
                                        side="right") / (s.shape[0] + 1.0)
    else:
        raise ConfigError(f"intervention.target.kind: unknown kind {kind!r}")
    if cfg:
        raise ConfigError(f"intervention.target: unknown keys {sorted(cfg)}")
    return out


def dist_vartheta(d, G0: Callable, bandwidth: BandwidthConfig | None = None):
    """(F_hat_D(d_i) - G0(d_i)) / f_hat_D(d_i), NaN where f_hat_D is below the floor."""
    d = np.asarray(d, dtype=float)
    f = kde(d, d, bandwidth)
    vt = (empirical_cdf(d) - np.asarray(G0(d), dtype=float)) / np.maximum(f, DIST_DENSITY_FLOOR)
    vt[f < DIST_DENSITY_FLOOR] = np.nan
    return vt


def dist_perturbation_estimate(data: Dataset, u: IndexU, G0: Callable,
                               config: EstimatorConfig | None = None,
                               process: ProcessFit | None = None) -> OcppeResult:
    """Plug-in effect of moving the distribution of D towards the target CDF ``G0``."""
    config = config or EstimatorConfig()
    validate_cdf(G0, data.d)
    vt = dist_vartheta(data.d, G0, config.bandwidth)
    trimmed = int(np.sum(~np.isfinite(vt)))
    process = process or ProcessFit(data, [(u.tau1, u.tau2)], config)
    return process.dist_plugin(u, vt, trimmed)
