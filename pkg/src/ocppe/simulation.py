"""Monte Carlo designs, closed-form oracle nuisances and the replication study.

Outcome equation (Gaussian controls with Toeplitz covariance 0.5^|j-k|):

    Y = a D + X'(c_y delta0) + b D X1 + U,    D = X'(c_d delta0) + V,

with U, V ~ N(0, 1) and delta0_j = 1/j^2. The default (a, b) = (1, 1) is the
benchmark heterogeneous design. Because every conditional law is Gaussian the
nuisances have closed forms, used both for the true effect and for exact
score evaluations.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.optimize
from scipy.special import ndtr
from scipy.stats import norm

from .data import Dataset, IndexU
from .errors import ConfigError, OcppeError
from .interventions import Intervention, simulation_intervention
from .score import EstimatorConfig, ProcessFit, score_signal

DESIGNS = ("benchmark", "homogeneous", "null", "policy")


@dataclass(frozen=True)
class DgpConfig:
    n: int = 500
    p_x: int = 30
    R_d2: float = 0.2
    R_y2: float = 0.2
    seed: int = 0
    design: str = "benchmark"
    rho: float = 0.5

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ConfigError(f"unknown design {self.design!r}; choose from {DESIGNS}")
        if not (0 < self.R_d2 < 1 and 0 < self.R_y2 < 1):
            raise ConfigError("R_d2 and R_y2 must lie in (0, 1)")
        if self.n < 2 or self.p_x < 1:
            raise ConfigError("need n >= 2 and p_x >= 1")
        if self.design == "policy" and self.p_x < 2:
            raise ConfigError("the policy design needs p_x >= 2")

    # Structural pieces -----------------------------------------------------
    @property
    def sigma_x(self) -> np.ndarray:
        k = np.arange(self.p_x)
        return self.rho ** np.abs(np.subtract.outer(k, k))

    @property
    def delta0(self) -> np.ndarray:
        return 1.0 / np.arange(1, self.p_x + 1) ** 2

    @property
    def _quad(self) -> float:
        dl = self.delta0
        return float(dl @ self.sigma_x @ dl)

    @property
    def c_d(self) -> float:
        return math.sqrt((math.pi**2 / 3) * self.R_d2 / ((1 - self.R_d2) * self._quad))

    @property
    def c_y(self) -> float:
        return math.sqrt(self.R_y2 / ((1 - self.R_y2) * self._quad))

    @property
    def slope(self) -> float:
        """Coefficient a on D."""
        return {"benchmark": 1.0, "homogeneous": 1.0, "null": 0.0, "policy": -1.0}[self.design]

    @property
    def interaction(self) -> float:
        """Coefficient b on D * X1."""
        return {"benchmark": 1.0, "homogeneous": 0.0, "null": 0.0, "policy": 2.0}[self.design]

    @property
    def beta_y(self) -> np.ndarray:
        if self.design == "null":
            return np.zeros(self.p_x)
        return self.c_y * self.delta0

    @property
    def beta_d(self) -> np.ndarray:
        return self.c_d * self.delta0

    def key(self) -> dict:
        d = asdict(self)
        d.pop("seed")
        d.pop("n")
        return d


def draw_controls(cfg: DgpConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    """X ~ N(0, Sigma) via the Cholesky factor; the policy design replaces X1, X2
    with independent fair binary draws."""
    chol = np.linalg.cholesky(cfg.sigma_x)
    x = rng.standard_normal((n, cfg.p_x)) @ chol.T
    if cfg.design == "policy":
        x[:, :2] = rng.integers(0, 2, size=(n, 2)).astype(float)
    return x


def _draw(cfg: DgpConfig, rng: np.random.Generator, n: int):
    x = draw_controls(cfg, rng, n)
    v = rng.standard_normal(n)
    u = rng.standard_normal(n)
    d = x @ cfg.beta_d + v
    y = outcome_mean(cfg, d, x) + u
    return y, d, x


def outcome_mean(cfg: DgpConfig, d, x):
    """m(d, x) = E[Y | D = d, X = x]."""
    x = np.asarray(x, dtype=float)
    return cfg.slope * d + x @ cfg.beta_y + cfg.interaction * d * x[..., 0]


def dgp_sample(cfg: DgpConfig, rng: np.random.Generator | None = None) -> Dataset:
    """One sample of size ``cfg.n``; deterministic given ``cfg.seed`` when ``rng`` is None."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    y, d, x = _draw(cfg, rng, cfg.n)
    return Dataset(y, d, x)


def replication_rng(master_seed: int, r: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(r)]))


# ---------------------------------------------------------------------------
# Oracle nuisances


def _int_cdf(t):
    """Antiderivative of Phi: t Phi(t) + phi(t)."""
    return t * ndtr(t) + norm.pdf(t)


@dataclass
class OracleNuisances:
    """True nuisances for one index under a design, from closed forms plus a
    large Monte Carlo sample of (D, X) for the unconditional quantities."""

    cfg: DgpConfig
    intervention: Intervention
    tau1: float
    tau2: float
    q1: float
    q2: float
    f1: float
    f2: float
    c1: float
    c2: float
    theta: float
    theta_mcse: float

    # F_Y(y | d, x) and relatives --------------------------------------------
    def F(self, y, d, x):
        return ndtr(np.asarray(y) - outcome_mean(self.cfg, d, x))

    def DF(self, y, d, x):
        m = outcome_mean(self.cfg, d, x)
        return -(self.cfg.slope + self.cfg.interaction * np.asarray(x)[..., 0]) * norm.pdf(np.asarray(y) - m)

    def IF(self, d, x):
        m = outcome_mean(self.cfg, d, x)
        return _int_cdf(self.q2 - m) - _int_cdf(self.q1 - m)

    def IDF(self, d, x):
        m = outcome_mean(self.cfg, d, x)
        dm = self.cfg.slope + self.cfg.interaction * np.asarray(x)[..., 0]
        return -dm * (ndtr(self.q2 - m) - ndtr(self.q1 - m))

    def L(self, d, x):
        """vartheta'(d) - vartheta(d) (d - E[D | X]), valid as D | X is N(x'beta_d, 1)."""
        x = np.asarray(x, dtype=float)
        xv = x if self.intervention.needs_x else None
        vt = self.intervention.vartheta(d, xv)
        return self.intervention.vartheta_prime(d, xv) - vt * (d - x @ self.cfg.beta_d)

    def signal(self, y, d, x, IF=None, IDF=None, L=None, c1=None, c2=None, q1=None, q2=None):
        """Score at theta = 0 with any piece optionally replaced."""
        x = np.asarray(x, dtype=float)
        vt = self.intervention.vartheta(d, x if self.intervention.needs_x else None)
        return score_signal(
            vt,
            self.IDF(d, x) if IDF is None else IDF,
            self.IF(d, x) if IF is None else IF,
            self.L(d, x) if L is None else L,
            y,
            self.q1 if q1 is None else q1,
            self.q2 if q2 is None else q2,
            self.c1 if c1 is None else c1,
            self.c2 if c2 is None else c2,
            self.tau1,
            self.tau2,
        )


def _mega_sample(cfg: DgpConfig, mc_size: int, seed: int, chunk: int = 200_000):
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7919]))
    for s in range(0, mc_size, chunk):
        m = min(chunk, mc_size - s)
        x = draw_controls(cfg, rng, m)
        d = x @ cfg.beta_d + rng.standard_normal(m)
        yield d, x


def oracle_nuisances(cfg: DgpConfig, intervention: Intervention, tau1: float, tau2: float,
                     mc_size: int = 1_000_000, seed: int = 20240917) -> OracleNuisances:
    """True quantiles, densities, correction constants and theta for one range.

    The unconditional CDF of Y is F_Y(q) = E[Phi(q - m(D, X))], evaluated on a
    sample of (D, X); conditioning on (D, X) removes the outcome noise from the
    Monte Carlo error.
    """
    chunks = list(_mega_sample(cfg, mc_size, seed))
    ms = [outcome_mean(cfg, d, x) for d, x in chunks]
    mall = np.concatenate(ms)

    def Fy(q):
        return float(np.mean(ndtr(q - mall)))

    sd = float(np.std(mall)) + 1.0
    lo, hi = float(mall.min()) - 10, float(mall.max()) + 10
    q1 = scipy.optimize.brentq(lambda q: Fy(q) - tau1, lo, hi, xtol=1e-12 * sd)
    q2 = scipy.optimize.brentq(lambda q: Fy(q) - tau2, lo, hi, xtol=1e-12 * sd)
    f1 = float(np.mean(norm.pdf(q1 - mall)))
    f2 = float(np.mean(norm.pdf(q2 - mall)))
    s_c1 = s_c2 = 0.0
    terms = []
    for (d, x), m in zip(chunks, ms):
        xv = x if intervention.needs_x else None
        vt = intervention.vartheta(d, xv)
        dm = cfg.slope + cfg.interaction * x[:, 0]
        s_c1 += float(np.sum(vt * -dm * norm.pdf(q1 - m)))
        s_c2 += float(np.sum(vt * -dm * norm.pdf(q2 - m)))
        terms.append(vt * dm * (ndtr(q2 - m) - ndtr(q1 - m)) / (tau2 - tau1))
    t = np.concatenate(terms)
    c1 = s_c1 / mc_size / f1
    c2 = s_c2 / mc_size / f2
    return OracleNuisances(cfg, intervention, tau1, tau2, q1, q2, f1, f2, c1, c2,
                           float(t.mean()), float(t.std() / math.sqrt(t.shape[0])))


def true_theta(u: IndexU | tuple, cfg: DgpConfig, intervention: Intervention | None = None,
               mc_size: int = 1_000_000, seed: int = 20240917) -> tuple[float, float]:
    """(theta, Monte Carlo standard error) for the range (tau1, tau2)."""
    if mc_size < 1_000_000:
        raise ValueError("true_theta needs mc_size >= 10^6")
    t1, t2 = (u.tau1, u.tau2) if isinstance(u, IndexU) else u
    iv = intervention or simulation_intervention()
    o = oracle_nuisances(cfg, iv, t1, t2, mc_size, seed)
    return o.theta, o.theta_mcse


# ---------------------------------------------------------------------------
# Replication study


@dataclass(frozen=True)
class StudyConfig:
    designs: tuple[DgpConfig, ...] = (DgpConfig(),)
    ranges: tuple[tuple[float, float], ...] = ((0.1, 0.2), (0.2, 0.3), (0.3, 0.4))
    reps: int = 100
    estimators: tuple[str, ...] = ("naive", "dml")
    master_seed: int = 0
    mc_size: int = 1_000_000
    oracle_seed: int = 20240917
    bias: str = "ratio_of_mean"  # or "mean_of_ratio"
    n_jobs: int = 1


@dataclass
class StudyReport:
    cells: list = field(default_factory=list)
    replications: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        if not self.cells:
            return ""
        cols = list(self.cells[0])
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for c in self.cells:
            w.writerow([_fmt(c[k]) for k in cols])
        return buf.getvalue()

    def replications_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["design", "r", "tau1", "tau2", "estimator", "theta_hat", "se", "failed"])
        for row in self.replications:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def table(self) -> str:
        """Text table: one block per design, columns Bias Ratio, Std, MSE, Cvg and Cvg(Std)."""
        lines = []
        designs = []
        for c in self.cells:
            if c["design"] not in designs:
                designs.append(c["design"])
        for dz in designs:
            rows = [c for c in self.cells if c["design"] == dz]
            head = rows[0]
            lines.append(f"Design {dz}: R_d2={head['R_d2']:g} R_y2={head['R_y2']:g} n={head['n']}")
            lines.append(f"{'Quantile':<10}{'Bias Ratio':>18}{'Std':>18}{'MSE':>18}{'Cvg':>18}{'Cvg(Std)':>18}")
            lines.append(f"{'':<10}" + "".join(f"{'Naive':>9}{'DML':>9}" for _ in range(5)))
            by_range: dict = {}
            for c in rows:
                by_range.setdefault((c["tau1"], c["tau2"]), {})[c["estimator"]] = c
            for (t1, t2), est in by_range.items():
                cells = []
                for key in ("bias_ratio", "std", "mse", "coverage", "coverage_std"):
                    for e in ("naive", "dml"):
                        v = est.get(e, {}).get(key, float("nan"))
                        cells.append(f"{v:>9.3f}")
                lines.append(f"{t1:g}-{t2:g}".ljust(10) + "".join(cells))
            lines.append("")
        return "\n".join(lines)


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    return v


def _cache_key(cfg: DgpConfig, iv: Intervention, t1, t2, mc_size, seed) -> str:
    blob = json.dumps([cfg.key(), repr(iv), t1, t2, mc_size, seed], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def cached_true_theta(cfg, iv, t1, t2, mc_size, seed, cache_dir=None):
    if cache_dir is not None:
        path = Path(cache_dir) / f"theta_{_cache_key(cfg, iv, t1, t2, mc_size, seed)}.json"
        if path.exists():
            v = json.loads(path.read_text())
            return v["theta"], v["mcse"]
    o = oracle_nuisances(cfg, iv, t1, t2, mc_size, seed)
    if cache_dir is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({"theta": o.theta, "mcse": o.theta_mcse}))
    return o.theta, o.theta_mcse


def run_replication(cfg: DgpConfig, r: int, master_seed: int, ranges, intervention: Intervention,
                    estimators=("naive", "dml"), config: EstimatorConfig | None = None):
    """Estimates for one replication: {(tau1, tau2, estimator): (theta_hat, se) or None}."""
    data = dgp_sample(cfg, replication_rng(master_seed, r))
    out = {}
    try:
        proc = ProcessFit(data, ranges, config)
    except OcppeError:
        return {(t1, t2, e): None for t1, t2 in ranges for e in estimators}
    for t1, t2 in ranges:
        u = IndexU(t1, t2)
        for e in estimators:
            try:
                res = proc.dml(u, intervention) if e == "dml" else proc.naive(u, intervention)
                out[(t1, t2, e)] = (res.theta_hat, res.se_analytic)
            except OcppeError:
                out[(t1, t2, e)] = None
    return out


def summarize(estimates, ses, theta: float, bias: str = "ratio_of_mean", level: float = 0.95) -> dict:
    """Bias ratio, Std (population sd), MSE and coverage.

    ``coverage`` uses each replication's own interval theta_hat +- z se;
    ``coverage_std`` is the share of estimates inside theta +- z Std.
    """
    est = np.asarray(estimates, dtype=float)
    se = np.asarray(ses, dtype=float)
    if est.size == 0:
        nan = float("nan")
        return {"bias_ratio": nan, "std": nan, "mse": nan, "coverage": nan, "coverage_std": nan,
                "mean_se": nan, "mean_theta_hat": nan}
    z = float(norm.ppf(0.5 + level / 2))
    if bias == "ratio_of_mean":
        br = (est.mean() - theta) / theta
    elif bias == "mean_of_ratio":
        br = float(np.mean((est - theta) / theta))
    else:
        raise ConfigError(f"unknown bias definition {bias!r}")
    return {
        "bias_ratio": float(br),
        "std": float(est.std()),
        "mse": float(np.mean((est - theta) ** 2)),
        "coverage": float(np.mean(np.abs(est - theta) <= z * se)),
        "coverage_std": float(np.mean(np.abs(est - theta) <= z * est.std())),
        "mean_se": float(se.mean()),
        "mean_theta_hat": float(est.mean()),
    }


def run_study(study: StudyConfig, intervention: Intervention | None = None,
              config: EstimatorConfig | None = None, cache_dir=None, progress=None) -> StudyReport:
    """Replicate every design; parallel over replications (joblib) when n_jobs > 1."""
    iv = intervention or simulation_intervention()
    report = StudyReport()
    if study.reps <= 0:
        return report
    ranges = [tuple(map(float, rg)) for rg in study.ranges]
    for di, cfg in enumerate(study.designs):
        if study.n_jobs == 1:
            reps = []
            for r in range(study.reps):
                reps.append(run_replication(cfg, r, study.master_seed, ranges, iv, study.estimators, config))
                if progress:
                    progress(di, r)
        else:
            from joblib import Parallel, delayed

            reps = Parallel(n_jobs=study.n_jobs)(
                delayed(run_replication)(cfg, r, study.master_seed, ranges, iv, study.estimators, config)
                for r in range(study.reps)
            )
        for t1, t2 in ranges:
            theta, mcse = cached_true_theta(cfg, iv, t1, t2, study.mc_size, study.oracle_seed, cache_dir)
            for e in study.estimators:
                vals = [rep[(t1, t2, e)] for rep in reps]
                ok = [v for v in vals if v is not None]
                failures = len(vals) - len(ok)
                stats = summarize([v[0] for v in ok], [v[1] for v in ok], theta, study.bias)
                report.cells.append({
                    "design": di, "design_kind": cfg.design, "R_d2": cfg.R_d2, "R_y2": cfg.R_y2,
                    "n": cfg.n, "tau1": t1, "tau2": t2, "estimator": e, "theta_true": theta,
                    "theta_mcse": mcse, **stats, "reps": len(vals), "failures": failures,
                    "flagged": failures > 0.02 * len(vals),
                })
                for r, v in enumerate(vals):
                    report.replications.append(
                        [di, r, t1, t2, e, float("nan") if v is None else v[0],
                         float("nan") if v is None else v[1], v is None])
    return report


def scaled_designs(pairs: Sequence[tuple[float, float]], n: int = 500, p_x: int = 30,
                   design: str = "benchmark") -> tuple[DgpConfig, ...]:
    return tuple(DgpConfig(n=n, p_x=p_x, R_d2=a, R_y2=b, design=design) for a, b in pairs)


__all__ = [
    "DgpConfig", "StudyConfig", "StudyReport", "OracleNuisances", "dgp_sample", "oracle_nuisances",
    "true_theta", "run_study", "run_replication", "summarize", "replication_rng", "scaled_designs",
    "outcome_mean", "draw_controls",
]
