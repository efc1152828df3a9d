"""Run configuration: a YAML mapping validated before any computation.

Unknown keys are errors everywhere. See the README for the full schema.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .basis import BasisSpec
from .distreg import LINKS, DistRegConfig
from .errors import ConfigError
from .quantile import KERNELS, BandwidthConfig
from .riesz import RieszConfig
from .score import EstimatorConfig

TOP_KEYS = {"input", "output", "intervention", "indices", "basis", "riesz_basis", "estimator",
            "estimate", "test", "policy", "simulate"}


def _check_keys(section: str, d: dict, allowed) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(d).__name__}")
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{section}: unknown keys {extra}")


def _require(section: str, d: dict, key: str):
    if key not in d:
        raise ConfigError(f"{section}: missing required key {key!r}")
    return d[key]


def _num(section, v, kind=float):
    try:
        if isinstance(v, bool):
            raise TypeError
        return kind(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}: expected a number, got {v!r}") from None


def parse_basis(d: dict | None, section="basis") -> BasisSpec:
    d = d or {}
    _check_keys(section, d, {"degree", "include_interactions", "drop_collinear"})
    try:
        return BasisSpec(int(d.get("degree", 2)), bool(d.get("include_interactions", True)),
                         bool(d.get("drop_collinear", False)))
    except ValueError as exc:
        raise ConfigError(f"{section}: {exc}") from None


def parse_estimator(cfg: dict) -> EstimatorConfig:
    est = cfg.get("estimator") or {}
    _check_keys("estimator", est, {"J", "link", "loading_rounds", "loading_source", "lambda_scale",
                                   "kkt_tol", "max_iter", "bandwidth", "riesz", "min_segment_points",
                                   "level"})
    bw = est.get("bandwidth") or {}
    _check_keys("estimator.bandwidth", bw, {"constant", "exponent", "kernel"})
    rz = est.get("riesz") or {}
    _check_keys("estimator.riesz", rz, {"intercept", "A", "lambda", "refit"})
    link = est.get("link", "logistic")
    if link not in LINKS:
        raise ConfigError(f"estimator.link: unknown link {link!r}")
    if bw.get("kernel", "gaussian") not in KERNELS:
        raise ConfigError(f"estimator.bandwidth.kernel: unknown kernel {bw.get('kernel')!r}")
    try:
        dr = DistRegConfig(
            J=_num("estimator.J", est.get("J", 100), int),
            link=link,
            loading_rounds=_num("estimator.loading_rounds", est.get("loading_rounds", 2), int),
            loading_source=str(est.get("loading_source", "post")),
            lambda_scale=_num("estimator.lambda_scale", est.get("lambda_scale", 1.0)),
            kkt_tol=_num("estimator.kkt_tol", est.get("kkt_tol", 1e-7)),
            max_iter=_num("estimator.max_iter", est.get("max_iter", 1000), int),
        )
        bandwidth = BandwidthConfig(
            _num("estimator.bandwidth.constant", bw.get("constant", 1.06)),
            _num("estimator.bandwidth.exponent", bw.get("exponent", 0.2)),
            str(bw.get("kernel", "gaussian")),
        )
        riesz = RieszConfig(
            intercept=bool(rz.get("intercept", True)),
            A=None if rz.get("A") is None else _num("estimator.riesz.A", rz["A"]),
            lambda_gamma=None if rz.get("lambda") is None else _num("estimator.riesz.lambda", rz["lambda"]),
            refit=bool(rz.get("refit", False)),
        )
    except ValueError as exc:
        raise ConfigError(f"estimator: {exc}") from None
    level = _num("estimator.level", est.get("level", 0.95))
    if not 0 < level < 1:
        raise ConfigError("estimator.level must lie in (0, 1)")
    rb = cfg.get("riesz_basis")
    return EstimatorConfig(
        basis=parse_basis(cfg.get("basis")),
        riesz_basis=None if rb is None else parse_basis(rb, "riesz_basis"),
        distreg=dr,
        bandwidth=bandwidth,
        riesz=riesz,
        min_segment_points=_num("estimator.min_segment_points", est.get("min_segment_points", 5), int),
        level=level,
    )


def parse_indices(items) -> list[tuple[float, float, tuple]]:
    if not isinstance(items, list) or not items:
        raise ConfigError("indices: expected a non-empty list")
    out = []
    for k, it in enumerate(items):
        sec = f"indices[{k}]"
        if isinstance(it, dict):
            _check_keys(sec, it, {"tau1", "tau2", "sigma"})
            t1, t2 = _require(sec, it, "tau1"), _require(sec, it, "tau2")
            sigma = it.get("sigma", [])
            sigma = [sigma] if not isinstance(sigma, list) else sigma
        elif isinstance(it, list) and len(it) in (2, 3):
            t1, t2 = it[0], it[1]
            sigma = it[2] if len(it) == 3 else []
            sigma = [sigma] if not isinstance(sigma, list) else sigma
        else:
            raise ConfigError(f"{sec}: expected [tau1, tau2] or a mapping")
        out.append((_num(sec, t1), _num(sec, t2), tuple(_num(sec, s) for s in sigma)))
    return out


def parse_sigma_grid(v, section: str) -> list:
    """A list of points, or {lo, hi, num} for an evenly spaced 1-D grid."""
    if isinstance(v, dict):
        _check_keys(section, v, {"lo", "hi", "num"})
        import numpy as np

        lo, hi = _num(section, _require(section, v, "lo")), _num(section, _require(section, v, "hi"))
        num = _num(section, v.get("num", 21), int)
        return [[float(s)] for s in np.linspace(lo, hi, num)]
    if isinstance(v, list) and v:
        return [[_num(section, s)] if not isinstance(s, list) else [_num(section, t) for t in s] for s in v]
    raise ConfigError(f"{section}: expected a list or {{lo, hi, num}}")


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)

    def get(self, key, default=None):
        return self.raw.get(key, default)

    def section(self, name: str, allowed) -> dict:
        d = self.raw.get(name) or {}
        _check_keys(name, d, allowed)
        return d

    def input_path(self) -> Path:
        p = Path(str(_require("config", self.raw, "input")))
        return p if p.is_absolute() else self.base_dir / p

    def hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw: Any = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    raw = raw or {}
    _check_keys("config", raw, TOP_KEYS)
    return RunConfig(raw, path.resolve().parent, parse_estimator(raw))
