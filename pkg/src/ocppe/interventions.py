"""Counterfactual intervention families G_delta(d[, x]; sigma).

Every intervention exposes ``apply`` (the map itself), ``vartheta`` (its
derivative in delta at delta = 0) and ``vartheta_prime`` (the derivative of
``vartheta`` in d), evaluated analytically.
"""

from __future__ import annotations

import ast
import functools
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ConfigError, NumericalError

MONOTONE_DELTA = 0.01


class Intervention:
    kind: str = "abstract"
    needs_x: bool = False

    @property
    def sigma(self) -> tuple[float, ...]:
        return ()

    def at(self, sigma) -> Intervention:
        """The family member indexed by ``sigma``."""
        if tuple(sigma):
            raise ValueError(f"{self.kind} intervention takes no sigma")
        return self

    def apply(self, delta, d, x=None):
        raise NotImplementedError

    def vartheta(self, d, x=None):
        raise NotImplementedError

    def vartheta_prime(self, d, x=None):
        raise NotImplementedError

    def _check_x(self, x):
        if self.needs_x and x is None:
            raise ValueError(f"{self.kind} intervention needs the controls x")

    def check_monotone(self, d, x=None, delta: float = MONOTONE_DELTA) -> None:
        """Numerically confirm G_delta is strictly increasing in d on the sample.

        Uses the analytic slope 1 + delta * vartheta'(d) of the first-order
        expansion plus a finite-difference check of the exact map.
        """
        d = np.asarray(d, dtype=float)
        for dl in (-delta, delta):
            slope = 1.0 + dl * np.asarray(self.vartheta_prime(d, x))
            if np.any(slope <= 0):
                raise NumericalError(
                    f"{self.kind} intervention is not increasing in d at delta={dl}"
                )
            h = 1e-6 * (1.0 + np.abs(d))
            fd = (self.apply(dl, d + h, x) - self.apply(dl, d - h, x)) / (2 * h)
            if np.any(fd <= 0):
                raise NumericalError(
                    f"{self.kind} intervention is not increasing in d at delta={dl}"
                )


def _full(v, d):
    return np.broadcast_to(np.asarray(v, dtype=float), np.shape(d)).astype(float)


@dataclass(frozen=True)
class LocationShift(Intervention):
    """G_delta(d) = d + delta."""

    kind = "location_shift"

    def apply(self, delta, d, x=None):
        return np.asarray(d, dtype=float) + delta

    def vartheta(self, d, x=None):
        return _full(1.0, d)

    def vartheta_prime(self, d, x=None):
        return _full(0.0, d)


@dataclass(frozen=True)
class Scale(Intervention):
    """G_delta(d) = d (1 + delta), or d / (1 + delta) when ``inverse``."""

    inverse: bool = False
    kind = "scale"

    def apply(self, delta, d, x=None):
        d = np.asarray(d, dtype=float)
        return d / (1.0 + delta) if self.inverse else d * (1.0 + delta)

    def vartheta(self, d, x=None):
        d = np.asarray(d, dtype=float)
        return -d if self.inverse else d.copy()

    def vartheta_prime(self, d, x=None):
        return _full(-1.0 if self.inverse else 1.0, d)


@dataclass(frozen=True)
class LocationScale(Intervention):
    """G_delta(d) = (d - mu)(1 + sigma1 delta) + mu + sigma2 delta.

    ``at(sigma)`` replaces ``(sigma1,)`` or ``(sigma1, sigma2)``.
    """

    mu: float = 0.0
    sigma1: float = 1.0
    sigma2: float = 0.0
    kind = "location_scale"

    @property
    def sigma(self):
        return (self.sigma1, self.sigma2)

    def at(self, sigma):
        sigma = tuple(float(s) for s in np.atleast_1d(sigma))
        if len(sigma) == 1:
            return replace(self, sigma1=sigma[0])
        if len(sigma) == 2:
            return replace(self, sigma1=sigma[0], sigma2=sigma[1])
        if not sigma:
            return self
        raise ValueError("location_scale takes at most two sigma components")

    def apply(self, delta, d, x=None):
        d = np.asarray(d, dtype=float)
        return (d - self.mu) * (1.0 + self.sigma1 * delta) + self.mu + self.sigma2 * delta

    def vartheta(self, d, x=None):
        return self.sigma1 * (np.asarray(d, dtype=float) - self.mu) + self.sigma2

    def vartheta_prime(self, d, x=None):
        return _full(self.sigma1, d)


# ---------------------------------------------------------------------------
# Expression-defined maps. Expressions are parsed with a whitelist over the
# Python grammar (numbers, names, + - * / and unary minus, integer powers) and
# differentiated symbolically.

_ALLOWED_NAMES = {"d", "delta", "s"}


def _is_allowed_name(name: str) -> bool:
    if name in _ALLOWED_NAMES:
        return True
    return (name[0] in "xs") and name[1:].isdigit() and int(name[1:]) >= 1


def _to_sympy(node, symbols):
    import sympy

    if isinstance(node, ast.Expression):
        return _to_sympy(node.body, symbols)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return sympy.Float(node.value) if isinstance(node.value, float) else sympy.Integer(node.value)
    if isinstance(node, ast.Name):
        if not _is_allowed_name(node.id):
            raise ConfigError(f"unknown symbol {node.id!r} in intervention expression")
        name = "s1" if node.id == "s" else node.id
        if name not in symbols:
            symbols[name] = sympy.Symbol(name, real=True)
        return symbols[name]
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _to_sympy(node.operand, symbols)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp):
        a = _to_sympy(node.left, symbols)
        b = _to_sympy(node.right, symbols)
        if isinstance(node.op, ast.Add):
            return a + b
        if isinstance(node.op, ast.Sub):
            return a - b
        if isinstance(node.op, ast.Mult):
            return a * b
        if isinstance(node.op, ast.Div):
            return a / b
        if isinstance(node.op, ast.Pow):
            if not (isinstance(node.right, ast.Constant) and isinstance(node.right.value, int)):
                raise ConfigError("only integer constant exponents are allowed")
            return a**b
    raise ConfigError(f"unsupported construct in intervention expression: {ast.dump(node)}")


@functools.lru_cache(maxsize=64)
def _compile(expr: str):
    import sympy

    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse intervention expression {expr!r}") from exc
    symbols: dict = {}
    g = _to_sympy(tree, symbols)
    for name in ("d", "delta"):
        symbols.setdefault(name, sympy.Symbol(name, real=True))
    d, delta = symbols["d"], symbols["delta"]
    vt = sympy.diff(g, delta).subs(delta, 0)
    vtp = sympy.diff(vt, d)
    at0 = sympy.simplify(g.subs(delta, 0) - d)
    if at0 != 0:
        raise ConfigError(f"expression must reduce to d at delta=0, got d + ({at0})")
    free = sorted(symbols, key=lambda s: (s[0], int(s[1:]) if s[1:].isdigit() else -1))
    syms = [symbols[s] for s in free]
    return (
        tuple(free),
        sympy.lambdify(syms, g, "numpy"),
        sympy.lambdify(syms, vt, "numpy"),
        sympy.lambdify(syms, vtp, "numpy"),
    )


@dataclass(frozen=True)
class ExpressionIntervention(Intervention):
    """G_delta given as an arithmetic expression in d, delta, x1.., s1...

    ``x<j>`` refers to the j-th control (1-based); ``s<k>`` (``s`` alone is
    ``s1``) to the k-th sigma component. The map must reduce to ``d`` at
    ``delta = 0``.
    """

    expr: str
    params: tuple[float, ...] = field(default=())

    @property
    def kind(self):
        return "covariate_dependent" if self.needs_x else "expression"

    @property
    def needs_x(self):
        return any(s.startswith("x") for s in _compile(self.expr)[0])

    @property
    def sigma(self):
        return self.params

    def at(self, sigma):
        return replace(self, params=tuple(float(s) for s in np.atleast_1d(sigma)))

    def _args(self, delta, d, x):
        names = _compile(self.expr)[0]
        d = np.asarray(d, dtype=float)
        args = []
        for name in names:
            if name == "d":
                args.append(d)
            elif name == "delta":
                args.append(delta)
            elif name.startswith("x"):
                if x is None:
                    raise ValueError("expression refers to controls but x is missing")
                xa = np.asarray(x, dtype=float)
                j = int(name[1:]) - 1
                args.append(xa[..., j])
            else:
                k = int(name[1:]) - 1
                if k >= len(self.params):
                    raise ValueError(f"sigma component {name} not supplied")
                args.append(self.params[k])
        return args

    def apply(self, delta, d, x=None):
        return _full(_compile(self.expr)[1](*self._args(delta, d, x)), d)

    def vartheta(self, d, x=None):
        return _full(_compile(self.expr)[2](*self._args(0.0, d, x)), d)

    def vartheta_prime(self, d, x=None):
        return _full(_compile(self.expr)[3](*self._args(0.0, d, x)), d)


@dataclass(frozen=True)
class TargetPerturbation(ExpressionIntervention):
    """G_delta(d) = d + delta (g0(d) - d) for a target map g0 given in d."""

    g0: str = "d"
    expr: str = field(init=False, default="")

    def __post_init__(self):
        object.__setattr__(self, "expr", f"d + delta*(({self.g0}) - d)")

    @property
    def kind(self):
        return "target_perturbation"


@dataclass(frozen=True)
class Distributional(Intervention):
    """Perturbation of the marginal CDF of D towards a target CDF ``g0_cdf``.

    Its direction depends on F_D and f_D, so it only feeds the plug-in
    estimator in :mod:`ocppe.score`; ``vartheta`` is not defined here.
    """

    g0_cdf: Callable = None
    label: str = "target"
    kind = "distributional"

    def _reject(self, *args, **kwargs):
        raise ValueError(
            "distributional interventions have no closed-form vartheta; "
            "use score.dist_perturbation_estimate"
        )

    apply = vartheta = vartheta_prime = _reject


def vartheta(intervention: Intervention, d, x=None):
    intervention._check_x(x)
    return intervention.vartheta(d, x)


def vartheta_prime(intervention: Intervention, d, x=None):
    intervention._check_x(x)
    return intervention.vartheta_prime(d, x)


def simulation_intervention() -> ExpressionIntervention:
    """The location-scale map (d + 3 delta)(1 + delta) of the simulation study."""
    return ExpressionIntervention("(d + 3*delta)*(1 + delta)")


def from_config(cfg: dict, data=None) -> Intervention:
    """Build an intervention from a config mapping (see the README schema)."""
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    try:
        if kind == "location_shift":
            out = LocationShift()
        elif kind == "scale":
            out = Scale(inverse=bool(cfg.pop("inverse", False)))
        elif kind == "location_scale":
            mu = cfg.pop("mu", 0.0)
            if mu == "mean":
                if data is None:
                    raise ConfigError("mu: mean needs data")
                mu = float(np.mean(data.d))
            out = LocationScale(float(mu), float(cfg.pop("sigma1", 1.0)), float(cfg.pop("sigma2", 0.0)))
        elif kind == "target_perturbation":
            out = TargetPerturbation(g0=str(cfg.pop("g0")))
        elif kind in ("expression", "covariate_dependent"):
            out = ExpressionIntervention(str(cfg.pop("expr")))
            _compile(out.expr)
        elif kind == "distributional":
            from .score import target_cdf_from_config

            out = Distributional(target_cdf_from_config(cfg.pop("target"), data), "target")
        else:
            raise ConfigError(f"intervention.kind: unknown kind {kind!r}")
    except KeyError as exc:
        raise ConfigError(f"intervention: missing key {exc.args[0]!r}") from None
    if cfg:
        raise ConfigError(f"intervention: unknown keys {sorted(cfg)}")
    return out
