"""Command-line front end: ``ocppe {estimate,test,policy,simulate} CONFIG``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import RunConfig, _check_keys, _num, _require, load_config, parse_indices, parse_sigma_grid
from .data import Dataset, IndexU
from .errors import ConfigError, DataError, NumericalError, OcppeError
from .interventions import Distributional, from_config, simulation_intervention

EXIT_CODES = {ConfigError: 2, DataError: 3, NumericalError: 4}


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, (tuple, set)):
        return list(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_json(path: Path, obj) -> None:
    # Python's float repr is the shortest string that round-trips exactly.
    path.write_text(json.dumps(obj, indent=2, default=_jsonable) + "\n")


def _f17(v):
    return format(float(v), ".17g")


def write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_f17(v) if isinstance(v, (float, np.floating)) else v for v in r])


def _manifest(command: str, rc: RunConfig, seed) -> dict:
    return {
        "command": command,
        "config_hash": rc.hash(),
        "seed": seed,
        "package_version": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "estimator": rc.estimator.to_dict(),
        "config": rc.raw,
    }


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, int(args.threads))
    env = os.environ.get("OCPPE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"OCPPE_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _outdir(args, rc: RunConfig) -> Path:
    out = Path(args.out) if args.out else Path(str(rc.get("output", "ocppe_out")))
    if not out.is_absolute() and not args.out:
        out = rc.base_dir / out
    out.mkdir(parents=True, exist_ok=True)
    return out


def _intervention(rc: RunConfig, data, default=None):
    cfg = rc.get("intervention")
    if cfg is None:
        if default is not None:
            return default
        raise ConfigError("config: missing required key 'intervention'")
    return from_config(cfg, data)


def _sigma_str(sigma) -> str:
    return ";".join(_f17(s) for s in sigma)


# ---------------------------------------------------------------------------


def cmd_estimate(rc: RunConfig, args) -> Path:
    from .score import ProcessFit, dist_perturbation_estimate, estimate_many

    opts = rc.section("estimate", {"naive"})
    idx = [IndexU(t1, t2, s) for t1, t2, s in parse_indices(_require("config", rc.raw, "indices"))]
    data = Dataset.from_csv(rc.input_path())
    iv = _intervention(rc, data)
    out = _outdir(args, rc)
    proc = ProcessFit(data, [(u.tau1, u.tau2) for u in idx], rc.estimator)
    if isinstance(iv, Distributional):
        results = [dist_perturbation_estimate(data, u, iv.g0_cdf, rc.estimator, process=proc) for u in idx]
    else:
        results = estimate_many(data, idx, iv, rc.estimator, "dml", process=proc)
    naive = estimate_many(data, idx, iv, rc.estimator, "naive", process=proc) \
        if opts.get("naive") and not isinstance(iv, Distributional) else []
    rows = []
    for k, r in enumerate(results):
        write_json(out / f"result_{k:03d}.json", r.to_dict())
        rows.append([r.index.tau1, r.index.tau2, _sigma_str(r.index.sigma), r.theta_hat, r.se_analytic,
                     r.ci95[0], r.ci95[1]])
    header = ["tau1", "tau2", "sigma", "theta", "se", "lo", "hi"]
    write_csv(out / "estimates.csv", header, rows)
    if naive:
        write_csv(out / "naive_estimates.csv", header,
                  [[r.index.tau1, r.index.tau2, _sigma_str(r.index.sigma), r.theta_hat, r.se_analytic,
                    r.ci95[0], r.ci95[1]] for r in naive])
    write_json(out / "manifest.json", _manifest("estimate", rc, None))
    return out


def cmd_test(rc: RunConfig, args) -> Path:
    from . import inference

    t = rc.section("test", {"kind", "a", "grid_step", "sigma0", "tau1", "tau2", "sigma_grid",
                            "sigma_star", "B", "multiplier", "dump_draws"})
    kind = _require("test", t, "kind")
    data = Dataset.from_csv(rc.input_path())
    iv = _intervention(rc, data)
    B = _num("test.B", t.get("B", 1000), int)
    mult = str(t.get("multiplier", "gaussian"))
    common = dict(B=B, seed=args.seed, config=rc.estimator, multiplier=mult)
    if kind == "homogeneity_quantiles":
        s0 = t.get("sigma0", [])
        s0 = tuple(_num("test.sigma0", v) for v in (s0 if isinstance(s0, list) else [s0]))
        rep = inference.test_homogeneity_quantiles(data, iv, s0, _num("test.a", t.get("a", 0.1)),
                                                   _num("test.grid_step", t.get("grid_step", 0.05)), **common)
    elif kind in ("homogeneity_interventions", "optimality"):
        rng = (_num("test.tau1", _require("test", t, "tau1")), _num("test.tau2", _require("test", t, "tau2")))
        grid = parse_sigma_grid(_require("test", t, "sigma_grid"), "test.sigma_grid")
        if kind == "homogeneity_interventions":
            rep = inference.test_homogeneity_interventions(data, rng, iv, grid, **common)
        else:
            star = t.get("sigma_star")
            if star is None:
                raise ConfigError("test: missing required key 'sigma_star'")
            star = [_num("test.sigma_star", v) for v in (star if isinstance(star, list) else [star])]
            rep = inference.test_optimality(data, rng, iv, star, grid, **common)
    else:
        raise ConfigError(f"test.kind: unknown kind {kind!r}")
    out = _outdir(args, rc)
    write_json(out / "test_report.json", rep.to_dict())
    if t.get("dump_draws"):
        (out / "bootstrap_draws.csv").write_text(rep.ensemble.to_csv())
    write_json(out / "manifest.json", _manifest("test", rc, args.seed))
    return out


def cmd_policy(rc: RunConfig, args) -> Path:
    from .policy import Feature, policy_report

    p = rc.section("policy", {"tau1", "tau2", "sigma", "K", "B", "features"})
    feats = []
    for k, f in enumerate(_require("policy", p, "features")):
        sec = f"policy.features[{k}]"
        _check_keys(sec, f, {"column", "op", "threshold"})
        thr = f.get("threshold", 1.0)
        feats.append(Feature(str(_require(sec, f, "column")), str(f.get("op", "eq")),
                             thr if thr == "median" else _num(sec, thr)))
    sigma = p.get("sigma", [])
    sigma = tuple(_num("policy.sigma", v) for v in (sigma if isinstance(sigma, list) else [sigma]))
    u = IndexU(_num("policy.tau1", _require("policy", p, "tau1")),
               _num("policy.tau2", _require("policy", p, "tau2")), sigma)
    data = Dataset.from_csv(rc.input_path())
    iv = _intervention(rc, data)
    rep = policy_report(data, u, iv, feats, K=_num("policy.K", p.get("K", 5), int), seed=args.seed,
                        B=_num("policy.B", p.get("B", 1000), int), config=rc.estimator,
                        n_jobs=min(_threads(args), 8))
    out = _outdir(args, rc)
    write_json(out / "welfare_report.json", rep.to_dict())
    write_csv(out / "welfare.csv", ["rule", "gain", "se_analytic", "se_bootstrap"],
              [["".join(map(str, r)), v, a, b]
               for r, v, a, b in zip(rep.rules, rep.values, rep.se_analytic, rep.se_bootstrap)])
    write_json(out / "manifest.json", _manifest("policy", rc, args.seed))
    return out


def cmd_simulate(rc: RunConfig, args) -> Path:
    from .simulation import DgpConfig, StudyConfig, run_study

    s = rc.section("simulate", {"designs", "ranges", "reps", "estimators", "mc_size", "bias",
                                "oracle_seed"})
    designs = []
    for k, d in enumerate(s.get("designs") or [{}]):
        sec = f"simulate.designs[{k}]"
        _check_keys(sec, d, {"n", "p_x", "R_d2", "R_y2", "design"})
        designs.append(DgpConfig(n=_num(sec, d.get("n", 500), int), p_x=_num(sec, d.get("p_x", 30), int),
                                 R_d2=_num(sec, d.get("R_d2", 0.2)), R_y2=_num(sec, d.get("R_y2", 0.2)),
                                 design=str(d.get("design", "benchmark"))))
    ranges = tuple((_num("simulate.ranges", a), _num("simulate.ranges", b))
                   for a, b in s.get("ranges", [[0.1, 0.2], [0.2, 0.3], [0.3, 0.4]]))
    for a, b in ranges:
        IndexU(a, b)
    est = tuple(s.get("estimators", ["naive", "dml"]))
    if not set(est) <= {"naive", "dml"}:
        raise ConfigError(f"simulate.estimators: unknown estimators {sorted(set(est) - {'naive', 'dml'})}")
    study = StudyConfig(
        designs=tuple(designs), ranges=ranges, reps=_num("simulate.reps", s.get("reps", 100), int),
        estimators=est, master_seed=args.seed, mc_size=_num("simulate.mc_size", s.get("mc_size", 1_000_000), int),
        oracle_seed=_num("simulate.oracle_seed", s.get("oracle_seed", 20240917), int),
        bias=str(s.get("bias", "ratio_of_mean")), n_jobs=_threads(args),
    )
    if study.mc_size < 1_000_000:
        raise ConfigError("simulate.mc_size must be at least 1000000")
    iv = _intervention(rc, None, default=simulation_intervention())
    out = _outdir(args, rc)
    rep = run_study(study, iv, rc.estimator, cache_dir=out / "oracle_cache")
    (out / "study.csv").write_text(rep.to_csv())
    (out / "replications.csv").write_text(rep.replications_csv())
    (out / "study_table.txt").write_text(rep.table() + "\n")
    write_json(out / "manifest.json", _manifest("simulate", rc, args.seed))
    return out


COMMANDS = {"estimate": cmd_estimate, "test": cmd_test, "policy": cmd_policy, "simulate": cmd_simulate}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ocppe", description="Outcome-conditioned partial policy effects.")
    ap.add_argument("--version", action="version", version=f"ocppe {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", help="YAML run configuration")
        sp.add_argument("--out", help="output directory (overrides 'output' in the config)")
        sp.add_argument("--threads", type=int, help="worker processes (default: OCPPE_THREADS or all cores)")
        sp.add_argument("--seed", type=int, required=name != "estimate",
                        help="master random seed (required for bootstrap and simulation commands)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = load_config(args.config)
        out = COMMANDS[args.command](rc, args)
    except OcppeError as exc:
        code = next((c for cls, c in EXIT_CODES.items() if isinstance(exc, cls)), 4)
        ctx = getattr(exc, "context", None)
        msg = f"ocppe {args.command}: {type(exc).__name__}: {exc}"
        if ctx:
            msg += f" {ctx}"
        print(msg, file=sys.stderr)
        return code
    except ValueError as exc:
        # Invalid values that survive parsing (tau ranges, sigma arity, ...).
        print(f"ocppe {args.command}: invalid configuration: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
