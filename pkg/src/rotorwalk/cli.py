"""Command-line entry point: ``rotorwalk <command> [options]``.

Exit codes: 0 success, 1 a check or acceptance condition failed, 2 usage or
configuration error, 3 step budget exhausted. Errors are also printed to
stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import configparser
import itertools
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from rotorwalk import __version__
from rotorwalk.engine import DEFAULT_BUDGET, StepBudgetExceeded, flux_residual
from rotorwalk.experiments import (
    aggregate,
    atomic_write,
    ball_odometer,
    escape_only_series,
    escape_rate_series,
    geometric_checkpoints,
    rate_normalizer,
)
from rotorwalk.lattice import InitialRule, MalformedOrder, order_from_spec, validate_order
from rotorwalk.potential import calibrate, load_calibration, mc_alpha

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_BUDGET = 0, 1, 2, 3
OUT_ENV = "ROTORWALK_OUT"


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Everything needed to repeat a run; round-trips through the JSON sidecar."""

    command: str
    d: Optional[int] = None
    order: Optional[str] = None
    rule: str = "rho0"
    n: Optional[int] = None
    r: Optional[float] = None
    checkpoints: Optional[List[int]] = None
    seed: Optional[int] = None
    out: Optional[str] = None
    budget: int = DEFAULT_BUDGET
    options: Dict[str, object] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls(**json.loads(text))


# -- helpers ------------------------------------------------------------------------

def _out_dir(cfg: RunConfig, default_name: str) -> str:
    root = cfg.out or os.path.join(os.environ.get(OUT_ENV, "."), default_name)
    os.makedirs(root, exist_ok=True)
    return root


def _sidecar(path: str, cfg: RunConfig, extra: Dict[str, object]) -> None:
    meta = {"config": json.loads(cfg.to_json()), "version": __version__}
    meta.update(extra)
    atomic_write(path, json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _order(cfg: RunConfig):
    if cfg.order is None:
        raise UsageError("--order is required (a preset such as ccw/cw or an explicit cycle)")
    try:
        order = order_from_spec(cfg.order, cfg.d)
    except (MalformedOrder, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    verdict = validate_order(order)
    if not verdict.ok:
        raise UsageError(f"order {order} violates the separation assumption: no pair +-e_i lies "
                         f"on opposite sides of e_d and -e_d in the cycle")
    return order


def _rule(cfg: RunConfig) -> InitialRule:
    if cfg.rule in ("rho0", "uniform-up"):
        return InitialRule(cfg.rule)
    raise UsageError(f"unknown rule {cfg.rule!r}; expected rho0 or uniform-up")


def _need(cfg: RunConfig, *names: str) -> None:
    for nm in names:
        if getattr(cfg, nm) is None:
            raise UsageError(f"--{nm} is required for {cfg.command}")


def write_pgm(path: str, img: np.ndarray) -> None:
    """Plain (P2) PGM; occupied pixels are 255."""
    h, w = img.shape
    rows = "\n".join(" ".join("255" if v else "0" for v in row) for row in img)
    atomic_write(path, f"P2\n{w} {h}\n255\n{rows}\n")


# -- commands -------------------------------------------------------------------------

def cmd_escape_rate(cfg: RunConfig) -> int:
    _need(cfg, "d", "n")
    order, rule = _order(cfg), _rule(cfg)
    cps = cfg.checkpoints or geometric_checkpoints(cfg.n)
    series = escape_rate_series(cfg.d, order, rule, cfg.n, cps, budget=cfg.budget)
    series.check_invariants()
    if cfg.options.get("dual"):
        targets = sorted({c.I for c in series.checkpoints if c.I > 0})
        series.dual = escape_only_series(cfg.d, order, rule, checkpoints=targets, budget=cfg.budget)
    out = _out_dir(cfg, "escape-rate")
    stem = f"escape_d{cfg.d}_{cfg.order}_{cfg.rule}_n{cfg.n}"
    series.write(out, stem)
    _sidecar(os.path.join(out, stem + ".json"), cfg, {"series": series.metadata})
    last = rate_normalizer(series)[-1]
    if cfg.d == 2:
        ref, label = math.pi / 2, "pi/2"
    else:
        ref = load_calibration().get(f"alpha_{cfg.d}")
        label = f"alpha_{cfg.d}"
    print(json.dumps({"n": last.n, "normalized_rate": last.rate, "reference": ref,
                      "reference_label": label, "csv": os.path.join(out, stem + ".csv")}))
    return EXIT_OK


def cmd_aggregate(cfg: RunConfig) -> int:
    _need(cfg, "d", "n")
    cfg.order = cfg.order or "ccw"
    res = aggregate(cfg.d, _order(cfg), _rule(cfg), cfg.n, budget=cfg.budget)
    out = _out_dir(cfg, "aggregate")
    stem = f"aggregate_d{cfg.d}_n{cfg.n}"
    lines = ["# schema_version=1", ",".join(f"x{a + 1}" for a in range(cfg.d))]
    lines += [",".join(map(str, s)) for s in res.sites]
    atomic_write(os.path.join(out, stem + ".csv"), "\n".join(lines) + "\n")
    summary = {"n": res.n, "inradius": res.inradius, "outradius": res.outradius,
               "volume_radius": res.volume_radius}
    if cfg.d == 2:
        write_pgm(os.path.join(out, stem + ".pgm"), res.raster())
    _sidecar(os.path.join(out, stem + ".json"), cfg, {"summary": summary})
    print(json.dumps(summary))
    return EXIT_OK


def cmd_ball(cfg: RunConfig) -> int:
    _need(cfg, "d", "n", "r")
    cfg.order = cfg.order or "ccw"
    bo = ball_odometer(cfg.d, _order(cfg), _rule(cfg), cfg.n, cfg.r, budget=cfg.budget)
    resid = flux_residual(bo.state, cfg.r)
    out = _out_dir(cfg, "ball")
    stem = f"ball_d{cfg.d}_n{cfg.n}_r{cfg.r:g}"
    R = bo.R
    lines = ["# schema_version=1", ",".join([f"x{a + 1}" for a in range(cfg.d)] + ["u"])]
    for idx in zip(*np.nonzero(bo.odometer)):
        lines.append(",".join([str(int(i) - R) for i in idx] + [str(int(bo.odometer[idx]))]))
    atomic_write(os.path.join(out, stem + ".csv"), "\n".join(lines) + "\n")
    summary = {"flux_residual": resid, "bound": 4 * cfg.d - 2, "u0": bo.at((0,) * cfg.d)}
    if cfg.options.get("green"):
        summary.update(bo.green_gap())
    _sidecar(os.path.join(out, stem + ".json"), cfg, {"summary": summary})
    print(json.dumps(summary))
    return EXIT_OK if resid <= 4 * cfg.d - 2 else EXIT_FAIL


def cmd_abelian(cfg: RunConfig) -> int:
    from rotorwalk.abelian import FiniteRotorGraph, enumerate_schedules, fuzz, grid_graph, stabilize

    opts = cfg.options
    report: Dict[str, object] = {}
    ok = True
    if opts.get("fixture"):
        with open(str(opts["fixture"])) as fh:
            g = FiniteRotorGraph.loads(fh.read())
    else:
        g = grid_graph()
    en = enumerate_schedules(g)
    ok &= len(en.outcomes) == 1
    report["fixture"] = {"distinct_outcomes": len(en.outcomes), "schedules": en.leaves,
                         "placement": list(stabilize(g).placement)}
    if opts.get("fuzz"):
        rep = fuzz(int(opts["fuzz"]), seed=cfg.seed or 0, max_vertices=int(opts.get("max_vertices", 12)),
                   max_particles=int(opts.get("max_particles", 8)))
        ok &= rep.ok
        report["fuzz"] = {"instances": rep.instances, "schedule_mismatches": rep.schedule_mismatches,
                          "conservation_failures": rep.conservation_failures,
                          "hp_violations": rep.hp_violations}
    report["ok"] = bool(ok)
    if cfg.out:
        out = _out_dir(cfg, "abelian")
        _sidecar(os.path.join(out, "abelian.json"), cfg, {"report": report})
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_mc_alpha(cfg: RunConfig) -> int:
    _need(cfg, "d")
    trials = int(cfg.options.get("trials", 10**6))
    radius = int(cfg.options.get("radius", 10**4))
    seed = cfg.seed if cfg.seed is not None else 0
    est = mc_alpha(cfg.d, trials, radius, seed)
    est2 = mc_alpha(cfg.d, trials, 2 * radius, seed)
    rec = {"R": est.as_dict(), "2R": est2.as_dict()}
    text = json.dumps(rec, sort_keys=True)
    if cfg.out:
        out = _out_dir(cfg, "mc-alpha")
        atomic_write(os.path.join(out, f"mc_alpha_d{cfg.d}_seed{seed}.json"), text + "\n")
        _sidecar(os.path.join(out, f"mc_alpha_d{cfg.d}_seed{seed}.meta.json"), cfg, {})
    print(text)
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig) -> int:
    cal = calibrate(seed=cfg.seed if cfg.seed is not None else 7, quick=bool(cfg.options.get("quick")),
                    alpha_trials=int(cfg.options.get("trials", 10**6)),
                    alpha_radius=int(cfg.options.get("radius", 10**4)))
    path = cfg.options.get("path") or os.path.join(_out_dir(cfg, "calibrate"), "calibration.txt")
    atomic_write(str(path), cal.dumps())
    print(json.dumps({"path": str(path), **cal.values}, sort_keys=True))
    return EXIT_OK


def _grid_cell(cfg: RunConfig) -> Dict[str, object]:
    order, rule = _order(cfg), _rule(cfg)
    s = escape_rate_series(cfg.d, order, rule, cfg.n, cfg.checkpoints or geometric_checkpoints(cfg.n),
                           budget=cfg.budget)
    out = _out_dir(cfg, "grid")
    stem = f"escape_d{cfg.d}_{cfg.order}_{cfg.rule}_n{cfg.n}"
    s.write(out, stem)
    _sidecar(os.path.join(out, stem + ".json"), cfg, {"series": s.metadata})
    last = rate_normalizer(s)[-1]
    return {"d": cfg.d, "order": cfg.order, "rule": cfg.rule, "n": last.n, "normalized_rate": last.rate}


def cmd_grid(cfg: RunConfig) -> int:
    _need(cfg, "n")
    ds = [int(v) for v in str(cfg.options.get("dims", cfg.d or 2)).split(",")]
    orders = str(cfg.options.get("orders", cfg.order or "ccw")).split(",")
    rules = str(cfg.options.get("rules", cfg.rule)).split(",")
    cells = [RunConfig("escape-rate", d=d, order=o, rule=r, n=cfg.n, checkpoints=cfg.checkpoints,
                       out=cfg.out, budget=cfg.budget) for d, o, r in itertools.product(ds, orders, rules)]
    workers = int(cfg.options.get("workers", os.cpu_count() or 1))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(_grid_cell, cells))
    for row in rows:
        print(json.dumps(row))
    return EXIT_OK


COMMANDS = {"escape-rate": cmd_escape_rate, "aggregate": cmd_aggregate, "ball": cmd_ball,
            "abelian": cmd_abelian, "mc-alpha": cmd_mc_alpha, "calibrate": cmd_calibrate,
            "grid": cmd_grid}

# argparse dests that live in RunConfig.options rather than top-level fields
_OPTION_KEYS = ("dual", "green", "fixture", "fuzz", "max_vertices", "max_particles", "trials",
                "radius", "quick", "path", "dims", "orders", "rules", "workers")


# -- argument parsing ---------------------------------------------------------------------

def _int_list(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rotorwalk", description="Rotor walk experiments on Z^d.")
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file supplying option defaults")
    common.add_argument("--d", type=int)
    common.add_argument("--order", help="preset (ccw, cw) or explicit cycle such as e1,e2,-e1,-e2")
    common.add_argument("--rule", default="rho0", choices=["rho0", "uniform-up"])
    common.add_argument("--n", type=int)
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/<command>)")
    common.add_argument("--budget", type=int, default=DEFAULT_BUDGET, help="per-particle step guard")
    common.add_argument("--seed", type=int)
    common.add_argument("--checkpoints", type=_int_list, help="comma-separated particle counts")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("escape-rate", parents=[common], help="I(rho, n) series")
    s.add_argument("--dual", action="store_true", help="also run the escape-only dual series")
    s = sub.add_parser("aggregate", parents=[common], help="rotor-router aggregation cluster")
    s = sub.add_parser("ball", parents=[common], help="odometer stopped on the sphere |x| >= r")
    s.add_argument("--r", type=float)
    s.add_argument("--green", action="store_true", help="report |u(0) - n G_r(0,0)|")
    s = sub.add_parser("abelian", parents=[common], help="schedule independence and Holroyd-Propp checks")
    s.add_argument("--fixture", help="graph fixture file (default: built-in 3x3 grid)")
    s.add_argument("--fuzz", type=int, default=0)
    s.add_argument("--max-vertices", dest="max_vertices", type=int, default=12)
    s.add_argument("--max-particles", dest="max_particles", type=int, default=8)
    s = sub.add_parser("mc-alpha", parents=[common], help="Monte-Carlo escape probability")
    s.add_argument("--trials", type=int, default=10**6)
    s.add_argument("--radius", type=int, default=10**4)
    s = sub.add_parser("calibrate", parents=[common], help="measure and write the calibration file")
    s.add_argument("--path")
    s.add_argument("--quick", action="store_true")
    s.add_argument("--trials", type=int, default=10**6)
    s.add_argument("--radius", type=int, default=10**4)
    s = sub.add_parser("grid", parents=[common], help="batch of escape-rate runs")
    s.add_argument("--dims", help="comma-separated d values")
    s.add_argument("--orders", help="comma-separated order presets")
    s.add_argument("--rules", help="comma-separated rules")
    s.add_argument("--workers", type=int)
    return p


def read_config(path: str) -> Dict[str, str]:
    """``key = value`` lines (``#`` comments) as a dict of strings."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    with open(path) as fh:
        cp.read_string("[run]\n" + fh.read())
    return {k.replace("-", "_"): v for k, v in cp["run"].items()}


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    ns = parser.parse_args(argv)
    if getattr(ns, "config", None):
        try:
            values = read_config(ns.config)
        except (OSError, configparser.Error) as exc:
            raise UsageError(f"cannot read config {ns.config}: {exc}") from exc
        sub = parser._subparsers._group_actions[0].choices[ns.command]  # type: ignore[union-attr]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for k, v in values.items():
            if k not in known:
                raise UsageError(f"unknown config key {k!r}")
            act = known[k]
            if act.type is not None:
                try:
                    defaults[k] = act.type(v)
                except ValueError as exc:
                    raise UsageError(f"bad value for {k}: {v!r}") from exc
            elif act.nargs == 0:
                defaults[k] = v.strip().lower() in ("1", "true", "yes", "on")
            else:
                defaults[k] = v
        sub.set_defaults(**defaults)
        ns = parser.parse_args(argv)
    return ns


def config_from_namespace(ns: argparse.Namespace) -> RunConfig:
    opts = {k: getattr(ns, k) for k in _OPTION_KEYS if getattr(ns, k, None) not in (None, False)}
    return RunConfig(ns.command, d=ns.d, order=ns.order, rule=ns.rule, n=ns.n, r=getattr(ns, "r", None),
                     checkpoints=ns.checkpoints, seed=ns.seed, out=ns.out, budget=ns.budget, options=opts)


def _error(kind: str, msg: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": msg, "exit_code": code}), file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = _apply_config(parser, argv)
        cfg = config_from_namespace(ns)
        if cfg.d is not None and cfg.d < 2:
            raise UsageError("--d must be >= 2")
        return COMMANDS[cfg.command](cfg)
    except UsageError as exc:
        return _error("usage", str(exc), EXIT_USAGE)
    except StepBudgetExceeded as exc:
        return _error("budget", str(exc), EXIT_BUDGET)
    except AssertionError as exc:
        return _error("assertion", str(exc), EXIT_FAIL)


if __name__ == "__main__":
    sys.exit(main())
