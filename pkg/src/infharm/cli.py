"""Command-line entry point: ``infharm {residual,variational,diffuse,profile} --config RUN.json``.

Exit codes: 0 when the check passes, 1 when it fails, 2 for usage or
configuration errors. Every output document embeds the resolved
configuration (defaults filled in) and the seed.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .diffuse import d_solution_field_check, default_schedule
from .errors import ConfigError, InfHarmError
from .functionals import AffineMap, default_t_grid, variation_profile
from .grid import SubdomainSpec, build_domain, sample_analytic
from .io import read_gridmap, write_csv, write_field, write_json
from .operators import OperatorId, gradient_norm_minima, residual_field
from .solutions import make_solution, perturb
from .solver import SolverConfig, p_harmonic_solve
from .variations import (
    FAMILY_TAGS,
    BoxSampler,
    analytic_candidates,
    build_family,
    characterization_verdict,
    default_lambdas,
    discrete_candidates,
)

log = logging.getLogger("infharm")

DEFAULTS = {
    "seed": 0,
    "operator": "infinity_full",
    "tolerances": {
        "residual": 1e-8,
        "rank_tol": 1e-10,
        "blowup": 1e6,
        "slack_rel": 1e-8,
        "argmax_rel": 1e-6,
    },
    "residual": {"band": 0.0},
    "variational": {
        "family": "A_plus_inf",
        "candidates": "analytic",
        "p": None,
        "n_subdomains": 50,
        "margin_cells": 2,
        "min_side_cells": 6,
        "lambdas": None,
        "xi": None,
    },
    "diffuse": {
        "schedule": None,
        "cluster_eps": None,
        "tail_fraction": 0.5,
        "kappa": 0.01,
        "threshold": 1e-3,
        "nodes": None,
    },
    "profile": {"affine": None, "subdomain": None, "t_grid": None},
}


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {str(path)!r} not found")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict) or "input" not in raw:
        raise ConfigError("config must be an object with an 'input' entry")
    cfg = _merge(DEFAULTS, raw)
    cfg["_base"] = str(path.parent)
    for k, v in cfg["tolerances"].items():
        if not (isinstance(v, (int, float)) and v > 0):
            raise ConfigError(f"tolerance {k!r} must be positive")
    return cfg


def _resolve_path(cfg: dict, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else Path(cfg["_base"]) / p


def _domain(cfg: dict):
    d = cfg.get("domain")
    if d is None:
        raise ConfigError("'domain' is required for corpus and solver inputs")
    return build_domain(d["bounds"], d["resolution"])


def load_input(cfg: dict):
    """Build the GridMap described by ``cfg['input']``; returns ``(u, extra_log)``."""
    spec = cfg["input"]
    if "gridmap" in spec:
        return read_gridmap(_resolve_path(cfg, spec["gridmap"])), {}
    if "corpus" in spec:
        dom = _domain(cfg)
        sol = make_solution(spec["corpus"], **spec.get("params", {}))
        if "perturb" in spec:
            pt = spec["perturb"]
            u = perturb(sol, pt["center"], pt["radius"], pt["amplitude"], domain=dom)
        else:
            u = sample_analytic(sol, dom, acknowledge_singular=spec.get("acknowledge_singular", False))
        return u, {}
    if "solver" in spec:
        s = dict(spec["solver"])
        dom = _domain(cfg)
        bnd = s.pop("boundary")
        if "gridmap" in bnd:
            boundary = read_gridmap(_resolve_path(cfg, bnd["gridmap"]))
        else:
            boundary = sample_analytic(make_solution(bnd["corpus"], **bnd.get("params", {})), dom,
                                       acknowledge_singular=bnd.get("acknowledge_singular", False))
        res = p_harmonic_solve(dom, boundary, SolverConfig(**s))
        return res.u, {"solver": res.log()}
    raise ConfigError("input must name 'corpus', 'gridmap' or 'solver'")


def _public(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


def cmd_residual(cfg: dict, out: Path) -> int:
    u, extra = load_input(cfg)
    tol = cfg["tolerances"]
    op = OperatorId.parse(cfg["operator"])
    cfg["operator"] = str(op)
    res, valid = residual_field(u, op, tol["rank_tol"], tol["blowup"])
    band = u.domain.interior_band(cfg["residual"]["band"]) if cfg["residual"]["band"] > 0 \
        else np.ones(u.domain.shape, bool)
    sel = valid & band
    vals = res[sel]
    mx = float(vals.max()) if vals.size else 0.0
    passed = bool(vals.size == 0 or mx <= tol["residual"])
    write_field(out / "residual.csv", u.domain, {"residual": np.nan_to_num(res, nan=-1.0),
                                                 "valid": valid.astype(int)})
    summary = {
        "config": _public(cfg),
        "seed": cfg["seed"],
        "operator": str(op),
        "max": mx,
        "mean": float(vals.mean()) if vals.size else 0.0,
        "masked_fraction": float(1.0 - valid.mean()),
        "threshold": tol["residual"],
        "gradient_norm_minima": gradient_norm_minima(u).tolist(),
        "passed": passed,
        **extra,
    }
    write_json(out / "residual_summary.json", summary)
    log.info("residual max %.3e (threshold %.1e)", mx, tol["residual"])
    return 0 if passed else 1


def _candidate_source(kind: str, u):
    if kind == "analytic":
        if u.source is None:
            raise ConfigError("analytic candidates need a corpus input")
        return analytic_candidates(u.source)
    if kind == "discrete":
        return discrete_candidates(u)
    raise ConfigError(f"unknown candidate source {kind!r}")


def cmd_variational(cfg: dict, out: Path) -> int:
    v = cfg["variational"]
    tol = cfg["tolerances"]
    if int(v["n_subdomains"]) < 1:
        raise ConfigError("n_subdomains must be at least 1")
    tags = v["family"] if isinstance(v["family"], list) else [v["family"]]
    for t in tags:
        if t not in FAMILY_TAGS:
            raise ConfigError(f"unknown family {t!r}")
    if v["lambdas"] is None:
        v["lambdas"] = default_lambdas().tolist()
    u, extra = load_input(cfg)
    cand = _candidate_source(v["candidates"], u) if any(t != "A_inf_c2" for t in tags) else None
    sampler = BoxSampler(u.domain, cfg["seed"], v["margin_cells"], v["min_side_cells"])

    def builder(u, sub):
        return [build_family(t, u, sub, cand, p=v["p"], xi_samples=v["xi"], rel_tol=tol["argmax_rel"])
                for t in tags]

    verdict = characterization_verdict(u, sampler, builder, v["lambdas"], int(v["n_subdomains"]),
                                       tol["slack_rel"])
    rows = [(s, r.family, r.member, r.anchor, r.xi, r.lam, r.sup_norm, r.varied_norm, r.slack,
             r.tol, r.passed) for s, r in verdict.reports]
    write_csv(out / "reports.csv", ["subdomain", "family", "member", "anchor", "xi", "lambda",
                                    "sup_norm", "varied_norm", "slack", "tol", "passed"], rows)
    write_json(out / "verdict.json", {"config": _public(cfg), "seed": cfg["seed"],
                                      **verdict.to_dict(), **extra})
    log.info("verdict consistent=%s min slack %.3e", verdict.consistent, verdict.min_slack)
    return 0 if verdict.consistent else 1


def cmd_diffuse(cfg: dict, out: Path) -> int:
    d = cfg["diffuse"]
    tol = cfg["tolerances"]
    u, extra = load_input(cfg)
    op = OperatorId.parse(cfg["operator"])
    cfg["operator"] = str(op)
    if d["schedule"] is None:
        d["schedule"] = default_schedule(u).tolist()
    if d["cluster_eps"] is None:
        d["cluster_eps"] = 10.0 * float(u.domain.spacing.max())
    nodes = None
    if d["nodes"] is not None:
        nodes = np.asarray([u.domain.nearest_node(x) for x in d["nodes"]], dtype=np.int64)
    fc = d_solution_field_check(u, op, nodes, d["schedule"], d["threshold"], d["kappa"],
                                d["cluster_eps"], d["tail_fraction"], tol["blowup"], tol["rank_tol"],
                                keep_supports=True)
    dump = []
    for m, node in enumerate(fc.nodes):
        dump.append({"node": int(node), "point": u.domain.coordinates(int(node)).tolist(),
                     "residual": float(fc.residuals[m]), **fc.supports[m].to_dict()})
    write_json(out / "supports.json", {"seed": cfg["seed"], "schedule": d["schedule"], "nodes": dump})
    write_json(out / "diffuse_verdict.json", {"config": _public(cfg), "seed": cfg["seed"],
                                              **fc.summary(), **extra})
    log.info("D-solution check passed=%s", fc.passed)
    return 0 if fc.passed else 1


def cmd_profile(cfg: dict, out: Path) -> int:
    pr = cfg["profile"]
    if pr["affine"] is None:
        raise ConfigError("profile needs an 'affine' map")
    if pr["t_grid"] is None:
        pr["t_grid"] = default_t_grid().tolist()
    t = np.asarray(pr["t_grid"], dtype=float)
    if t.ndim != 1 or t.size == 0 or t[0] != 0 or np.any(np.diff(t) <= 0):
        raise ConfigError("t_grid must start at 0 and increase strictly")
    u, extra = load_input(cfg)
    A = AffineMap.from_dict(pr["affine"])
    sub = SubdomainSpec.from_dict(pr["subdomain"]) if pr["subdomain"] else None
    prof = variation_profile(u, A, sub, t)
    write_csv(out / "profile.csv", ["t", "h"], zip(prof.t_grid, prof.values))
    write_json(out / "profile_summary.json", {"config": _public(cfg), "seed": cfg["seed"],
                                              **prof.summary(), **extra})
    return 0


COMMANDS = {
    "residual": cmd_residual,
    "variational": cmd_variational,
    "diffuse": cmd_diffuse,
    "profile": cmd_profile,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="infharm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default="./out", help="output directory (default ./out)")
        p.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except (InfHarmError, KeyError, TypeError) as exc:
        print(f"infharm: configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
