"""Command-line front end: ``simulate``, ``solve``, ``verify`` and ``list-scenarios``.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical
failure, 5 unparseable candidate file.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .calculus import BasisTransform, RegressionBasis
from .config import RunConfig, as_dict, load_config, load_scenario_file, parse_config
from .errors import ConfigError, TcvError
from .forward import ControlProcess, solve_fsvie
from .game import (GameScenario, NashCandidate, estimate_performance, find_nash, saddle_check,
                   sufficient_check)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_PARSE = 0, 2, 3, 4, 5

logger = logging.getLogger("tcvolterra")

SCENARIO_SUMMARY = {
    "decoupled-quadratic": "linear dynamics, quadratic running rewards; optimum c_k + beta_k",
    "quadratic-saddle": "zero-sum linear-quadratic game with an interior saddle point",
    "u-free": "controls enter nothing; every residual vanishes",
    "martingale-backward": "BSVIE with a martingale terminal value under F-level information",
    "jump-only": "pure-jump noise with a fading-memory drift kernel",
    "consumption-delay": "zero-sum consumption with delay and a linear terminal value",
    "recursive-utility": "consumption with recursive utility; optimum c = 1 / (T - t)",
}


class CandidateParseError(Exception):
    pass


# -- configuration ----------------------------------------------------------

def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else parse_config("")
    if args.scenario is not None:
        cfg.scenario = args.scenario
    if args.seed is not None:
        cfg.ensemble.seed = args.seed
    if args.paths is not None:
        cfg.ensemble.paths = args.paths
    if args.grid_n is not None:
        cfg.grid.N = args.grid_n
    if args.workers is not None:
        cfg.ensemble.workers = args.workers
    if args.out is not None:
        cfg.output.dir = args.out
    if args.format is not None:
        cfg.output.format = args.format
    if args.figures:
        cfg.output.figures = True
    return cfg.validate()


def _scenario_source(cfg: RunConfig) -> tuple:
    """``(builtin name, params)``; a selector ending in ``.yaml``/``.yml`` is a file."""
    from .scenarios import BUILTIN

    sel = cfg.scenario
    if sel in BUILTIN:
        return sel, dict(cfg.params)
    if sel.endswith((".yaml", ".yml")) or "/" in sel:
        if not Path(sel).is_file():
            raise FileNotFoundError(f"scenario file not found: {sel}")
        name, params = load_scenario_file(sel)
        params.update(cfg.params)
        if name not in BUILTIN:
            raise ConfigError(f"unknown built-in scenario {name!r}", key="builtin")
        return name, params
    raise ConfigError(f"unknown scenario {sel!r}; see list-scenarios", key="scenario")


def build_scenario(cfg: RunConfig, explicit_basis: bool = False) -> GameScenario:
    from .scenarios import BUILTIN

    name, params = _scenario_source(cfg)
    try:
        sc = BUILTIN[name](N=cfg.grid.N, T=cfg.grid.T, **params)
    except TypeError as exc:
        raise ConfigError(f"bad scenario parameters: {exc}", key="params") from None
    if explicit_basis:
        sc.basis = RegressionBasis(family=cfg.basis.family, degree=cfg.basis.degree,
                                   ridge=cfg.basis.ridge)
    return sc


def _metadata(cfg: RunConfig, name: str) -> dict:
    return {"scenario": name, "seed": cfg.ensemble.seed, "grid_T": cfg.grid.T,
            "grid_N": cfg.grid.N, "paths": cfg.ensemble.paths, "version": __version__}


# -- writers ----------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, meta: dict, header: list, rows) -> None:
    """Metadata comment line, header, then rows; ``'\\n'`` line endings."""
    buf = io.StringIO()
    buf.write("# " + ",".join(f"{k}={meta[k]}" for k in sorted(meta)) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    return obj


def write_json(path: Path, payload: dict) -> None:
    text = json.dumps(_jsonable(payload), sort_keys=True, indent=2, ensure_ascii=False)
    path.write_text(text + "\n", encoding="utf-8")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- candidate (de)serialisation ---------------------------------------------

def control_to_dict(ctl: Optional[ControlProcess]):
    if ctl is None:
        return None
    maps = []
    for tr in ctl.maps:
        maps.append(None if tr is None else {
            "center": tr.center, "scale": tr.scale, "active": tr.active,
            "terms": [list(map(int, t)) for t in tr.terms]})
    lvl = ctl.level
    return {"player": ctl.player, "box": list(ctl.box), "degree": ctl.basis.degree,
            "coef": ctl.coef, "maps": maps,
            "level": {"flow": lvl.flow, "states": list(lvl.states), "noise": lvl.noise,
                      "clock": lvl.clock, "extra": [name for name, _ in lvl.extra],
                      "projection": None if lvl.projection is None else list(lvl.projection)}}


def control_from_dict(d, scenario: GameScenario) -> Optional[ControlProcess]:
    if d is None:
        return None
    k = int(d["player"])
    base = scenario.players[k].level
    lv = d["level"]
    proj = lv.get("projection")
    level = replace(base, flow=lv["flow"], states=tuple(lv["states"]), noise=bool(lv["noise"]),
                    clock=bool(lv["clock"]), projection=None if proj is None else tuple(proj))
    coef = np.asarray(d["coef"], dtype=float)
    if coef.ndim != 2 or coef.shape[0] != scenario.grid.N:
        raise CandidateParseError("control coefficients do not match the grid")
    ctl = ControlProcess(k, level, scenario.grid.N, box=tuple(map(float, d["box"])),
                         degree=int(d["degree"]), coef=coef)
    maps = []
    for m in d["maps"]:
        if m is None:
            maps.append(None)
            continue
        maps.append(BasisTransform(ctl.basis, np.asarray(m["center"], dtype=float),
                                   np.asarray(m["scale"], dtype=float),
                                   np.asarray(m["active"], dtype=bool),
                                   [tuple(t) for t in m["terms"]]))
    ctl.maps = maps
    return ctl


def candidate_to_dict(cand: NashCandidate, meta: dict, cfg: RunConfig) -> dict:
    return {"metadata": meta, "config": as_dict(cfg),
            "controls": [control_to_dict(c) for c in cand.controls],
            "converged": cand.converged, "iterations": cand.iterations,
            "residual_norms": cand.residual_norms, "residual_profiles": cand.residual_profiles,
            "performance": {"J": cand.performance.J, "stderr": cand.performance.stderr},
            "trace": cand.trace}


def load_candidate(path, scenario: GameScenario) -> tuple:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CandidateParseError(f"malformed candidate JSON: {exc}") from None
    try:
        controls = tuple(control_from_dict(d, scenario) for d in data["controls"])
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise CandidateParseError(f"candidate file is missing or mangles {exc}") from None
    if len(controls) != 2:
        raise CandidateParseError("candidate must list two controls")
    return controls, data


# -- commands ---------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, explicit_basis: bool = False) -> list:
    """Noise ensemble and forward state under the initial controls, long format."""
    sc = build_scenario(cfg, explicit_basis)
    name = _scenario_source(cfg)[0]
    ens = sc.ensemble(cfg.ensemble.paths, cfg.ensemble.seed, cfg.ensemble.workers)
    fwd = solve_fsvie(sc.forward, sc.initial_controls(), ens, sc.x0)
    meta = _metadata(cfg, name)
    out = _out_dir(cfg)
    t = sc.grid.nodes
    clock, noise, X = ens.cum_lambda, ens.cum_noise, fwd.X
    M1 = noise.shape[2]
    files = []
    if cfg.output.format == "csv":
        header = ["path", "node", "t", "clock_B", "clock_H"] + [f"mu_{m}" for m in range(M1)] \
            + ["x"]

        def rows():
            for p in range(ens.n_paths):
                for i in range(sc.grid.N + 1):
                    yield [p, i, t[i], clock[p, i, 0], clock[p, i, 1], *noise[p, i], X[p, i]]

        path = out / "simulate.csv"
        write_csv(path, meta, header, rows())
    else:
        path = out / "simulate.json"
        write_json(path, {"metadata": meta, "t": t, "clock_B": clock[:, :, 0],
                          "clock_H": clock[:, :, 1], "mu": noise, "x": X})
    files.append(path)
    if cfg.output.figures:
        from .plots import plot_simulation
        files.append(plot_simulation(out / "simulate.png", t, X, clock, meta))
    return files


def cmd_solve(cfg: RunConfig, explicit_basis: bool = False) -> list:
    """Nash search; candidate JSON plus trace and residual tables."""
    sc = build_scenario(cfg, explicit_basis)
    name = _scenario_source(cfg)[0]
    ens = sc.ensemble(cfg.ensemble.paths, cfg.ensemble.seed, cfg.ensemble.workers)
    opt = cfg.optimizer
    cand = find_nash(sc, sc.initial_controls(), ens, step=opt.step, max_iter=opt.max_iter,
                     tol=opt.tol, newton=opt.newton)
    meta = _metadata(cfg, name)
    out = _out_dir(cfg)
    files = [out / "candidate.json"]
    write_json(files[0], candidate_to_dict(cand, meta, cfg))
    t = sc.grid.nodes
    trace_rows = [[r["iteration"], *r["residual_norms"], *r["J"]] for r in cand.trace]
    prof = np.asarray(cand.residual_profiles)
    if cfg.output.format == "csv":
        files.append(out / "trace.csv")
        write_csv(files[-1], meta, ["iteration", "residual_1", "residual_2", "J_1", "J_2"],
                  trace_rows)
        files.append(out / "residual.csv")
        write_csv(files[-1], meta, ["cell", "t", "residual_1", "residual_2"],
                  ([j, t[j], prof[0, j], prof[1, j]] for j in range(sc.grid.N)))
    else:
        files.append(out / "trace.json")
        write_json(files[-1], {"metadata": meta, "trace": cand.trace,
                               "residual_profiles": prof, "t": t[:-1]})
    if cfg.output.figures:
        from .plots import plot_solve
        files.append(plot_solve(out / "solve.png", t, cand.trace, prof, meta))
    return files


def _convex_phi(sc: GameScenario) -> GameScenario:
    """Designed failure: player 1's terminal reward becomes convex."""
    p1 = sc.players[0]
    bad = replace(p1, phi=lambda x: x**2, phi_dx=lambda x: 2 * x)
    return replace(sc, players=(bad,) + tuple(sc.players[1:]))


def _oracles(name: str, cfg: RunConfig, params: dict, candidate_controls) -> list:
    from . import scenarios as S

    if name == "consumption-delay":
        delay = S.delay_consumption(cfg.grid.N, cfg.grid.T, **params)
        return S.run_delay_consumption(delay, n_paths=cfg.ensemble.paths, seed=cfg.ensemble.seed,
                                  workers=cfg.ensemble.workers, probes=cfg.verify.probes)
    if name == "recursive-utility":
        recursive = S.recursive_utility(cfg.grid.N, cfg.grid.T, **params)
        results = S.run_recursive_utility(recursive, n_paths=cfg.ensemble.paths, seed=cfg.ensemble.seed,
                                     workers=cfg.ensemble.workers, search=False)
        if recursive.gamma == 0.0 and candidate_controls is not None:
            results.append(S.check_recursive_candidate(recursive, candidate_controls[0],
                                                 cfg.ensemble.paths, cfg.ensemble.seed,
                                                 cfg.ensemble.workers))
        return results
    return []


def cmd_verify(cfg: RunConfig, candidate_path, explicit_basis: bool = False) -> list:
    """Sufficient-condition probes, saddle check and scenario oracles."""
    sc = build_scenario(cfg, explicit_basis)
    name, params = _scenario_source(cfg)
    controls, data = load_candidate(candidate_path, sc)
    if cfg.verify.inject_convex_phi:
        sc = _convex_phi(sc)
    ens = sc.ensemble(cfg.ensemble.paths, cfg.ensemble.seed, cfg.ensemble.workers)
    perf = estimate_performance(sc, controls, ens)
    cand = NashCandidate(controls, data.get("residual_profiles", []),
                         data.get("residual_norms", []), perf, data.get("trace", []),
                         bool(data.get("converged", False)), int(data.get("iterations", 0)))
    checks = []
    suff = sufficient_check(sc, cand, ens, probes=cfg.verify.probes, seed=cfg.ensemble.seed)
    checks.append({"name": "sufficient", "passed": suff["violations"] == 0,
                   "margin": -float(suff["violations"]), "detail": suff})
    if sc.zero_sum:
        sad = saddle_check(sc, cand, ens, probes=cfg.verify.probes, seed=cfg.ensemble.seed)
        checks.append({"name": "saddle", "passed": sad["violations"] == 0 and sad["minimax_ok"],
                       "margin": -sad["worst_margin"], "detail": sad})
    if cfg.verify.oracles:
        for r in _oracles(name, cfg, params, controls):
            checks.append({"name": r.name, "passed": r.passed, "margin": r.margin,
                           "detail": r.to_dict()})
    meta = _metadata(cfg, name)
    out = _out_dir(cfg)
    report = {"metadata": meta, "candidate": str(candidate_path),
              "inject_convex_phi": cfg.verify.inject_convex_phi,
              "performance": {"J": perf.J, "stderr": perf.stderr},
              "checks": checks, "passed": all(c["passed"] for c in checks)}
    path = out / "verify.json"
    write_json(path, report)
    for c in checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['name']}")
    return [path]


def cmd_list_scenarios() -> list:
    from .scenarios import BUILTIN

    for name in BUILTIN:
        print(f"{name:22s} {SCENARIO_SUMMARY.get(name, '')}")
    return []


# -- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tcvolterra", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--scenario", help="built-in name or scenario file")
    common.add_argument("--seed", type=int)
    common.add_argument("--paths", type=int)
    common.add_argument("--grid-n", type=int, dest="grid_n")
    common.add_argument("--out")
    common.add_argument("--workers", type=int)
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("--figures", action="store_true", help="also write PNG figures")
    common.add_argument("-v", "--verbose", action="store_true")
    sub.add_parser("simulate", parents=[common], help="simulate noise and forward state")
    sub.add_parser("solve", parents=[common], help="search for a Nash equilibrium")
    pv = sub.add_parser("verify", parents=[common], help="check a candidate")
    pv.add_argument("--candidate", required=True, help="candidate JSON from solve")
    sub.add_parser("list-scenarios", help="list built-in scenarios")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-scenarios":
        cmd_list_scenarios()
        return EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve_config(args)
        explicit_basis = bool(args.config) and "basis" in cfg.explicit
        if args.command == "simulate":
            files = cmd_simulate(cfg, explicit_basis)
        elif args.command == "solve":
            files = cmd_solve(cfg, explicit_basis)
        else:
            files = cmd_verify(cfg, args.candidate, explicit_basis)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CandidateParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TcvError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for f in files:
        print(f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
