"""Command-line entry point.

Configuration is resolved in increasing precedence: built-in defaults, a
flat ``key=value`` file (``--config``), ``NETFP_<KEY>`` environment
variables, then command-line flags.  Keys::

    command       run | sweep | verify-weights | reproduce
    scenario      reference | generated | path to a scenario JSON
    n             UAV count for generated scenarios and verify-weights
    scenario_seed position seed for generated scenarios
    topology      complete | line | star | ring
    algo          central-jsfp | djsfp | central-fp | dfp
    alpha, rho    fading step in (0, 1], inertia in (0, 1)
    t_max, runs, seed, jobs
    out           output directory
    alpha_grid, rho_grid   comma-separated sweep values
    graph, weights         edge-list and weight files for verify-weights

Exit status: 0 on success, 1 when a validation or reproduction check
fails, 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

from netfp import csvio
from netfp.consensus import (
    TOPOLOGIES,
    CommGraph,
    DSMatrix,
    FPWeightSet,
    build_doubly_stochastic,
    build_fp_weights,
    load_weights,
    make_topology,
    verify_doubly_stochastic,
    verify_fp_weight_conditions,
)
from netfp.dynamics import DynamicsConfig
from netfp.errors import ConstructionFailedError, NetFPError
from netfp.experiments import (
    ALGORITHMS,
    TopologySpec,
    load_reference_scenario,
    load_scenario,
    make_uav_game,
    parameter_sweep,
    run_ensemble,
    topology_comparison,
    write_summary,
    write_sweep,
    write_traces,
    write_welfare_trace,
)

COMMANDS = ("run", "sweep", "verify-weights", "reproduce")
ENV_PREFIX = "NETFP_"

# average convergence time of D-JSFP at alpha = 0.2, by inertia
REFERENCE_TIMES = {
    "complete": {0.2: 22, 0.4: 22, 0.6: 25, 0.8: 38},
    "line": {0.2: 146, 0.4: 148, 0.6: 162, 0.8: 104},
    "star": {0.2: 404, 0.4: 430, 0.6: 364, 0.8: 245},
    "ring": {0.2: 30, 0.4: 33, 0.6: 34, 0.8: 37},
}
GRID_RHOS = (0.2, 0.4, 0.6, 0.8)
ORDER = ("complete", "ring", "line", "star")


class UsageError(NetFPError):
    pass


def _grid(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


@dataclass(frozen=True)
class CliConfig:
    command: str = "run"
    scenario: str = "reference"
    n: int = 5
    scenario_seed: int = 0
    topology: str = "ring"
    algo: str = "djsfp"
    alpha: float = 0.2
    rho: float = 0.2
    t_max: int = 100_000
    runs: int = 50
    seed: int = 0
    jobs: int = 1
    out: str = "out"
    alpha_grid: str = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"
    rho_grid: str = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"
    graph: str = ""
    weights: str = ""

    def validate(self) -> "CliConfig":
        def bad(key, why):
            raise UsageError(f"{key}: {why}")

        if self.command not in COMMANDS:
            bad("command", f"must be one of {', '.join(COMMANDS)}")
        if self.topology not in TOPOLOGIES:
            bad("topology", f"must be one of {', '.join(TOPOLOGIES)}")
        if self.algo not in ALGORITHMS:
            bad("algo", f"must be one of {', '.join(ALGORITHMS)}")
        if not 0.0 < self.alpha <= 1.0:
            bad("alpha", f"{self.alpha} outside (0, 1]")
        if not 0.0 < self.rho < 1.0:
            bad("rho", f"{self.rho} outside (0, 1)")
        for key in ("n", "t_max", "runs", "jobs"):
            if getattr(self, key) < 1:
                bad(key, "must be >= 1")
        for key in ("seed", "scenario_seed"):
            if getattr(self, key) < 0:
                bad(key, "must be >= 0")
        for key in ("alpha_grid", "rho_grid"):
            try:
                vals = _grid(getattr(self, key))
            except ValueError:
                bad(key, "expected comma-separated numbers")
            if not vals or any(not 0.0 < v < 1.0 for v in vals):
                bad(key, "values must lie in (0, 1)")
        if self.scenario == "reference" and self.n != 5 and self.command != "verify-weights":
            bad("n", "the reference scenario has 5 UAVs; use scenario=generated for other sizes")
        return self

    def dynamics(self, **over) -> DynamicsConfig:
        base = dict(alpha=self.alpha, rho=self.rho, t_max=self.t_max, seed=self.seed)
        base.update(over)
        return DynamicsConfig(**base)

    def stamp(self, **over) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("out", "jobs")}
        d.update(over)
        return d


KEYS = {f.name: f.type for f in fields(CliConfig)}
_CASTS = {"int": int, "float": float, "str": str}


def _coerce(key: str, raw):
    if key not in KEYS:
        raise UsageError(f"unknown configuration key {key!r}")
    cast = _CASTS[KEYS[key]]
    try:
        return cast(raw)
    except (TypeError, ValueError):
        raise UsageError(f"{key}: cannot parse {raw!r} as {KEYS[key]}") from None


def _normalize(key: str) -> str:
    return key.strip().lower().replace("-", "_")


def read_config_file(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        key = _normalize(key)
        out[key] = _coerce(key, value.strip())
    return out


def read_env(environ) -> dict:
    out = {}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            key = _normalize(name[len(ENV_PREFIX):])
            out[key] = _coerce(key, value)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="netfp", description="Networked fictitious-play experiments.")
    p.add_argument("command_pos", nargs="?", choices=COMMANDS, metavar="COMMAND",
                   help="one of: " + ", ".join(COMMANDS))
    p.add_argument("--config", help="flat key=value configuration file")
    for key, typ in KEYS.items():
        flag = "--" + key.replace("_", "-")
        p.add_argument(flag, dest=key, type=_CASTS[typ], default=None)
    return p


def parse_config(argv=None, environ=None) -> CliConfig:
    args = build_parser().parse_args(argv)
    values = {}
    if args.config:
        try:
            values.update(read_config_file(args.config))
        except OSError as exc:
            raise UsageError(f"config: {exc}") from None
    values.update(read_env(os.environ if environ is None else environ))
    flags = {k: v for k, v in vars(args).items() if k in KEYS and v is not None}
    values.update(flags)
    if args.command_pos:
        values["command"] = args.command_pos
    return CliConfig(**values).validate()


# -- commands -----------------------------------------------------------------

def _scenario(cfg: CliConfig):
    if cfg.scenario == "reference":
        return load_reference_scenario()
    if cfg.scenario == "generated":
        return make_uav_game(cfg.n, seed=cfg.scenario_seed)
    return load_scenario(cfg.scenario)


def cmd_run(cfg: CliConfig, out: Path) -> int:
    scenario = _scenario(cfg)
    res = run_ensemble(scenario, TopologySpec(cfg.topology, scenario.n), cfg.algo,
                       cfg.dynamics(), cfg.runs, cfg.jobs)
    stamp = cfg.stamp()
    write_summary(out / "summary.csv", [res], stamp)
    write_welfare_trace(out / "welfare_trace.csv", [res], stamp)
    write_traces(out / "traces.csv", res.traces, stamp)
    print(f"{cfg.algo} on {cfg.topology}: mean convergence time {res.mean_convergence_time:.2f} "
          f"(sd {res.sd_convergence_time:.2f}), absorbed {res.absorbed_fraction:.0%}")
    return 0


def cmd_sweep(cfg: CliConfig, out: Path) -> int:
    scenario = _scenario(cfg)
    cells = parameter_sweep(scenario, TopologySpec(cfg.topology, scenario.n), _grid(cfg.alpha_grid),
                            _grid(cfg.rho_grid), cfg.runs, cfg.dynamics(), cfg.algo, cfg.jobs)
    write_sweep(out / "sweep.csv", cells, cfg.stamp())
    for c in cells:
        flag = "  (high alpha, low rho)" if c.flagged else ""
        print(f"alpha={c.alpha:g} rho={c.rho:g}: {c.mean_convergence_time:.2f}{flag}")
    return 0


def _print_report(title, report) -> None:
    print(f"{title}: {'PASS' if report.ok else 'FAIL'}")
    for c in report.checks:
        extra = f" ({c.witness})" if c.witness else ""
        mark = "ok  " if c.passed else ("note" if c.advisory else "FAIL")
        print(f"  {mark} {c.name}{extra}")
    for name, lam in report.lambdas.items():
        print(f"  lambda[{name}] = {lam:.6f}")


def cmd_verify_weights(cfg: CliConfig, out: Optional[Path] = None) -> int:
    if cfg.graph:
        graph = CommGraph.from_edge_list(Path(cfg.graph).read_text())
    else:
        graph = make_topology(cfg.topology, cfg.n)
    reports = {}
    if cfg.weights:
        w = load_weights(cfg.weights)
        if isinstance(w, FPWeightSet):
            reports["fp"] = verify_fp_weight_conditions(w, graph)
        elif isinstance(w, DSMatrix):
            reports["ds"] = verify_doubly_stochastic(w, graph)
    else:
        for name, build, verify in (("fp", build_fp_weights, verify_fp_weight_conditions),
                                    ("ds", build_doubly_stochastic, verify_doubly_stochastic)):
            try:
                reports[name] = verify(build(graph), graph)
            except ConstructionFailedError as exc:
                print(f"{name}: construction failed: {exc.condition}: {exc}")
                return 1
    titles = {"fp": "FP leader-tracking weights", "ds": "doubly stochastic weights"}
    for name, report in reports.items():
        _print_report(titles[name], report)
    return 0 if all(r.ok for r in reports.values()) else 1


def _band(target: float) -> tuple[float, float]:
    return target / 2.0, target * 2.0


def cmd_reproduce(cfg: CliConfig, out: Path) -> int:
    """Topology-by-inertia grid and the welfare comparison on the shipped scenario."""
    scenario = _scenario(cfg)
    welfare_rho = cfg.rho if cfg.rho in GRID_RHOS else GRID_RHOS[0]
    summary, cells = [], []
    for rho in GRID_RHOS:
        comp = topology_comparison(scenario, cfg.dynamics(rho=rho), cfg.runs, topologies=ORDER, jobs=cfg.jobs)
        summary.extend(comp.results[k] for k in ORDER)
        if rho == welfare_rho:
            welfare_results = comp
        for kind in ORDER:
            measured = comp.results[kind].mean_convergence_time
            lo, hi = _band(REFERENCE_TIMES[kind][rho])
            cells.append({"topology": kind, "alpha": cfg.alpha, "rho": rho, "target": REFERENCE_TIMES[kind][rho],
                          "measured": measured, "band": [lo, hi], "in_band": lo <= measured <= hi,
                          "absorbed_fraction": comp.results[kind].absorbed_fraction})
    stamp = cfg.stamp()
    write_summary(out / "summary.csv", summary, stamp)
    write_welfare_trace(out / "welfare_trace.csv", list(welfare_results.results.values()), stamp)

    first = {k: r.mean_normalized_welfare[0] for k, r in welfare_results.results.items()}
    terminal = {k: r.terminal_welfare for k, r in welfare_results.results.items()}
    central = next(c for c in cells if c["topology"] == "complete" and c["rho"] == 0.2)
    checks = {
        "ordering complete < ring < line < star": welfare_results.ordering_holds(ORDER),
        "complete mean in [11, 44] at rho=0.2": 11.0 <= central["measured"] <= 44.0,
        "terminal welfare spread < 0.05": welfare_results.terminal_welfare_spread() < 0.05,
        "terminal welfare above round 1": all(terminal[k] > first[k] for k in terminal),
        "all runs absorbed": all(c["absorbed_fraction"] == 1.0 for c in cells),
    }
    report = {
        "config": stamp,
        "welfare_rho": welfare_rho,
        "ordering": welfare_results.ordering(),
        "terminal_normalized_welfare": terminal,
        "first_round_normalized_welfare": first,
        "cells": cells,
        "checks": checks,
        "ok": all(checks.values()),
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, default=float) + "\n")
    for c in cells:
        mark = "in band" if c["in_band"] else "outside band"
        print(f"{c['topology']:>8} rho={c['rho']:.1f}: {c['measured']:8.1f} vs {c['target']:>3} ({mark})")
    for name, passed in checks.items():
        print(f"{'PASS' if passed else 'FAIL'} {name}")
    return 0 if report["ok"] else 1


HANDLERS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "verify-weights": cmd_verify_weights,
    "reproduce": cmd_reproduce,
}


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except UsageError as exc:
        print(f"netfp: usage error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    try:
        if cfg.command != "verify-weights":
            out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[cfg.command](cfg, out)
    except ConstructionFailedError as exc:
        print(f"netfp: construction failed ({exc.condition}): {exc}", file=sys.stderr)
        return 1
    except NetFPError as exc:
        print(f"netfp: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
