"""UAV target-assignment study: scenarios, ensembles, topology and parameter sweeps."""

from __future__ import annotations

import json
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from netfp import csvio
from netfp.consensus import TOPOLOGIES, CommGraph, build_doubly_stochastic, build_fp_weights, make_topology
from netfp.dynamics import (
    DynamicsConfig,
    RunTrace,
    run_dfp,
    run_djsfp,
    run_fp_inertia,
    run_jsfp_central,
)
from netfp.errors import ConstructionFailedError, InvalidArgumentError
from netfp.games import DEFAULT_CAP, CongestionFormGame, NormalFormGame, to_normal_form
from netfp.errors import ResourceLimitError

ALGORITHMS = ("central-jsfp", "djsfp", "central-fp", "dfp")
FLAG_ALPHA = 0.7
FLAG_RHO = 0.3


@dataclass(frozen=True, eq=False)
class UavScenario:
    n: int
    distances: np.ndarray
    game: CongestionFormGame
    uav_positions: Optional[np.ndarray] = None
    object_positions: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        out = {"n": self.n}
        if self.uav_positions is not None:
            out["uav_positions"] = self.uav_positions.tolist()
            out["object_positions"] = self.object_positions.tolist()
        else:
            out["distances"] = self.distances.tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "UavScenario":
        if "distances" in data:
            return make_uav_game(int(data["n"]), distances=data["distances"])
        return make_uav_game(
            int(data["n"]),
            uav_positions=data["uav_positions"],
            object_positions=data["object_positions"],
        )


def uav_game(distances) -> CongestionFormGame:
    """Each UAV picks one object; it earns ``1/d(i, k)`` only when alone on ``k``."""
    d = np.asarray(distances, dtype=float)
    n = d.shape[0]
    rule = np.zeros((n, n + 1))
    rule[:, 1] = 1.0
    actions = [[(k,) for k in range(n)] for _ in range(n)]
    return CongestionFormGame(n, actions, 1.0 / d, rule)


def make_uav_game(n: int, seed: Optional[int] = None, uav_positions=None, object_positions=None,
                  distances=None) -> UavScenario:
    """Target-assignment scenario with ``n`` UAVs and ``n`` objects.

    Positions are drawn uniformly from the unit square unless given; an
    explicit distance matrix bypasses geometry altogether.
    """
    if n < 1:
        raise InvalidArgumentError("need at least one UAV")
    if distances is not None:
        d = np.array(distances, dtype=float)
        if d.shape != (n, n) or np.any(d <= 0):
            raise InvalidArgumentError("distances must be a positive n x n matrix")
        return UavScenario(n, d, uav_game(d))
    if uav_positions is not None or object_positions is not None:
        u = np.array(uav_positions, dtype=float)
        o = np.array(object_positions, dtype=float)
        if u.shape != (n, 2) or o.shape != (n, 2):
            raise InvalidArgumentError("positions must have shape (n, 2)")
        d = np.linalg.norm(u[:, None, :] - o[None, :, :], axis=2)
        if np.any(d <= 0):
            raise ConstructionFailedError("a UAV coincides with an object", condition="positive_distance")
        return UavScenario(n, d, uav_game(d), u, o)
    rng = np.random.default_rng(seed)
    for _ in range(100):
        u = rng.random((n, 2))
        o = rng.random((n, 2))
        d = np.linalg.norm(u[:, None, :] - o[None, :, :], axis=2)
        if np.all(d > 0):
            return UavScenario(n, d, uav_game(d), u, o)
    raise ConstructionFailedError("positions coincide after 100 resamples", condition="positive_distance")


def load_reference_scenario() -> UavScenario:
    """The shipped 5-UAV scenario with fixed positions."""
    text = resources.files("netfp").joinpath("data/reference_scenario.json").read_text()
    return UavScenario.from_dict(json.loads(text))


def load_scenario(path) -> UavScenario:
    return UavScenario.from_dict(json.loads(Path(path).read_text()))


# -- welfare ------------------------------------------------------------------

def welfare(game, profile) -> float:
    return math.fsum(game.payoff(i, profile) for i in range(game.n))


def welfare_table(game, cap=DEFAULT_CAP) -> np.ndarray:
    """Welfare of every joint action, indexed like the payoff tensor."""
    nf = to_normal_form(game, cap) if isinstance(game, CongestionFormGame) else game
    if nf.num_profiles > cap:
        raise ResourceLimitError(f"{nf.num_profiles} joint actions exceed cap {cap}")
    return nf.utilities.sum(axis=0)


def optimal_welfare(game, cap=DEFAULT_CAP) -> float:
    return float(welfare_table(game, cap).max())


# -- ensembles ----------------------------------------------------------------

@dataclass(frozen=True)
class TopologySpec:
    kind: str
    n: int

    def __post_init__(self):
        if self.kind not in TOPOLOGIES:
            raise InvalidArgumentError(f"unknown topology {self.kind!r}; choose from {TOPOLOGIES}")

    def build(self) -> CommGraph:
        return make_topology(self.kind, self.n)


@dataclass
class EnsembleResult:
    topology: str
    algo: str
    cfg: DynamicsConfig
    runs: int
    optimal_welfare: float
    traces: list
    convergence_times: list
    mean_convergence_time: float
    sd_convergence_time: float
    absorbed_fraction: float
    mean_normalized_welfare: np.ndarray = field(repr=False)

    @property
    def terminal_welfare(self) -> float:
        return float(self.mean_normalized_welfare[-1])

    def summary_row(self) -> list:
        return [self.topology, self.cfg.alpha, self.cfg.rho, self.runs,
                self.mean_convergence_time, self.sd_convergence_time, self.absorbed_fraction]


class _Runner:
    """Picklable single-run closure for one (scenario, topology, algorithm)."""

    def __init__(self, scenario: UavScenario, topology: TopologySpec, algo: str):
        if algo not in ALGORITHMS:
            raise InvalidArgumentError(f"unknown algorithm {algo!r}; choose from {ALGORITHMS}")
        self.game = scenario.game
        self.algo = algo
        self.graph = topology.build()
        self.welfare = welfare_table(self.game)
        if algo in ("central-fp", "dfp"):
            self.nf = to_normal_form(self.game)
        if algo == "dfp":
            self.weights = build_fp_weights(self.graph)
        elif algo == "djsfp":
            self.weights = build_doubly_stochastic(self.graph)

    def __call__(self, cfg: DynamicsConfig) -> RunTrace:
        if self.algo == "central-jsfp":
            trace = run_jsfp_central(self.game, cfg)
        elif self.algo == "djsfp":
            trace = run_djsfp(self.game, self.graph, self.weights, cfg)
        elif self.algo == "central-fp":
            trace = run_fp_inertia(self.nf, cfg)
        else:
            trace = run_dfp(self.nf, self.graph, self.weights, cfg)
        trace.welfare = self.welfare[tuple(trace.actions.T)]
        return trace


def aggregate(traces: Sequence[RunTrace], optimum: float):
    """Convergence statistics and per-round mean normalized welfare.

    Shorter traces are padded with their last welfare value (a run stops
    only once absorbed).  Sums are taken over sorted values so the result
    does not depend on run order.
    """
    times = [tr.absorbed_at for tr in traces]
    done = sorted(t for t in times if t is not None)
    mean = statistics.fmean(done) if done else math.nan
    sd = statistics.stdev(done) if len(done) > 1 else (0.0 if done else math.nan)
    frac = len(done) / len(traces)
    length = max(tr.length for tr in traces)
    padded = np.empty((len(traces), length))
    for row, tr in zip(padded, traces):
        row[: tr.length] = tr.welfare
        row[tr.length:] = tr.welfare[-1]
    normalized = padded / optimum
    mean_welfare = np.sort(normalized, axis=0).sum(axis=0) / len(traces)
    return times, mean, sd, frac, mean_welfare


def run_ensemble(scenario: UavScenario, topology: TopologySpec, algo: str, cfg: DynamicsConfig,
                 runs: int, jobs: int = 1) -> EnsembleResult:
    """``runs`` independent runs with seeds ``cfg.seed + r``."""
    if runs < 1:
        raise InvalidArgumentError("runs must be >= 1")
    runner = _Runner(scenario, topology, algo)
    cfgs = [replace(cfg, seed=cfg.seed + r) for r in range(runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            traces = list(pool.map(runner, cfgs, chunksize=max(1, runs // (4 * jobs))))
    else:
        traces = [runner(c) for c in cfgs]
    optimum = float(runner.welfare.max())
    times, mean, sd, frac, mean_welfare = aggregate(traces, optimum)
    return EnsembleResult(topology.kind, algo, cfg, runs, optimum, traces, times, mean, sd, frac, mean_welfare)


@dataclass
class TopologyComparison:
    results: dict

    def means(self) -> dict:
        return {k: r.mean_convergence_time for k, r in self.results.items()}

    def ordering(self) -> list[str]:
        """Topologies from fastest to slowest mean convergence."""
        means = self.means()
        return sorted(means, key=means.__getitem__)

    def ordering_holds(self, expected=("complete", "ring", "line", "star")) -> bool:
        means = self.means()
        vals = [means[k] for k in expected]
        return all(a < b for a, b in zip(vals, vals[1:]))

    def terminal_welfare_spread(self) -> float:
        vals = [r.terminal_welfare for r in self.results.values()]
        return max(vals) - min(vals)


def topology_comparison(scenario: UavScenario, cfg: DynamicsConfig, runs: int, algo: str = "djsfp",
                        topologies=TOPOLOGIES, jobs: int = 1) -> TopologyComparison:
    return TopologyComparison({
        kind: run_ensemble(scenario, TopologySpec(kind, scenario.n), algo, cfg, runs, jobs)
        for kind in topologies
    })


@dataclass(frozen=True)
class SweepCell:
    alpha: float
    rho: float
    mean_convergence_time: float
    sd: float
    absorbed_fraction: float

    @property
    def flagged(self) -> bool:
        """High fading step with low inertia, the slow corner of the grid."""
        return self.alpha > FLAG_ALPHA and self.rho < FLAG_RHO


def default_grid() -> list[float]:
    return [round(0.1 * k, 1) for k in range(1, 10)]


def parameter_sweep(scenario: UavScenario, topology: TopologySpec, alpha_grid, rho_grid, runs: int,
                    cfg: Optional[DynamicsConfig] = None, algo: str = "djsfp", jobs: int = 1) -> list[SweepCell]:
    cfg = cfg or DynamicsConfig()
    for x in list(alpha_grid) + list(rho_grid):
        if not 0.0 < x < 1.0:
            raise InvalidArgumentError(f"grid value {x} outside (0, 1)")
    cells = []
    for alpha in alpha_grid:
        for rho in rho_grid:
            res = run_ensemble(scenario, topology, algo, replace(cfg, alpha=alpha, rho=rho), runs, jobs)
            cells.append(SweepCell(alpha, rho, res.mean_convergence_time, res.sd_convergence_time,
                                   res.absorbed_fraction))
    return cells


# -- CSV artifacts ------------------------------------------------------------

def write_welfare_trace(path, results: Sequence[EnsembleResult], stamp: dict):
    def rows():
        for res in results:
            for run_id, tr in enumerate(res.traces):
                for t, w in enumerate(tr.welfare, 1):
                    yield [res.topology, run_id, t, w, w / res.optimal_welfare]
    return csvio.write_csv(path, ["topology", "run_id", "t", "welfare", "normalized_welfare"], rows(), stamp)


def write_summary(path, results: Sequence[EnsembleResult], stamp: dict):
    header = ["topology", "alpha", "rho", "runs", "mean_convergence_time", "sd", "absorbed_fraction"]
    return csvio.write_csv(path, header, (r.summary_row() for r in results), stamp)


def write_sweep(path, cells: Sequence[SweepCell], stamp: dict):
    rows = ([c.alpha, c.rho, c.mean_convergence_time] for c in cells)
    return csvio.write_csv(path, ["alpha", "rho", "mean_convergence_time"], rows, stamp)


def write_traces(path, traces: Sequence[RunTrace], stamp: dict):
    """One row per round: run id, round, joint action, max estimate error, absorbed flag."""
    def rows():
        for run_id, tr in enumerate(traces):
            errs = tr.max_errors
            for t in range(1, tr.length + 1):
                joint = "-".join(str(int(x)) for x in tr.actions[t - 1])
                absorbed = tr.absorbed_at is not None and t >= tr.absorbed_at
                yield [run_id, t, joint, errs[t - 1], absorbed]
    header = ["run_id", "t", "joint_action", "max_estimate_error", "absorbed"]
    return csvio.write_csv(path, header, rows(), stamp)
