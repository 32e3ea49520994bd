"""Inertial best-response dynamics with pluggable estimators.

One engine (:func:`run_inertial`) drives four learning processes that differ
only in how a player forms the payoff estimate it best-responds to:

* :class:`CentralFP`        exact fading-memory empirical distributions
* :class:`DistributedFP`    per-source leader tracking over a graph
* :class:`CentralJSFP`      exact empirical congestion vector
* :class:`DistributedJSFP`  dynamic average tracking of congestion

Rounds are 1-based in traces (``absorbed_at``) and 0-based in arrays.
Every player draws from its own RNG substream derived from
``(seed, player)``, so each run is a pure function of its inputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from netfp.consensus import (
    CommGraph,
    DSMatrix,
    FPWeightSet,
    build_doubly_stochastic,
    build_fp_weights,
    verify_doubly_stochastic,
    verify_fp_weight_conditions,
)
from netfp.errors import InvalidArgumentError
from netfp.games import (
    CongestionFormGame,
    NormalFormGame,
    argmax_set,
    is_pure_nash,
    to_normal_form,
)

SCALINGS = ("average", "literal")


@dataclass(frozen=True)
class DynamicsConfig:
    rho: float = 0.2
    alpha: float = 0.2
    t_max: int = 10_000
    seed: int = 0
    absorption_window: int = 20
    # stop once the profile has been a NE for absorption_window rounds and
    # every player's estimated best response is exactly its current action
    stop_on_absorption: bool = True
    # congestion tracking uses N(a_{i,t}) instead of N(a_{i,t+1})
    zeta_lag: bool = False
    # "average": estimates track zeta_t / n and are rescaled by n before use;
    # "literal": estimates are used unscaled
    djsfp_scaling: str = "average"
    # run one consensus exchange on the initial congestion estimates
    warm_start: bool = False

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise InvalidArgumentError(f"rho must lie in (0, 1), got {self.rho}")
        if not 0.0 < self.alpha <= 1.0:
            raise InvalidArgumentError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.t_max < 1:
            raise InvalidArgumentError(f"t_max must be >= 1, got {self.t_max}")
        if self.absorption_window < 1:
            raise InvalidArgumentError("absorption_window must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise InvalidArgumentError("seed must be a 64-bit unsigned integer")
        if self.djsfp_scaling not in SCALINGS:
            raise InvalidArgumentError(f"djsfp_scaling must be one of {SCALINGS}")


@dataclass
class RunTrace:
    actions: np.ndarray
    errors: np.ndarray
    seed: int
    absorbed_at: Optional[int] = None
    welfare: Optional[np.ndarray] = None
    conservation: Optional[np.ndarray] = None

    @property
    def length(self) -> int:
        return self.actions.shape[0]

    @property
    def final_profile(self) -> tuple[int, ...]:
        return tuple(int(x) for x in self.actions[-1])

    @property
    def max_errors(self) -> np.ndarray:
        return self.errors.max(axis=1)

    def profile(self, t) -> tuple[int, ...]:
        """Joint action of 1-based round ``t``."""
        return tuple(int(x) for x in self.actions[t - 1])


def player_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Independent per-player generators keyed by ``(seed, player)``."""
    return [
        np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(i,))))
        for i in range(n)
    ]


def inertial_step(rng, rho: float, current: int, br_set) -> int:
    """Keep ``current`` with probability ``rho``, else a uniform best response."""
    br = sorted(br_set)
    if not br:
        raise InvalidArgumentError("best-response set is empty")
    if rng.random() < rho:
        return current
    return br[int(rng.random() * len(br))]


def fp_update_empirical(f, a_new: int, alpha: float) -> np.ndarray:
    """``(1 - alpha) f + alpha * Psi(a_new)``."""
    out = (1.0 - alpha) * np.asarray(f, dtype=float)
    out[a_new] += alpha
    return out


def zeta_update(zeta, own_action, alpha: float) -> np.ndarray:
    """Fading-memory congestion a player induces: ``(1 - alpha) zeta + alpha N(own)``."""
    out = (1.0 - alpha) * np.asarray(zeta, dtype=float)
    for r in set(own_action):
        out[r] += alpha
    return out


def _project(v) -> np.ndarray:
    z = np.floor(v + 0.5)
    # v + 0.5 can round up across an integer; restore z - 1/2 <= v < z + 1/2
    if ((z - 0.5 > v) | (v >= z + 0.5)).any():
        z = np.where(z - 0.5 > v, z - 1.0, z)
        z = np.where(v >= z + 0.5, z + 1.0, z)
    np.maximum(z, 0.0, out=z)
    return z.astype(np.int64)


def project_to_integers(v) -> np.ndarray:
    """Per coordinate, the ``z`` in N with ``z - 1/2 <= v < z + 1/2``.

    Coordinates below -1/2 have no such ``z`` and are clamped to 0.
    """
    v = np.asarray(v, dtype=float)
    if np.any(np.isnan(v)):
        raise InvalidArgumentError("cannot project NaN")
    if np.any(v < -0.5):
        warnings.warn("coordinates below -1/2 clamped to 0", RuntimeWarning, stacklevel=2)
    return _project(v)


# -- estimators ---------------------------------------------------------------

class CentralFP:
    """Every player sees the exact joint empirical distribution."""

    def __init__(self, game: NormalFormGame, alpha: float):
        self.game = game
        self.alpha = alpha

    def reset(self, profile):
        self.f = []
        for i, a_i in enumerate(profile):
            row = np.zeros(self.game.action_counts[i])
            row[a_i] = 1.0
            self.f.append(row)

    def action_values(self, i):
        return self.game.action_values(i, self.f)

    def advance(self, profile):
        self.f = [fp_update_empirical(f, a, self.alpha) for f, a in zip(self.f, profile)]

    def errors(self):
        return np.zeros(self.game.n)

    def bank(self, i):
        return [f.copy() for f in self.f]


class DistributedFP:
    """Each player tracks every other player's empirical distribution.

    ``X[j, i]`` is player ``i``'s estimate of ``f_j``, padded to the largest
    action set.  All sources advance in one batched product
    ``X[j] <- W_j (X[j] + e_j (f_{j,t+1} - f_{j,t}))``.
    """

    def __init__(self, game: NormalFormGame, ws: FPWeightSet, alpha: float, graph: CommGraph):
        if ws.n != game.n or graph.n != game.n:
            raise InvalidArgumentError("game, graph and weights disagree on the player count")
        self.game = game
        self.W = ws.matrices
        self.alpha = alpha
        self.adjacency = graph.adjacency
        self.width = max(game.action_counts)
        self._diag = np.arange(game.n)

    def _psi(self, profile):
        f = np.zeros((self.game.n, self.width))
        f[self._diag, list(profile)] = 1.0
        return f

    def reset(self, profile):
        n = self.game.n
        self.f = self._psi(profile)
        self.X = np.zeros((n, n, self.width))
        for j in range(n):
            w = self.W[j][:, j] * self.adjacency[:, j]
            self.X[j] = w[:, None] * self.f[j][None, :]
        self.X[self._diag, self._diag] = self.f

    def action_values(self, i):
        counts = self.game.action_counts
        est = [self.X[j, i, : counts[j]] for j in range(self.game.n)]
        return self.game.action_values(i, est)

    def advance(self, profile):
        f_new = (1.0 - self.alpha) * self.f
        f_new[self._diag, list(profile)] += self.alpha
        X = self.X.copy()
        X[self._diag, self._diag] += f_new - self.f
        self.X = np.matmul(self.W, X)
        self.X[self._diag, self._diag] = f_new
        self.f = f_new

    def errors(self):
        diff = self.X - self.f[:, None, :]
        return np.sqrt(np.einsum("jia,jia->i", diff, diff))

    def bank(self, i):
        counts = self.game.action_counts
        return [self.X[j, i, : counts[j]].copy() for j in range(self.game.n)]


class CentralJSFP:
    """Every player sees the exact empirical congestion vector."""

    def __init__(self, cgame: CongestionFormGame, alpha: float, zeta_lag: bool = False):
        self.game = cgame
        self.alpha = alpha
        self.zeta_lag = zeta_lag

    def _counts(self, profile):
        return np.stack([self.game.incidence(i)[a] for i, a in enumerate(profile)]).astype(float)

    def reset(self, profile):
        self.zeta = self._counts(profile)
        self.prev = tuple(profile)
        self._proj = None

    def others_all(self):
        """Row ``i``: player ``i``'s view of everyone else's congestion."""
        return self.zeta.sum(axis=0)[None, :] - self.zeta

    def others(self, i):
        return self.others_all()[i]

    def action_values(self, i):
        # one projection per round serves every player
        if self._proj is None:
            self._proj = _project(self.others_all())
        return self.game.congestion_values(i, self._proj[i])

    def advance(self, profile):
        step = self.prev if self.zeta_lag else profile
        self.zeta = (1.0 - self.alpha) * self.zeta + self.alpha * self._counts(step)
        self.prev = tuple(profile)
        self._proj = None

    def errors(self):
        return np.zeros(self.game.n)

    def bank(self, i):
        return self.zeta.sum(axis=0)


class DistributedJSFP(CentralJSFP):
    """Congestion estimates spread by ``zhat <- W (zhat + zeta_{t+1} - zeta_t)``.

    Under a doubly stochastic ``W`` the estimates sum to ``zeta_t`` and each
    converges to ``zeta_t / n``; with ``scaling="average"`` a player's
    estimate of the others' congestion is ``n * zhat_i - zeta_i``.
    """

    def __init__(self, cgame, W: DSMatrix, alpha, graph: CommGraph, scaling="average",
                 warm_start=False, zeta_lag=False):
        super().__init__(cgame, alpha, zeta_lag)
        if W.n != cgame.n or graph.n != cgame.n:
            raise InvalidArgumentError("game, graph and weights disagree on the player count")
        self.W = W.matrix
        self.scale = float(cgame.n) if scaling == "average" else 1.0
        self.warm_start = warm_start

    def reset(self, profile):
        super().reset(profile)
        self.zhat = self.zeta.copy()
        if self.warm_start:
            self.zhat = self.W @ self.zhat

    def others_all(self):
        return self.scale * self.zhat - self.zeta

    def advance(self, profile):
        old = self.zeta
        super().advance(profile)
        self.zhat = self.W @ (self.zhat + self.zeta - old)

    def errors(self):
        diff = self.scale * self.zhat - self.zeta.sum(axis=0)
        return np.sqrt((diff * diff).sum(axis=1))

    def conservation(self):
        return float(np.abs(self.zhat.sum(axis=0) - self.zeta.sum(axis=0)).max())

    def bank(self, i):
        return self.zhat[i].copy()


# -- engine -------------------------------------------------------------------

def _check_profile(game, profile):
    profile = tuple(int(a) for a in profile)
    if len(profile) != game.n or any(not 0 <= a < c for a, c in zip(profile, game.action_counts)):
        raise InvalidArgumentError(f"invalid joint action {profile}")
    return profile


def _settled(game, estimator, profile, ne_cache):
    if profile not in ne_cache:
        ne_cache[profile] = is_pure_nash(game, profile)
    if not ne_cache[profile]:
        return False
    for i, a_i in enumerate(profile):
        br = argmax_set(estimator.action_values(i))
        if len(br) != 1 or br[0] != a_i:
            return False
    return True


def run_inertial(game, estimator, cfg: DynamicsConfig, initial=None, forced_rounds: int = 0) -> RunTrace:
    """Play inertial best-response dynamics against ``estimator``'s beliefs.

    ``initial`` fixes round 1 (otherwise each player draws uniformly from its
    own stream).  The first ``forced_rounds`` rounds replay ``initial``
    without consulting the action rule.
    """
    n = game.n
    counts = game.action_counts
    rngs = player_rngs(cfg.seed, n)
    if initial is None:
        if forced_rounds:
            raise InvalidArgumentError("forced play needs an initial profile")
        a = tuple(int(rng.random() * c) for rng, c in zip(rngs, counts))
    else:
        a = _check_profile(game, initial)
    estimator.reset(a)
    track_conservation = hasattr(estimator, "conservation")

    actions = np.empty((cfg.t_max, n), dtype=np.int64)
    errors = np.empty((cfg.t_max, n))
    conservation = np.empty(cfg.t_max) if track_conservation else None
    actions[0] = a
    errors[0] = estimator.errors()
    if track_conservation:
        conservation[0] = estimator.conservation()

    rho = cfg.rho
    K = cfg.absorption_window
    ne_cache: dict = {}
    run_len = 1
    t = 1
    while t < cfg.t_max:
        if t < forced_rounds:
            nxt = a
        else:
            choice = []
            for i, rng in enumerate(rngs):
                if rng.random() < rho:
                    choice.append(a[i])
                else:
                    br = argmax_set(estimator.action_values(i))
                    choice.append(int(br[int(rng.random() * len(br))]))
            nxt = tuple(choice)
        estimator.advance(nxt)
        actions[t] = nxt
        errors[t] = estimator.errors()
        if track_conservation:
            conservation[t] = estimator.conservation()
        run_len = run_len + 1 if nxt == a else 1
        a = nxt
        t += 1
        if (cfg.stop_on_absorption and t >= forced_rounds and run_len >= K
                and _settled(game, estimator, a, ne_cache)):
            break

    trace = RunTrace(
        actions=actions[:t].copy(),
        errors=errors[:t].copy(),
        seed=cfg.seed,
        conservation=None if conservation is None else conservation[:t].copy(),
    )
    trace.absorbed_at = detect_absorption(trace, game, K)
    return trace


def detect_absorption(trace: RunTrace, game, K: int) -> Optional[int]:
    """First round of a terminal constant suffix of length >= K at a pure NE."""
    acts = trace.actions
    if acts.shape[0] == 0:
        raise InvalidArgumentError("empty trace")
    changed = np.any(acts[1:] != acts[:-1], axis=1)
    idx = np.flatnonzero(changed)
    start = int(idx[-1]) + 1 if idx.size else 0
    if acts.shape[0] - start < K:
        return None
    if not is_pure_nash(game, trace.final_profile):
        return None
    return start + 1


def run_fp_inertia(game: NormalFormGame, cfg: DynamicsConfig, initial=None, forced_rounds=0) -> RunTrace:
    """Centralized fictitious play with fading memory and inertia."""
    return run_inertial(game, CentralFP(game, cfg.alpha), cfg, initial, forced_rounds)


def run_dfp(game: NormalFormGame, graph: CommGraph, ws: FPWeightSet, cfg: DynamicsConfig,
            initial=None, forced_rounds=0) -> RunTrace:
    """Distributed fictitious play with inertia over ``graph``."""
    if ws.n != game.n or graph.n != game.n:
        raise InvalidArgumentError("game, graph and weights disagree on the player count")
    report = verify_fp_weight_conditions(ws, graph)
    if not report.ok:
        raise InvalidArgumentError(f"weights fail {report.failures()[0].name}")
    return run_inertial(game, DistributedFP(game, ws, cfg.alpha, graph), cfg, initial, forced_rounds)


def run_jsfp_central(cgame: CongestionFormGame, cfg: DynamicsConfig, initial=None, forced_rounds=0) -> RunTrace:
    """Joint strategy fictitious play with inertia and exact congestion estimates."""
    est = CentralJSFP(cgame, cfg.alpha, zeta_lag=cfg.zeta_lag)
    return run_inertial(cgame, est, cfg, initial, forced_rounds)


def run_djsfp(cgame: CongestionFormGame, graph: CommGraph, W: DSMatrix, cfg: DynamicsConfig,
              initial=None, forced_rounds=0) -> RunTrace:
    """Distributed joint strategy fictitious play with inertia over ``graph``."""
    if W.n != cgame.n or graph.n != cgame.n:
        raise InvalidArgumentError("game, graph and weights disagree on the player count")
    report = verify_doubly_stochastic(W, graph)
    if not report.ok:
        raise InvalidArgumentError(f"weights fail {report.failures()[0].name}")
    est = DistributedJSFP(cgame, W, cfg.alpha, graph, scaling=cfg.djsfp_scaling,
                          warm_start=cfg.warm_start, zeta_lag=cfg.zeta_lag)
    return run_inertial(cgame, est, cfg, initial, forced_rounds)


def make_estimator(kind: str, game, cfg: DynamicsConfig, graph: Optional[CommGraph] = None):
    """Estimator by name: ``central``, ``dfp`` or ``djsfp``."""
    if kind == "central":
        if isinstance(game, CongestionFormGame):
            return CentralJSFP(game, cfg.alpha, zeta_lag=cfg.zeta_lag)
        return CentralFP(game, cfg.alpha)
    if graph is None:
        raise InvalidArgumentError(f"estimator {kind!r} needs a communication graph")
    if kind == "dfp":
        nf = to_normal_form(game) if isinstance(game, CongestionFormGame) else game
        return DistributedFP(nf, build_fp_weights(graph), cfg.alpha, graph)
    if kind == "djsfp":
        if not isinstance(game, CongestionFormGame):
            raise InvalidArgumentError("djsfp needs a congestion-form game")
        return DistributedJSFP(game, build_doubly_stochastic(graph), cfg.alpha, graph,
                               scaling=cfg.djsfp_scaling, warm_start=cfg.warm_start,
                               zeta_lag=cfg.zeta_lag)
    raise InvalidArgumentError(f"unknown estimator {kind!r}")


def check_condition1(estimator: str, game, graph: Optional[CommGraph], a_star, T: int,
                     cfg: Optional[DynamicsConfig] = None, start=None) -> bool:
    """Force ``a_star`` for ``T`` rounds, then compare estimated and true best responses.

    Play begins at ``start`` (default ``a_star``) and the estimator absorbs
    ``T`` further rounds of ``a_star``.  Returns whether every player's
    estimated argmax equals its argmax against ``a_star_{-i}``.
    """
    cfg = cfg or DynamicsConfig()
    a_star = _check_profile(game, a_star)
    start = a_star if start is None else _check_profile(game, start)
    est = make_estimator(estimator, game, cfg, graph)
    est.reset(start)
    for _ in range(T):
        est.advance(a_star)
    for i in range(game.n):
        estimated = argmax_set(est.action_values(i))
        true = argmax_set(game.deviation_values(i, a_star))
        if not np.array_equal(estimated, true):
            return False
    return True
